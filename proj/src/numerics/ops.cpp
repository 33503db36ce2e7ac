#include "attnlreg/numerics/ops.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

namespace alr {

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ')';
  return os.str();
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::relu;
  if (name == "gelu") return ActivationKind::gelu;
  throw InvalidArgument("unknown activation '" + std::string(name) + "' (expected relu or gelu)");
}

std::string_view to_string(ActivationKind kind) { return kind == ActivationKind::relu ? "relu" : "gelu"; }

namespace {

template <typename T>
bool any_grad(const Tape<T>& t, Var a) {
  return t.needs_grad(a);
}

template <typename T>
bool any_grad(const Tape<T>& t, Var a, Var b) {
  return t.needs_grad(a) || t.needs_grad(b);
}

void require(bool ok, const char* op, const Dims& a, const Dims& b) {
  if (!ok) {
    throw InvalidArgument(std::string(op) + ": incompatible shapes " + dims_to_string(a) + " and " + dims_to_string(b));
  }
}

template <typename T>
void require_finite(const Array<T>& x, const char* op) {
  if (!x.all_finite()) throw InvalidArgument(std::string(op) + ": non-finite input");
}

template <typename T>
void check_maps(const Array<T>& maps, const char* op) {
  if (maps.rank() != 3 || maps.dim(1) != maps.dim(2)) {
    throw InvalidArgument(std::string(op) + ": expected (M x n x n) maps, got " + dims_to_string(maps.dims()));
  }
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const Array<T>& A = t.value(a);
  const Array<T>& B = t.value(b);
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), "matmul", A.dims(), B.dims());
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Array<T> C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = &C[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T{0}) continue;
      const T* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return t.emit(std::move(C), any_grad(t, a, b), [a, b, m, k, n](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    if (tp.needs_grad(a)) {
      const Array<T>& Bv = tp.value(b);
      Array<T>& GA = tp.grad(a);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * Bv[p * n + j];
          GA[i * k + p] += acc;
        }
      }
    }
    if (tp.needs_grad(b)) {
      const Array<T>& Av = tp.value(a);
      Array<T>& GB = tp.grad(b);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T av = Av[i * k + p];
          if (av == T{0}) continue;
          for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += av * G[i * n + j];
        }
      }
    }
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const Array<T>& A = t.value(a);
  const Array<T>& B = t.value(b);
  require(A.dims() == B.dims(), "add", A.dims(), B.dims());
  Array<T> C = A;
  C += B;
  return t.emit(std::move(C), any_grad(t, a, b), [a, b](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    if (tp.needs_grad(a)) tp.grad(a) += G;
    if (tp.needs_grad(b)) tp.grad(b) += G;
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  const Array<T>& A = t.value(a);
  const Array<T>& B = t.value(b);
  require(A.dims() == B.dims(), "sub", A.dims(), B.dims());
  Array<T> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return t.emit(std::move(C), any_grad(t, a, b), [a, b](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    if (tp.needs_grad(a)) tp.grad(a) += G;
    if (tp.needs_grad(b)) {
      Array<T>& GB = tp.grad(b);
      for (std::size_t i = 0; i < G.size(); ++i) GB[i] -= G[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  const Array<T>& A = t.value(a);
  const Array<T>& B = t.value(b);
  require(A.dims() == B.dims(), "mul", A.dims(), B.dims());
  Array<T> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return t.emit(std::move(C), any_grad(t, a, b), [a, b](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    if (tp.needs_grad(a)) {
      const Array<T>& Bv = tp.value(b);
      Array<T>& GA = tp.grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * Bv[i];
    }
    if (tp.needs_grad(b)) {
      const Array<T>& Av = tp.value(a);
      Array<T>& GB = tp.grad(b);
      for (std::size_t i = 0; i < G.size(); ++i) GB[i] += G[i] * Av[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T factor) {
  Array<T> C = t.value(a);
  for (T& v : C.data()) v *= factor;
  return t.emit(std::move(C), any_grad(t, a), [a, factor](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    Array<T>& GA = tp.grad(a);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += factor * G[i];
  });
}

template <typename T>
Var add_bias(Tape<T>& t, Var x, Var bias) {
  const Array<T>& X = t.value(x);
  const Array<T>& Bv = t.value(bias);
  require(Bv.size() == X.cols(), "add_bias", X.dims(), Bv.dims());
  const std::size_t rows = X.rows(), cols = X.cols();
  Array<T> Y = X;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) Y[r * cols + c] += Bv[c];
  }
  return t.emit(std::move(Y), any_grad(t, x, bias), [x, bias, rows, cols](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    if (tp.needs_grad(x)) tp.grad(x) += G;
    if (tp.needs_grad(bias)) {
      Array<T>& GB = tp.grad(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) GB[c] += G[r * cols + c];
      }
    }
  });
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var weight, Var bias) {
  return add_bias(t, matmul(t, x, weight), bias);
}

template <typename T>
Var add_tiled(Tape<T>& t, Var x, Var table) {
  const Array<T>& X = t.value(x);
  const Array<T>& P = t.value(table);
  require(X.rank() == 2 && P.rank() == 2 && X.dim(1) == P.dim(1) && X.dim(0) % P.dim(0) == 0, "add_tiled",
          X.dims(), P.dims());
  const std::size_t period = P.size();
  Array<T> Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += P[i % period];
  return t.emit(std::move(Y), any_grad(t, x, table), [x, table, period](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    if (tp.needs_grad(x)) tp.grad(x) += G;
    if (tp.needs_grad(table)) {
      Array<T>& GP = tp.grad(table);
      for (std::size_t i = 0; i < G.size(); ++i) GP[i % period] += G[i];
    }
  });
}

template <typename T>
Var affine_rows(Tape<T>& t, Var x, const Array<T>& scale_by, const Array<T>& shift_by) {
  const Array<T>& X = t.value(x);
  require(scale_by.size() == X.rows() && shift_by.size() == X.rows(), "affine_rows", X.dims(), scale_by.dims());
  const std::size_t cols = X.cols();
  Array<T> Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = Y[i] * scale_by[i / cols] + shift_by[i / cols];
  return t.emit(std::move(Y), any_grad(t, x), [x, scale_by, cols](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    Array<T>& GX = tp.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i] * scale_by[i / cols];
  });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  const Array<T>& X = t.value(x);
  require_finite(X, "relu");
  Array<T> Y = X;
  for (T& v : Y.data()) v = v > T{0} ? v : T{0};
  return t.emit(std::move(Y), any_grad(t, x), [x](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    const Array<T>& Xv = tp.value(x);
    Array<T>& GX = tp.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (Xv[i] > T{0}) GX[i] += G[i];
    }
  });
}

template <typename T>
Var gelu(Tape<T>& t, Var x) {
  const Array<T>& X = t.value(x);
  require_finite(X, "gelu");
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Array<T> Y = X;
  for (T& v : Y.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return t.emit(std::move(Y), any_grad(t, x), [x, inv_sqrt2](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    const Array<T>& Xv = tp.value(x);
    Array<T>& GX = tp.grad(x);
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < G.size(); ++i) {
      const T v = Xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      GX[i] += G[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var activation(Tape<T>& t, Var x, ActivationKind kind) {
  return kind == ActivationKind::relu ? relu(t, x) : gelu(t, x);
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  Array<T> Y = t.value(x);
  for (T& v : Y.data()) v = T(1) / (T(1) + std::exp(-v));
  return t.emit(std::move(Y), any_grad(t, x), [x](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    const Array<T>& Yv = tp.value(self);
    Array<T>& GX = tp.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i] * Yv[i] * (T(1) - Yv[i]);
  });
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps) {
  const Array<T>& X = t.value(x);
  const Array<T>& Gm = t.value(gamma);
  const Array<T>& Bt = t.value(beta);
  require(Gm.size() == X.cols() && Bt.size() == X.cols(), "layer_norm", X.dims(), Gm.dims());
  const std::size_t rows = X.rows(), cols = X.cols();
  Array<T> Y(X.dims());
  // Per-row standardized values and inverse deviations, kept for backward.
  Array<T> xhat(X.dims());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = &X[r * cols];
    T mu{0};
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= T(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(cols);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (row[c] - mu) * inv_std[r];
      xhat[r * cols + c] = h;
      Y[r * cols + c] = Gm[c] * h + Bt[c];
    }
  }
  const bool needs = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
  return t.emit(std::move(Y), needs,
                [x, gamma, beta, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tp,
                                                                                                  Var self) {
                  const Array<T>& G = tp.grad(self);
                  const Array<T>& Gm = tp.value(gamma);
                  if (tp.needs_grad(gamma) || tp.needs_grad(beta)) {
                    Array<T>* GG = tp.needs_grad(gamma) ? &tp.grad(gamma) : nullptr;
                    Array<T>* GBt = tp.needs_grad(beta) ? &tp.grad(beta) : nullptr;
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) {
                        const std::size_t i = r * cols + c;
                        if (GG) (*GG)[c] += G[i] * xhat[i];
                        if (GBt) (*GBt)[c] += G[i];
                      }
                    }
                  }
                  if (tp.needs_grad(x)) {
                    Array<T>& GX = tp.grad(x);
                    std::vector<T> dh(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      T mean_dh{0}, mean_dh_h{0};
                      for (std::size_t c = 0; c < cols; ++c) {
                        const std::size_t i = r * cols + c;
                        dh[c] = G[i] * Gm[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * xhat[i];
                      }
                      mean_dh /= T(cols);
                      mean_dh_h /= T(cols);
                      for (std::size_t c = 0; c < cols; ++c) {
                        const std::size_t i = r * cols + c;
                        GX[i] += inv_std[r] * (dh[c] - mean_dh - xhat[i] * mean_dh_h);
                      }
                    }
                  }
                });
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var x) {
  const Array<T>& X = t.value(x);
  require_finite(X, "softmax_rows");
  const std::size_t rows = X.rows(), cols = X.cols();
  Array<T> Y(X.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = &X[r * cols];
    T* out = &Y[r * cols];
    T peak = in[0];
    for (std::size_t c = 1; c < cols; ++c) peak = std::max(peak, in[c]);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) {
      out[c] = std::exp(in[c] - peak);
      total += out[c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[c] /= total;
  }
  return t.emit(std::move(Y), any_grad(t, x), [x, rows, cols](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    const Array<T>& Yv = tp.value(self);
    Array<T>& GX = tp.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t c = 0; c < cols; ++c) dot += G[r * cols + c] * Yv[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        GX[i] += Yv[i] * (G[i] - dot);
      }
    }
  });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
  const Array<T>& X = t.value(x);
  T total{0};
  for (T v : X.data()) total += v;
  return t.emit(Array<T>({1}, {total}), any_grad(t, x), [x](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)[0];
    for (T& v : tp.grad(x).data()) v += g;
  });
}

template <typename T>
Var mean(Tape<T>& t, Var x) {
  const T n = T(t.value(x).size());
  return scale(t, sum(t, x), T(1) / n);
}

template <typename T>
Var sum_abs(Tape<T>& t, Var x) {
  const Array<T>& X = t.value(x);
  T total{0};
  for (T v : X.data()) total += std::abs(v);
  return t.emit(Array<T>({1}, {total}), any_grad(t, x), [x](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)[0];
    const Array<T>& Xv = tp.value(x);
    Array<T>& GX = tp.grad(x);
    for (std::size_t i = 0; i < Xv.size(); ++i) {
      const T v = Xv[i];
      GX[i] += v > T{0} ? g : (v < T{0} ? -g : T{0});
    }
  });
}

template <typename T>
Var mse(Tape<T>& t, Var pred, Var truth) {
  const Array<T>& P = t.value(pred);
  const Array<T>& Y = t.value(truth);
  require(P.dims() == Y.dims(), "mse", P.dims(), Y.dims());
  T total{0};
  for (std::size_t i = 0; i < P.size(); ++i) total += (P[i] - Y[i]) * (P[i] - Y[i]);
  const T n = T(P.size());
  return t.emit(Array<T>({1}, {total / n}), any_grad(t, pred, truth), [pred, truth, n](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)[0] * T(2) / n;
    const Array<T>& Pv = tp.value(pred);
    const Array<T>& Yv = tp.value(truth);
    if (tp.needs_grad(pred)) {
      Array<T>& GP = tp.grad(pred);
      for (std::size_t i = 0; i < Pv.size(); ++i) GP[i] += g * (Pv[i] - Yv[i]);
    }
    if (tp.needs_grad(truth)) {
      Array<T>& GY = tp.grad(truth);
      for (std::size_t i = 0; i < Pv.size(); ++i) GY[i] -= g * (Pv[i] - Yv[i]);
    }
  });
}

template <typename T>
Var reshape(Tape<T>& t, Var x, Dims dims) {
  Array<T> Y = t.value(x).reshaped(std::move(dims));
  return t.emit(std::move(Y), any_grad(t, x), [x](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    Array<T>& GX = tp.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i];
  });
}

template <typename T>
Var attention_scores(Tape<T>& t, Var q, Var k, std::size_t groups, std::size_t heads, T scale_by) {
  const Array<T>& Q = t.value(q);
  const Array<T>& K = t.value(k);
  require(Q.rank() == 2 && Q.dims() == K.dims() && groups > 0 && heads > 0 && Q.dim(0) % groups == 0 &&
              Q.dim(1) % heads == 0,
          "attention_scores", Q.dims(), K.dims());
  const std::size_t n = Q.dim(0) / groups, width = Q.dim(1), dh = width / heads;
  Array<T> S({groups * heads, n, n});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* map = &S[(g * heads + h) * n * n];
      for (std::size_t p = 0; p < n; ++p) {
        const T* qrow = &Q[(g * n + p) * width + h * dh];
        for (std::size_t r = 0; r < n; ++r) {
          const T* krow = &K[(g * n + r) * width + h * dh];
          T acc{0};
          for (std::size_t d = 0; d < dh; ++d) acc += qrow[d] * krow[d];
          map[p * n + r] = acc * scale_by;
        }
      }
    }
  }
  return t.emit(std::move(S), any_grad(t, q, k), [q, k, groups, heads, n, width, dh, scale_by](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    const Array<T>& Qv = tp.value(q);
    const Array<T>& Kv = tp.value(k);
    Array<T>* GQ = tp.needs_grad(q) ? &tp.grad(q) : nullptr;
    Array<T>* GK = tp.needs_grad(k) ? &tp.grad(k) : nullptr;
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t h = 0; h < heads; ++h) {
        const T* gmap = &G[(g * heads + h) * n * n];
        for (std::size_t p = 0; p < n; ++p) {
          for (std::size_t r = 0; r < n; ++r) {
            const T coef = gmap[p * n + r] * scale_by;
            if (coef == T{0}) continue;
            const std::size_t qi = (g * n + p) * width + h * dh;
            const std::size_t ki = (g * n + r) * width + h * dh;
            for (std::size_t d = 0; d < dh; ++d) {
              if (GQ) (*GQ)[qi + d] += coef * Kv[ki + d];
              if (GK) (*GK)[ki + d] += coef * Qv[qi + d];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var attention_context(Tape<T>& t, Var maps, Var v, std::size_t groups, std::size_t heads) {
  const Array<T>& A = t.value(maps);
  const Array<T>& V = t.value(v);
  check_maps(A, "attention_context");
  const std::size_t n = A.dim(1);
  require(A.dim(0) == groups * heads && V.rank() == 2 && V.dim(0) == groups * n && V.dim(1) % heads == 0,
          "attention_context", A.dims(), V.dims());
  const std::size_t width = V.dim(1), dh = width / heads;
  Array<T> C({groups * n, width});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T* map = &A[(g * heads + h) * n * n];
      for (std::size_t p = 0; p < n; ++p) {
        T* crow = &C[(g * n + p) * width + h * dh];
        for (std::size_t r = 0; r < n; ++r) {
          const T w = map[p * n + r];
          if (w == T{0}) continue;
          const T* vrow = &V[(g * n + r) * width + h * dh];
          for (std::size_t d = 0; d < dh; ++d) crow[d] += w * vrow[d];
        }
      }
    }
  }
  return t.emit(std::move(C), any_grad(t, maps, v), [maps, v, groups, heads, n, width, dh](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    const Array<T>& Av = tp.value(maps);
    const Array<T>& Vv = tp.value(v);
    Array<T>* GA = tp.needs_grad(maps) ? &tp.grad(maps) : nullptr;
    Array<T>* GV = tp.needs_grad(v) ? &tp.grad(v) : nullptr;
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t base = (g * heads + h) * n * n;
        for (std::size_t p = 0; p < n; ++p) {
          const T* grow = &G[(g * n + p) * width + h * dh];
          for (std::size_t r = 0; r < n; ++r) {
            const std::size_t vi = (g * n + r) * width + h * dh;
            if (GA) {
              T acc{0};
              for (std::size_t d = 0; d < dh; ++d) acc += grow[d] * Vv[vi + d];
              (*GA)[base + p * n + r] += acc;
            }
            if (GV) {
              const T w = Av[base + p * n + r];
              for (std::size_t d = 0; d < dh; ++d) (*GV)[vi + d] += w * grow[d];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var modulate_maps(Tape<T>& t, Var maps, Var gate) {
  const Array<T>& A = t.value(maps);
  const Array<T>& M = t.value(gate);
  check_maps(A, "modulate_maps");
  const std::size_t n = A.dim(1);
  require(M.rank() == 2 && M.dim(0) == n && M.dim(1) == n, "modulate_maps", A.dims(), M.dims());
  const std::size_t area = n * n;
  Array<T> Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= M[i % area];
  return t.emit(std::move(Y), any_grad(t, maps, gate), [maps, gate, area](Tape<T>& tp, Var self) {
    const Array<T>& G = tp.grad(self);
    const Array<T>& Av = tp.value(maps);
    const Array<T>& Mv = tp.value(gate);
    if (tp.needs_grad(maps)) {
      Array<T>& GA = tp.grad(maps);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * Mv[i % area];
    }
    if (tp.needs_grad(gate)) {
      Array<T>& GM = tp.grad(gate);
      for (std::size_t i = 0; i < G.size(); ++i) GM[i % area] += G[i] * Av[i];
    }
  });
}

template <typename T>
Var offpeak_mass(Tape<T>& t, Var maps) {
  const Array<T>& A = t.value(maps);
  const std::size_t rows = A.rows(), cols = A.cols();
  std::vector<std::size_t> peak(rows);
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (A[r * cols + c] > A[r * cols + best]) best = c;
    }
    peak[r] = best;
    for (std::size_t c = 0; c < cols; ++c) {
      if (c != best) total += A[r * cols + c];
    }
  }
  return t.emit(Array<T>({1}, {total}), any_grad(t, maps), [maps, cols, peak = std::move(peak)](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)[0];
    Array<T>& GA = tp.grad(maps);
    for (std::size_t r = 0; r < peak.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        if (c != peak[r]) GA[r * cols + c] += g;
      }
    }
  });
}

#define ALR_INSTANTIATE_OPS(T)                                                                     \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                      \
  template Var add<T>(Tape<T>&, Var, Var);                                                         \
  template Var sub<T>(Tape<T>&, Var, Var);                                                         \
  template Var mul<T>(Tape<T>&, Var, Var);                                                         \
  template Var scale<T>(Tape<T>&, Var, T);                                                         \
  template Var add_bias<T>(Tape<T>&, Var, Var);                                                    \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                                 \
  template Var add_tiled<T>(Tape<T>&, Var, Var);                                                   \
  template Var affine_rows<T>(Tape<T>&, Var, const Array<T>&, const Array<T>&);                    \
  template Var relu<T>(Tape<T>&, Var);                                                             \
  template Var gelu<T>(Tape<T>&, Var);                                                             \
  template Var activation<T>(Tape<T>&, Var, ActivationKind);                                       \
  template Var sigmoid<T>(Tape<T>&, Var);                                                          \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                          \
  template Var softmax_rows<T>(Tape<T>&, Var);                                                     \
  template Var sum<T>(Tape<T>&, Var);                                                              \
  template Var mean<T>(Tape<T>&, Var);                                                             \
  template Var sum_abs<T>(Tape<T>&, Var);                                                          \
  template Var mse<T>(Tape<T>&, Var, Var);                                                         \
  template Var reshape<T>(Tape<T>&, Var, Dims);                                                    \
  template Var attention_scores<T>(Tape<T>&, Var, Var, std::size_t, std::size_t, T);               \
  template Var attention_context<T>(Tape<T>&, Var, Var, std::size_t, std::size_t);                 \
  template Var modulate_maps<T>(Tape<T>&, Var, Var);                                               \
  template Var offpeak_mass<T>(Tape<T>&, Var);

ALR_INSTANTIATE_OPS(float)
ALR_INSTANTIATE_OPS(double)

#undef ALR_INSTANTIATE_OPS

}  // namespace alr
