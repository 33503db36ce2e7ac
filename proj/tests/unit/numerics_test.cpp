#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "attnlreg/numerics/adam.hpp"
#include "attnlreg/numerics/ops.hpp"
#include "attnlreg/numerics/rng.hpp"

namespace alr {
namespace {

Array<double> random_array(Dims dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array<double> a(std::move(dims));
  for (auto& v : a.storage()) v = rng.uniform(lo, hi);
  return a;
}

// Central difference of a scalar function of one input array.
template <typename F>
Array<double> numeric_gradient(const Array<double>& x, F&& f, double h = 1e-6) {
  Array<double> g = Array<double>::zeros_like(x);
  Array<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

template <typename Build>
void expect_gradient_matches(const Array<double>& x, Build&& build, double tol = 1e-6) {
  Parameter<double> p("x", x);
  Tape<double> tape;
  tape.backward(build(tape, tape.leaf(p)));
  const Array<double> numeric = numeric_gradient(x, [&](const Array<double>& probe) {
    Parameter<double> q("x", probe);
    Tape<double> t(false);
    return t.value(build(t, t.leaf(static_cast<const Parameter<double>&>(q))))[0];
  });
  EXPECT_LT(max_abs_diff(p.grad, numeric), tol);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape<double> t;
  const Var eye = t.constant(Array<double>({2, 2}, {1, 0, 0, 1}));
  const Var b = t.constant(Array<double>({2, 2}, {3, 4, 5, 6}));
  EXPECT_EQ(t.value(matmul(t, eye, b)).storage(), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  Tape<double> t;
  const Var r = matmul(t, t.constant(Array<double>({1, 2}, {1, 2})), t.constant(Array<double>({2, 1}, {3, 4})));
  EXPECT_EQ(t.value(r).dims(), (Dims{1, 1}));
  EXPECT_EQ(t.value(r)[0], 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  const Array<float> a = cast<float>(random_array({4, 5}, rng));
  const Array<float> b = cast<float>(random_array({5, 3}, rng));
  Tape<float> t;
  const Array<float>& c = t.value(matmul(t, t.constant(a), t.constant(b)));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0;
      for (std::size_t k = 0; k < 5; ++k) ref += double(a.at(i, k)) * b.at(k, j);
      EXPECT_LT(std::abs(c.at(i, j) - ref), 1e-6);
    }
  }
}

TEST(Matmul, RejectsInnerMismatch) {
  Tape<double> t;
  EXPECT_THROW(matmul(t, t.constant(Array<double>({2, 3})), t.constant(Array<double>({2, 3}))), InvalidArgument);
}

TEST(Softmax, KnownRows) {
  Tape<double> t;
  const Var s = softmax_rows(t, t.constant(Array<double>({3, 2}, {0, 0, -20, 0, 5, 5})));
  const auto& v = t.value(s);
  EXPECT_DOUBLE_EQ(v.at(0, 0), 0.5);
  const double tiny = std::exp(-20.0) / (1 + std::exp(-20.0));
  EXPECT_NEAR(v.at(1, 0), tiny, 1e-15);
  EXPECT_NEAR(v.at(1, 1), 1 - tiny, 1e-15);
  EXPECT_DOUBLE_EQ(v.at(2, 1), 0.5);
}

TEST(Softmax, ShiftInvariantForConstantRows) {
  for (double c : {-1e4, -3.0, 0.0, 17.5, 1e4}) {
    Tape<double> t;
    const auto& v = t.value(softmax_rows(t, t.constant(Array<double>({1, 4}, c))));
    for (double e : v.storage()) EXPECT_DOUBLE_EQ(e, 0.25);
  }
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(3);
  Tape<float> t;
  const auto& v = t.value(softmax_rows(t, t.constant(cast<float>(random_array({20, 9}, rng, -30, 30)))));
  for (std::size_t r = 0; r < 20; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 9; ++c) s += v.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, RejectsNonFinite) {
  Tape<double> t;
  EXPECT_THROW(softmax_rows(t, t.constant(Array<double>({1, 2}, {0, NAN}))), InvalidArgument);
  EXPECT_THROW(softmax_rows(t, t.constant(Array<double>({1, 2}, {INFINITY, 0}))), InvalidArgument);
}

TEST(LayerNorm, ConstantRowGoesToZero) {
  Tape<double> t;
  const Var g = t.constant(Array<double>({3}, 1.0));
  const Var b = t.constant(Array<double>({3}, 0.0));
  const auto& v = t.value(layer_norm(t, t.constant(Array<double>({1, 3}, 4.2)), g, b));
  for (double e : v.storage()) EXPECT_EQ(e, 0.0);
}

TEST(LayerNorm, StandardizedRowIsNearlyUnchanged) {
  Tape<double> t;
  const Var g = t.constant(Array<double>({2}, 1.0));
  const Var b = t.constant(Array<double>({2}, 0.0));
  const auto& v = t.value(layer_norm(t, t.constant(Array<double>({1, 2}, {1, -1})), g, b));
  EXPECT_NEAR(v[0], 1.0, 1e-4);
  EXPECT_NEAR(v[1], -1.0, 1e-4);
}

TEST(LayerNorm, GradientMatchesFiniteDifferenceInFloat) {
  Rng rng(11);
  Parameter<float> x("x", cast<float>(random_array({3, 6}, rng)));
  Parameter<float> gamma("g", cast<float>(random_array({6}, rng, 0.5, 1.5)));
  Parameter<float> beta("b", cast<float>(random_array({6}, rng)));
  const Array<float> w = cast<float>(random_array({3, 6}, rng));
  auto build = [&](Tape<float>& t, Var xv, Var gv, Var bv) {
    return sum(t, mul(t, layer_norm(t, xv, gv, bv), t.constant(w)));
  };
  Tape<float> tape;
  tape.backward(build(tape, tape.leaf(x), tape.leaf(gamma), tape.leaf(beta)));
  for (Parameter<float>* p : {&x, &gamma, &beta}) {
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const float saved = p->value[i];
      auto eval = [&](float v) {
        p->value[i] = v;
        Tape<float> t(false);
        const float out = t.value(build(t, t.leaf(std::as_const(x)), t.leaf(std::as_const(gamma)),
                                        t.leaf(std::as_const(beta))))[0];
        p->value[i] = saved;
        return double(out);
      };
      const double numeric = (eval(saved + 1e-3f) - eval(saved - 1e-3f)) / 2e-3;
      diff2 += std::pow(p->grad[i] - numeric, 2);
      a2 += std::pow(p->grad[i], 2);
      n2 += numeric * numeric;
    }
    EXPECT_LT(std::sqrt(diff2) / (std::sqrt(a2) + std::sqrt(n2) + 1e-12), 1e-2) << p->name;
  }
}

TEST(Activation, Relu) {
  Tape<double> t;
  const auto& v = t.value(relu(t, t.constant(Array<double>({3}, {-1, 0, 2}))));
  EXPECT_EQ(v.storage(), (std::vector<double>{0, 0, 2}));
}

TEST(Activation, GeluFixedPointAndParsing) {
  Tape<double> t;
  EXPECT_EQ(t.value(gelu(t, t.constant(Array<double>({1}, 0.0))))[0], 0.0);
  EXPECT_NEAR(t.value(gelu(t, t.constant(Array<double>({1}, 1.0))))[0], 0.8413447460685429, 1e-12);
  EXPECT_EQ(parse_activation("gelu"), ActivationKind::gelu);
  EXPECT_EQ(parse_activation("relu"), ActivationKind::relu);
  EXPECT_THROW(parse_activation("tanh"), InvalidArgument);
}

TEST(Activation, ReluGradient) {
  Parameter<double> x("x", Array<double>({2}, {-1, 2}));
  Tape<double> t;
  t.backward(sum(t, relu(t, t.leaf(x))));
  EXPECT_EQ(x.grad.storage(), (std::vector<double>{0, 1}));
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Rng rng(5);
  Parameter<double> x("x", random_array({4, 5}, rng, -3, 3));
  Tape<double> t;
  t.backward(sum(t, softmax_rows(t, t.leaf(x))));
  for (double g : x.grad.storage()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(Backward, SumAbsUsesZeroSubgradient) {
  Parameter<double> x("x", Array<double>({3}, {-2, 0, 3}));
  Tape<double> t;
  const Var s = sum_abs(t, t.leaf(x));
  EXPECT_EQ(t.value(s)[0], 5.0);
  t.backward(s);
  EXPECT_EQ(x.grad.storage(), (std::vector<double>{-1, 0, 1}));
}

TEST(Backward, AccumulatesAcrossCallsUntilZeroGrad) {
  Parameter<double> x("x", Array<double>({2}, {1, 2}));
  Tape<double> t;
  const Var s = sum(t, mul(t, t.leaf(x), t.leaf(x)));
  t.backward(s);
  t.backward(s);
  EXPECT_EQ(x.grad.storage(), (std::vector<double>{4, 8}));
  x.zero_grad();
  EXPECT_EQ(x.grad.storage(), (std::vector<double>{0, 0}));
}

TEST(Backward, IsLinearInTheSeed) {
  Rng rng(9);
  Parameter<double> x("x", random_array({3, 4}, rng));
  auto grad_for = [&](double seed) {
    x.zero_grad();
    Tape<double> t;
    t.backward(sum(t, gelu(t, t.leaf(x))), seed);
    return x.grad;
  };
  const Array<double> g1 = grad_for(1.0);
  const Array<double> g3 = grad_for(3.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(3 * g1[i], g3[i], 1e-12);
}

TEST(Backward, ErrorsOnMisuse) {
  Tape<double> empty;
  EXPECT_THROW(empty.backward(Var{}), StateError);
  Tape<double> inference(false);
  const Var c = inference.constant(Array<double>({1}, 1.0));
  EXPECT_THROW(inference.backward(c), StateError);
  Tape<double> t;
  const Var v = t.constant(Array<double>({2}, 1.0));
  EXPECT_THROW(t.backward(v), InvalidArgument);
}

TEST(OpGradients, MatchFiniteDifferencesInDouble) {
  Rng rng(21);
  const Array<double> w = random_array({4, 3}, rng);
  const Array<double> bias = random_array({3}, rng);
  const Array<double> probe = random_array({2, 3}, rng);
  const Array<double> x = random_array({2, 4}, rng);

  expect_gradient_matches(x, [&](auto& t, Var v) {
    return sum(t, mul(t, linear(t, v, t.constant(w), t.constant(bias)), t.constant(probe)));
  });
  expect_gradient_matches(w, [&](auto& t, Var v) {
    return sum(t, mul(t, linear(t, t.constant(x), v, t.constant(bias)), t.constant(probe)));
  });
  expect_gradient_matches(random_array({2, 3}, rng), [&](auto& t, Var v) {
    return sum(t, mul(t, sigmoid(t, v), t.constant(probe)));
  });
  expect_gradient_matches(random_array({2, 3}, rng), [&](auto& t, Var v) {
    return sum(t, mul(t, gelu(t, v), t.constant(probe)));
  });
  expect_gradient_matches(random_array({2, 3}, rng), [&](auto& t, Var v) {
    return sum(t, mul(t, softmax_rows(t, v), t.constant(probe)));
  });
  expect_gradient_matches(random_array({2, 3}, rng), [&](auto& t, Var v) {
    return mse(t, v, t.constant(probe));
  });
  expect_gradient_matches(random_array({2, 3}, rng), [&](auto& t, Var v) {
    return mean(t, mul(t, reshape(t, v, Dims{3, 2}), t.constant(probe.reshaped({3, 2}))));
  });
}

TEST(OpGradients, AttentionScoresAndContext) {
  Rng rng(23);
  const std::size_t groups = 2, heads = 2, n = 3, d = 4;
  const Array<double> q = random_array({groups * n, d}, rng);
  const Array<double> k = random_array({groups * n, d}, rng);
  const Array<double> v = random_array({groups * n, d}, rng);
  const Array<double> probe_maps = random_array({groups * heads, n, n}, rng);
  const Array<double> probe_ctx = random_array({groups * n, d}, rng);
  const double s = 1 / std::sqrt(2.0);

  expect_gradient_matches(q, [&](auto& t, Var x) {
    return sum(t, mul(t, attention_scores(t, x, t.constant(k), groups, heads, s), t.constant(probe_maps)));
  });
  expect_gradient_matches(k, [&](auto& t, Var x) {
    return sum(t, mul(t, attention_scores(t, t.constant(q), x, groups, heads, s), t.constant(probe_maps)));
  });
  expect_gradient_matches(probe_maps, [&](auto& t, Var x) {
    return sum(t, mul(t, attention_context(t, x, t.constant(v), groups, heads), t.constant(probe_ctx)));
  });
  expect_gradient_matches(v, [&](auto& t, Var x) {
    return sum(t, mul(t, attention_context(t, t.constant(probe_maps), x, groups, heads), t.constant(probe_ctx)));
  });
}

TEST(AttentionScores, HeadsUseTheirOwnColumnBlocks) {
  // Two tokens, D=2, two heads of width 1.
  Tape<double> t;
  const Var q = t.constant(Array<double>({2, 2}, {1, 2, 3, 4}));
  const auto& s = t.value(attention_scores(t, q, q, 1, 2, 1.0));
  EXPECT_EQ(s.dims(), (Dims{2, 2, 2}));
  EXPECT_EQ(s.at(0, 0, 1), 3.0);   // head 0: 1*3
  EXPECT_EQ(s.at(1, 0, 1), 8.0);   // head 1: 2*4
  EXPECT_EQ(s.at(1, 1, 1), 16.0);  // head 1: 4*4
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  Parameter<float> p("w", Array<float>({3}, {1, -2, 3}));
  std::vector<Parameter<float>*> ptrs{&p};
  auto states = make_adam_states<float>(ptrs, {});
  for (int i = 0; i < 5; ++i) adam_step<float>(ptrs, states);
  EXPECT_EQ(p.value.storage(), (std::vector<float>{1, -2, 3}));
}

TEST(Adam, BiasCorrectedFirstStepHasMagnitudeLr) {
  Parameter<double> p("w", Array<double>({1}, 0.5));
  p.grad[0] = 1.0;
  std::vector<Parameter<double>*> ptrs{&p};
  AdamSettings settings;
  settings.lr = 0.1;
  auto states = make_adam_states<double>(ptrs, settings);
  adam_step<double>(ptrs, states);
  EXPECT_NEAR(p.value[0], 0.4, 1e-6);
}

TEST(Adam, ConvergesOnQuadratic) {
  Parameter<double> w("w", Array<double>({1}, 0.0));
  std::vector<Parameter<double>*> ptrs{&w};
  AdamSettings settings;
  settings.lr = 0.1;
  auto states = make_adam_states<double>(ptrs, settings);
  for (int step = 0; step < 100; ++step) {
    w.zero_grad();
    Tape<double> t;
    const Var d = sub(t, t.leaf(w), t.constant(Array<double>({1}, 3.0)));
    t.backward(sum(t, mul(t, d, d)));
    adam_step<double>(ptrs, states);
  }
  EXPECT_LT(std::abs(w.value[0] - 3.0), 0.1);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    differs |= u != c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(a.below(7), 7u);
    b.below(7);
    c.below(7);
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, NormalMoments) {
  Rng rng(1);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

}  // namespace
}  // namespace alr
