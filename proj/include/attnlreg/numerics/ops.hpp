#pragma once

#include <cstddef>
#include <string_view>

#include "attnlreg/numerics/array.hpp"
#include "attnlreg/numerics/tape.hpp"

namespace alr {

enum class ActivationKind { relu, gelu };

ActivationKind parse_activation(std::string_view name);
std::string_view to_string(ActivationKind kind);

// Differentiable ops over a Tape. Every op validates shapes and throws
// InvalidArgument on mismatch. "rows" means every axis but the last.

template <typename T> Var matmul(Tape<T>& t, Var a, Var b);
template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var sub(Tape<T>& t, Var a, Var b);
template <typename T> Var mul(Tape<T>& t, Var a, Var b);
template <typename T> Var scale(Tape<T>& t, Var a, T factor);

// x (R x C) + bias (C) broadcast over rows.
template <typename T> Var add_bias(Tape<T>& t, Var x, Var bias);
// x W + b for x (R x in), W (in x out), b (out).
template <typename T> Var linear(Tape<T>& t, Var x, Var weight, Var bias);
// x (G*P x C) + table (P x C), the table repeated over the G groups.
template <typename T> Var add_tiled(Tape<T>& t, Var x, Var table);
// Row r of x scaled by scale[r] and shifted by shift[r] (constants).
template <typename T> Var affine_rows(Tape<T>& t, Var x, const Array<T>& scale, const Array<T>& shift);

template <typename T> Var relu(Tape<T>& t, Var x);
template <typename T> Var gelu(Tape<T>& t, Var x);
template <typename T> Var activation(Tape<T>& t, Var x, ActivationKind kind);
template <typename T> Var sigmoid(Tape<T>& t, Var x);

// Standardize each row, then gamma * xhat + beta. gamma/beta have length C.
template <typename T> Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-5));
// Max-subtracted softmax along the last axis. Rejects non-finite input.
template <typename T> Var softmax_rows(Tape<T>& t, Var x);

template <typename T> Var sum(Tape<T>& t, Var x);
template <typename T> Var mean(Tape<T>& t, Var x);
// Sum of |x|; subgradient 0 at 0.
template <typename T> Var sum_abs(Tape<T>& t, Var x);
// Mean of squared differences over all entries.
template <typename T> Var mse(Tape<T>& t, Var pred, Var truth);
template <typename T> Var reshape(Tape<T>& t, Var x, Dims dims);

// Scaled dot-product scores per (group, head): q, k are (groups*n x D) with
// heads occupying contiguous D/heads column blocks. Output is
// (groups*heads x n x n), map index = group*heads + head.
template <typename T>
Var attention_scores(Tape<T>& t, Var q, Var k, std::size_t groups, std::size_t heads, T scale);
// Inverse layout of attention_scores: maps (groups*heads x n x n) times
// v (groups*n x D), heads re-concatenated along columns.
template <typename T>
Var attention_context(Tape<T>& t, Var maps, Var v, std::size_t groups, std::size_t heads);
// maps (M x n x n) multiplied element-wise by gate (n x n) for every map.
template <typename T> Var modulate_maps(Tape<T>& t, Var maps, Var gate);
// Sum of every entry of each row except that row's maximum.
template <typename T> Var offpeak_mass(Tape<T>& t, Var maps);

}  // namespace alr
