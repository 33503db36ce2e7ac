#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "attnlreg/numerics/tape.hpp"

namespace alr {

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  Array<T> m;
  Array<T> v;
  std::uint64_t step_count = 0;
  AdamSettings settings;

  AdamState() = default;
  AdamState(const Parameter<T>& p, AdamSettings s)
      : m(Array<T>::zeros_like(p.value)), v(Array<T>::zeros_like(p.value)), settings(s) {}
};

// One bias-corrected Adam update per parameter. `params` and `states` are
// parallel sequences.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<AdamState<T>> states);

template <typename T>
std::vector<AdamState<T>> make_adam_states(std::span<Parameter<T>* const> params, AdamSettings settings);

}  // namespace alr
