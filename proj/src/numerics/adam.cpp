#include "attnlreg/numerics/adam.hpp"

#include <cmath>

namespace alr {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<AdamState<T>> states) {
  if (params.size() != states.size()) throw InvalidArgument("adam_step: parameter and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    AdamState<T>& s = states[i];
    if (s.m.dims() != p.value.dims()) throw InvalidArgument("adam_step: state dims differ for " + p.name);
    const AdamSettings& cfg = s.settings;
    ++s.step_count;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step_count));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step_count));
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      s.m[j] = b1 * s.m[j] + (T(1) - b1) * g;
      s.v[j] = b2 * s.v[j] + (T(1) - b2) * g * g;
      const double m_hat = static_cast<double>(s.m[j]) / c1;
      const double v_hat = static_cast<double>(s.v[j]) / c2;
      p.value[j] -= T(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

template <typename T>
std::vector<AdamState<T>> make_adam_states(std::span<Parameter<T>* const> params, AdamSettings settings) {
  std::vector<AdamState<T>> states;
  states.reserve(params.size());
  for (const Parameter<T>* p : params) states.emplace_back(*p, settings);
  return states;
}

template void adam_step<float>(std::span<Parameter<float>* const>, std::span<AdamState<float>>);
template void adam_step<double>(std::span<Parameter<double>* const>, std::span<AdamState<double>>);
template std::vector<AdamState<float>> make_adam_states<float>(std::span<Parameter<float>* const>, AdamSettings);
template std::vector<AdamState<double>> make_adam_states<double>(std::span<Parameter<double>* const>, AdamSettings);

}  // namespace alr
