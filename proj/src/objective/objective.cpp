#include "attnlreg/objective/objective.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "attnlreg/numerics/ops.hpp"

namespace alr::objective {

void RegSchedule::validate(std::size_t layers) const {
  if (alphas.size() != layers) {
    throw InvalidArgument("regularization: schedule has " + std::to_string(alphas.size()) + " alphas but the model has " +
                          std::to_string(layers) + " layers");
  }
  for (double a : alphas) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw InvalidArgument("regularization: alphas must be finite and >= 0");
  }
}

bool RegSchedule::all_zero() const {
  for (double a : alphas) {
    if (a != 0.0) return false;
  }
  return true;
}

RegSchedule default_schedule(double alpha_1, double gamma, std::size_t layers) {
  if (!(alpha_1 >= 0.0)) throw InvalidArgument("regularization.alpha_1 must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("regularization.gamma must be in (0, 1]");
  RegSchedule s;
  for (std::size_t i = 0; i < layers; ++i) {
    // Rounded to 12 significant digits so decimal schedules come out exact.
    const double a = alpha_1 * std::pow(gamma, static_cast<double>(i));
    char text[32];
    std::snprintf(text, sizeof text, "%.12g", a);
    s.alphas.push_back(std::stod(text));
  }
  return s;
}

RegSchedule schedule_from_json(const nlohmann::json& j, std::size_t layers) {
  if (j.is_null()) return RegSchedule{std::vector<double>(layers, 0.0)};
  if (!j.is_object()) throw InvalidArgument("regularization: expected an object");
  RegSchedule s;
  if (j.contains("alphas")) {
    if (!j.at("alphas").is_array()) throw InvalidArgument("regularization.alphas: expected an array");
    for (const auto& a : j.at("alphas")) {
      if (!a.is_number()) throw InvalidArgument("regularization.alphas: entries must be numbers");
      s.alphas.push_back(a.get<double>());
    }
  } else if (j.contains("alpha_1")) {
    if (!j.at("alpha_1").is_number()) throw InvalidArgument("regularization.alpha_1: expected a number");
    const double gamma = j.value("gamma", 1.0);
    s = default_schedule(j.at("alpha_1").get<double>(), gamma, layers);
  } else {
    s.alphas.assign(layers, 0.0);
  }
  s.validate(layers);
  return s;
}

PenaltyTarget parse_penalty(std::string_view name) {
  if (name == "raw_scores") return PenaltyTarget::raw_scores;
  if (name == "offpeak_mass") return PenaltyTarget::offpeak_mass;
  if (name == "mask_gate") return PenaltyTarget::mask_gate;
  throw InvalidArgument("regularization.penalty: unknown value '" + std::string(name) + "'");
}

std::string_view to_string(PenaltyTarget target) {
  switch (target) {
    case PenaltyTarget::raw_scores: return "raw_scores";
    case PenaltyTarget::offpeak_mass: return "offpeak_mass";
    case PenaltyTarget::mask_gate: return "mask_gate";
  }
  return "raw_scores";
}

template <typename T>
Var mse_loss(Tape<T>& tape, Var pred, Var truth) {
  return mse(tape, pred, truth);
}

template <typename T>
Var attn_l1(Tape<T>& tape, const model::ForwardVars& vars, std::size_t layer, PenaltyTarget target) {
  if (layer >= vars.layers.size()) {
    throw InvalidArgument("attn_l1: layer " + std::to_string(layer) + " out of range (" +
                          std::to_string(vars.layers.size()) + " layers)");
  }
  const model::LayerVars& rec = vars.layers[layer];
  const T per_map = T(1) / static_cast<T>(vars.batch * vars.heads);
  switch (target) {
    case PenaltyTarget::raw_scores:
      return scale(tape, sum_abs(tape, rec.scores), per_map);
    case PenaltyTarget::offpeak_mass:
      return scale(tape, offpeak_mass(tape, rec.maps), per_map);
    case PenaltyTarget::mask_gate:
      if (!rec.gate.valid()) throw InvalidArgument("mask_gate penalty requires model.learnable_mask");
      return sum_abs(tape, rec.gate);
  }
  throw InvalidArgument("attn_l1: unknown penalty target");
}

double attn_l1(const Array<float>& scores, std::size_t samples, std::size_t heads) {
  if (samples == 0 || heads == 0) throw InvalidArgument("attn_l1: samples and heads must be positive");
  double total = 0.0;
  for (float v : scores.data()) total += std::abs(static_cast<double>(v));
  return total / static_cast<double>(samples * heads);
}

double attn_l1(const model::ForwardTrace& trace, std::size_t layer) {
  if (layer >= trace.records.size()) {
    throw InvalidArgument("attn_l1: layer " + std::to_string(layer) + " out of range (" +
                          std::to_string(trace.records.size()) + " layers)");
  }
  const auto& rec = trace.records[layer];
  return attn_l1(rec.scores, trace.samples, rec.heads);
}

template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const model::ForwardVars& vars, Var truth, const RegSchedule& schedule,
                        PenaltyTarget target) {
  schedule.validate(vars.layers.size());
  TotalLoss<T> out;
  const Var pred_loss = mse_loss(tape, vars.prediction, truth);
  out.breakdown.mse = static_cast<double>(tape.value(pred_loss)[0]);
  Var total = pred_loss;
  double total_value = out.breakdown.mse;
  for (std::size_t i = 0; i < vars.layers.size(); ++i) {
    const Var reg = attn_l1(tape, vars, i, target);
    const double reg_value = static_cast<double>(tape.value(reg)[0]);
    out.breakdown.reg_per_layer.push_back(reg_value);
    const double alpha = schedule.alphas[i];
    if (alpha == 0.0) continue;
    total = add(tape, total, scale(tape, reg, static_cast<T>(alpha)));
    total_value += alpha * reg_value;
  }
  out.total = total;
  out.breakdown.total = total_value;
  return out;
}

template Var mse_loss<float>(Tape<float>&, Var, Var);
template Var mse_loss<double>(Tape<double>&, Var, Var);
template Var attn_l1<float>(Tape<float>&, const model::ForwardVars&, std::size_t, PenaltyTarget);
template Var attn_l1<double>(Tape<double>&, const model::ForwardVars&, std::size_t, PenaltyTarget);
template TotalLoss<float> total_loss<float>(Tape<float>&, const model::ForwardVars&, Var, const RegSchedule&,
                                            PenaltyTarget);
template TotalLoss<double> total_loss<double>(Tape<double>&, const model::ForwardVars&, Var, const RegSchedule&,
                                              PenaltyTarget);

}  // namespace alr::objective
