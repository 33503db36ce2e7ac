#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attnlreg/model/transformer.hpp"
#include "attnlreg/numerics/tape.hpp"

namespace alr::objective {

/// Per-layer penalty weights alpha_1 .. alpha_L.
struct RegSchedule {
  std::vector<double> alphas;

  void validate(std::size_t layers) const;
  bool all_zero() const;
};

/// alpha_i = alpha_1 * gamma^(i-1). gamma = 1 gives the constant schedule.
RegSchedule default_schedule(double alpha_1, double gamma, std::size_t layers);

/// Accepts {"alpha_1": a, "gamma": g} or {"alphas": [...]}; absent means all zero.
RegSchedule schedule_from_json(const nlohmann::json& j, std::size_t layers);

/// What the per-layer penalty is computed on.
///  raw_scores   : sum |Xi| over the pre-softmax score maps (the default).
///  offpeak_mass : sum of normalized attention outside each row's peak.
///                 Experimental, not part of the published objective.
///  mask_gate    : sum of sigmoid(M) for the learnable-mask variant.
enum class PenaltyTarget { raw_scores, offpeak_mass, mask_gate };

PenaltyTarget parse_penalty(std::string_view name);
std::string_view to_string(PenaltyTarget target);

struct LossBreakdown {
  double mse = 0.0;
  std::vector<double> reg_per_layer;
  double total = 0.0;
};

template <typename T>
Var mse_loss(Tape<T>& tape, Var pred, Var truth);

/// Penalty for one layer, summed over map entries and averaged over heads
/// and samples.
template <typename T>
Var attn_l1(Tape<T>& tape, const model::ForwardVars& vars, std::size_t layer,
            PenaltyTarget target = PenaltyTarget::raw_scores);

/// Value-level raw-score penalty from a captured trace.
double attn_l1(const model::ForwardTrace& trace, std::size_t layer);

/// Same quantity for a bare (maps x n x n) score stack holding `samples * heads` maps.
double attn_l1(const Array<float>& scores, std::size_t samples, std::size_t heads);

template <typename T>
struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
};

/// mse + sum_i alpha_i * penalty_i. Layers with alpha_i = 0 are reported but
/// not added to the graph.
template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const model::ForwardVars& vars, Var truth, const RegSchedule& schedule,
                        PenaltyTarget target = PenaltyTarget::raw_scores);

}  // namespace alr::objective
