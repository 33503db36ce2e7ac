#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "attnlreg/data/series.hpp"
#include "attnlreg/model/transformer.hpp"
#include "attnlreg/numerics/adam.hpp"
#include "attnlreg/objective/objective.hpp"

namespace alr::objective {

struct TrainSettings {
  AdamSettings adam{1e-3, 0.9, 0.999, 1e-8};
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  // Caps optimizer steps per epoch (0 = full pass over the training windows).
  std::size_t max_steps_per_epoch = 0;
  std::uint64_t seed = 0;
  PenaltyTarget penalty = PenaltyTarget::raw_scores;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double train_total = 0.0;
  std::vector<double> reg_per_layer;
  double val_mse = 0.0;
};

struct TrainResult {
  model::ModelParams<float> params;  // best validation epoch
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  bool early_stopped = false;
};

struct EvalMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

// Called after every forward pass of training, before the optimizer step.
using StepObserver = std::function<void(const Tape<float>&, const model::ForwardVars&)>;

/// Minimizes mse + sum alpha_i * penalty_i with Adam; stops after `patience`
/// epochs without validation improvement and returns the best parameters.
TrainResult train_model(const model::ModelConfig& config, model::ModelParams<float> params,
                        std::span<const data::WindowPair> train, std::span<const data::WindowPair> val,
                        const RegSchedule& schedule, const TrainSettings& settings, const StepObserver& observer = {});

EvalMetrics evaluate(const model::ModelConfig& config, const model::ModelParams<float>& params,
                     std::span<const data::WindowPair> windows, std::size_t batch_size = 256);

}  // namespace alr::objective
