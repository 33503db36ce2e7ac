#include "attnlreg/objective/trainer.hpp"

#include <cmath>
#include <numeric>

namespace alr::objective {

EvalMetrics evaluate(const model::ModelConfig& config, const model::ModelParams<float>& params,
                     std::span<const data::WindowPair> windows, std::size_t batch_size) {
  if (windows.empty()) throw InvalidArgument("evaluate: no windows");
  if (batch_size == 0) throw InvalidArgument("evaluate: batch_size must be positive");
  double se = 0.0, ae = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const auto chunk = windows.subspan(begin, std::min(batch_size, windows.size() - begin));
    const model::Batch<float> batch = model::make_batch<float>(chunk);
    Tape<float> tape(false);
    const model::ForwardVars vars = model::forward(tape, config, params, batch.x);
    const Array<float>& pred = tape.value(vars.prediction);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(batch.y[i]);
      se += d * d;
      ae += std::abs(d);
    }
    count += pred.size();
  }
  return {se / static_cast<double>(count), ae / static_cast<double>(count), windows.size()};
}

TrainResult train_model(const model::ModelConfig& config, model::ModelParams<float> params,
                        std::span<const data::WindowPair> train, std::span<const data::WindowPair> val,
                        const RegSchedule& schedule, const TrainSettings& settings, const StepObserver& observer) {
  config.validate();
  schedule.validate(config.layers);
  if (train.empty() || val.empty()) throw InvalidArgument("train_model: train and validation windows are required");
  if (settings.batch_size == 0) throw InvalidArgument("optimizer.batch_size must be positive");
  if (settings.max_epochs == 0) throw InvalidArgument("optimizer.max_epochs must be positive");

  std::vector<Parameter<float>*> ptrs = params.pointers();
  std::vector<AdamState<float>> states = make_adam_states<float>(ptrs, settings.adam);
  const Rng base(settings.seed);

  TrainResult result;
  result.params = params;
  result.best_val_mse = INFINITY;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());

  for (std::size_t epoch = 0; epoch < settings.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = base.fork(epoch);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    EpochMetrics m;
    m.epoch = epoch;
    m.reg_per_layer.assign(config.layers, 0.0);
    std::size_t steps = 0;
    std::vector<const data::WindowPair*> picked;
    for (std::size_t begin = 0; begin < order.size(); begin += settings.batch_size) {
      if (settings.max_steps_per_epoch != 0 && steps == settings.max_steps_per_epoch) break;
      picked.clear();
      for (std::size_t k = begin; k < std::min(order.size(), begin + settings.batch_size); ++k) {
        picked.push_back(&train[order[k]]);
      }
      const model::Batch<float> batch = model::make_batch<float>(std::span<const data::WindowPair* const>(picked));
      Tape<float> tape;
      const model::ForwardVars vars = model::forward(tape, config, params, batch.x);
      const Var truth = tape.constant(batch.y);
      const TotalLoss<float> loss = total_loss(tape, vars, truth, schedule, settings.penalty);
      if (observer) observer(tape, vars);
      params.zero_grad();
      tape.backward(loss.total);
      adam_step<float>(ptrs, states);

      m.train_mse += loss.breakdown.mse;
      m.train_total += loss.breakdown.total;
      for (std::size_t l = 0; l < config.layers; ++l) m.reg_per_layer[l] += loss.breakdown.reg_per_layer[l];
      ++steps;
    }
    const double denom = static_cast<double>(std::max<std::size_t>(steps, 1));
    m.train_mse /= denom;
    m.train_total /= denom;
    for (double& r : m.reg_per_layer) r /= denom;
    m.val_mse = evaluate(config, params, val).mse;
    result.history.push_back(m);

    if (m.val_mse < result.best_val_mse) {
      result.best_val_mse = m.val_mse;
      result.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= settings.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace alr::objective
