#include "attnlreg/cli/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace alr::cli {

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw InvalidArgument("config field '" + field + "': " + why);
}

void reject_unknown(const nlohmann::json& obj, const std::string& prefix, std::initializer_list<const char*> known) {
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) bad(prefix + item.key(), "unknown field");
  }
}

template <typename V>
void read(const nlohmann::json& obj, const char* key, const std::string& prefix, V& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const nlohmann::json::exception&) {
    bad(prefix + key, "wrong type");
  }
}

const nlohmann::json& object_at(const nlohmann::json& doc, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!doc.contains(key)) return empty;
  if (!doc.at(key).is_object()) bad(key, "expected an object");
  return doc.at(key);
}

data::SyntheticSpec parse_synthetic(const nlohmann::json& j, std::uint64_t run_seed) {
  if (!j.is_object()) bad("data.synthetic", "expected an object");
  if (j.contains("planted")) {
    const auto& p = j.at("planted");
    reject_unknown(p, "data.synthetic.planted.", {"variables", "length", "min_lag", "max_lag", "noise_std", "seed"});
    std::size_t variables = 8, length = 5000, min_lag = 1, max_lag = 1;
    double noise = 0.3;
    std::uint64_t seed = run_seed;
    read(p, "variables", "data.synthetic.planted.", variables);
    read(p, "length", "data.synthetic.planted.", length);
    read(p, "min_lag", "data.synthetic.planted.", min_lag);
    read(p, "max_lag", "data.synthetic.planted.", max_lag);
    read(p, "noise_std", "data.synthetic.planted.", noise);
    read(p, "seed", "data.synthetic.planted.", seed);
    return data::planted_coupling_spec(variables, length, min_lag, max_lag, noise, seed);
  }
  reject_unknown(j, "data.synthetic.", {"variables", "length", "couplings", "periods", "offsets", "noise_std", "seed", "warmup"});
  data::SyntheticSpec s;
  s.seed = run_seed;
  read(j, "variables", "data.synthetic.", s.variables);
  read(j, "length", "data.synthetic.", s.length);
  read(j, "periods", "data.synthetic.", s.periods);
  read(j, "offsets", "data.synthetic.", s.offsets);
  read(j, "noise_std", "data.synthetic.", s.noise_std);
  read(j, "seed", "data.synthetic.", s.seed);
  read(j, "warmup", "data.synthetic.", s.warmup);
  if (j.contains("couplings")) {
    if (!j.at("couplings").is_array()) bad("data.synthetic.couplings", "expected an array");
    for (const auto& c : j.at("couplings")) {
      data::Coupling cp;
      read(c, "target", "data.synthetic.couplings.", cp.target);
      read(c, "source", "data.synthetic.couplings.", cp.source);
      read(c, "lag", "data.synthetic.couplings.", cp.lag);
      read(c, "weight", "data.synthetic.couplings.", cp.weight);
      s.couplings.push_back(cp);
    }
  }
  s.validate();
  return s;
}

nlohmann::json synthetic_to_json(const data::SyntheticSpec& s) {
  nlohmann::json couplings = nlohmann::json::array();
  for (const auto& c : s.couplings) {
    couplings.push_back({{"target", c.target}, {"source", c.source}, {"lag", c.lag}, {"weight", c.weight}});
  }
  return {{"variables", s.variables}, {"length", s.length},   {"couplings", couplings}, {"periods", s.periods},
          {"offsets", s.offsets},     {"noise_std", s.noise_std}, {"seed", s.seed},     {"warmup", s.warmup}};
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::optional<data::SyntheticSpec> RunConfig::synthetic_spec() const {
  if (!data.synthetic) return std::nullopt;
  return parse_synthetic(*data.synthetic, seed);
}

objective::RegSchedule RunConfig::schedule() const { return objective::schedule_from_json(regularization, model.layers); }

objective::TrainSettings RunConfig::train_settings() const {
  objective::TrainSettings s;
  s.adam.lr = optimizer.lr;
  s.batch_size = optimizer.batch_size;
  s.max_epochs = optimizer.max_epochs;
  s.patience = optimizer.patience;
  s.max_steps_per_epoch = optimizer.max_steps_per_epoch;
  s.seed = seed;
  s.penalty = penalty;
  return s;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json d = nlohmann::json::object();
  if (data.csv) d["csv"] = data.csv->string();
  if (data.synthetic) d["synthetic"] = synthetic_to_json(*synthetic_spec());
  if (!data.dataset.empty()) d["dataset"] = data.dataset;
  nlohmann::json split_json;
  if (split.lengths) {
    split_json["lengths"] = *split.lengths;
  } else {
    split_json["ratios"] = split.ratios;
  }
  nlohmann::json reg = regularization.is_object() ? regularization : nlohmann::json::object();
  reg["penalty"] = objective::to_string(penalty);
  return {{"data", d},
          {"split", split_json},
          {"model", model::to_json(model)},
          {"regularization", reg},
          {"optimizer",
           {{"lr", optimizer.lr},
            {"batch_size", optimizer.batch_size},
            {"max_epochs", optimizer.max_epochs},
            {"patience", optimizer.patience},
            {"max_steps_per_epoch", optimizer.max_steps_per_epoch}}},
          {"seed", seed}};
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw InvalidArgument("config: expected a JSON object at the top level");
  reject_unknown(doc, "", {"data", "split", "model", "regularization", "optimizer", "analysis", "seed", "out"});
  RunConfig rc;
  read(doc, "seed", "", rc.seed);
  if (doc.contains("out")) {
    if (!doc.at("out").is_string()) bad("out", "expected a path string");
    rc.out = doc.at("out").get<std::string>();
    if (rc.out.is_relative() && !base_dir.empty()) rc.out = base_dir / rc.out;
  }

  const auto& d = object_at(doc, "data");
  reject_unknown(d, "data.", {"csv", "synthetic", "dataset"});
  read(d, "dataset", "data.", rc.data.dataset);
  if (d.contains("csv")) {
    if (!d.at("csv").is_string()) bad("data.csv", "expected a path string");
    std::filesystem::path p = d.at("csv").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    if (!std::filesystem::exists(p)) bad("data.csv", "file '" + p.string() + "' does not exist");
    rc.data.csv = p;
  }
  if (d.contains("synthetic")) {
    rc.data.synthetic = d.at("synthetic");
    (void)rc.synthetic_spec();
  }
  if (rc.data.csv && rc.data.synthetic) bad("data", "give either csv or synthetic, not both");
  if (!rc.data.csv && !rc.data.synthetic) bad("data", "one of csv or synthetic is required");

  const auto& s = object_at(doc, "split");
  reject_unknown(s, "split.", {"preset", "lengths", "ratios"});
  if (s.contains("lengths")) {
    std::array<std::size_t, 3> l{};
    read(s, "lengths", "split.", l);
    rc.split = data::SplitSpec::from_lengths(l[0], l[1], l[2]);
  } else if (s.contains("ratios")) {
    std::array<double, 3> r{};
    read(s, "ratios", "split.", r);
    rc.split = data::SplitSpec::from_ratios(r[0], r[1], r[2]);
  } else {
    std::string preset = rc.data.dataset;
    read(s, "preset", "split.", preset);
    if (!preset.empty()) {
      const auto p = data::split_preset(preset);
      if (!p) bad("split.preset", "unknown dataset preset '" + preset + "'");
      rc.split = *p;
    }
  }

  if (doc.contains("model")) {
    nlohmann::json m = doc.at("model");
    if (!m.is_object()) bad("model", "expected an object");
    // Variables come from the data; a placeholder keeps validation happy.
    if (!m.contains("variables")) m["variables"] = 1;
    if (!m.contains("horizon") && !rc.data.dataset.empty()) m["horizon"] = data::horizon_preset(rc.data.dataset).front();
    rc.model = model::model_config_from_json(m);
    if (!doc.at("model").contains("variables")) rc.model.variables = 0;
  } else {
    rc.model.variables = 0;
  }

  if (doc.contains("regularization")) {
    nlohmann::json reg = doc.at("regularization");
    if (!reg.is_object()) bad("regularization", "expected an object");
    reject_unknown(reg, "regularization.", {"alpha_1", "gamma", "alphas", "penalty"});
    if (reg.contains("penalty")) {
      rc.penalty = objective::parse_penalty(reg.at("penalty").get<std::string>());
      reg.erase("penalty");
    }
    rc.regularization = reg;
  }
  (void)rc.schedule();  // surfaces schedule errors at load time

  const auto& o = object_at(doc, "optimizer");
  reject_unknown(o, "optimizer.", {"lr", "batch_size", "max_epochs", "patience", "max_steps_per_epoch"});
  read(o, "lr", "optimizer.", rc.optimizer.lr);
  read(o, "batch_size", "optimizer.", rc.optimizer.batch_size);
  read(o, "max_epochs", "optimizer.", rc.optimizer.max_epochs);
  read(o, "patience", "optimizer.", rc.optimizer.patience);
  read(o, "max_steps_per_epoch", "optimizer.", rc.optimizer.max_steps_per_epoch);
  if (!(rc.optimizer.lr > 0)) bad("optimizer.lr", "must be positive");
  if (rc.optimizer.batch_size == 0) bad("optimizer.batch_size", "must be positive");
  if (rc.optimizer.max_epochs == 0) bad("optimizer.max_epochs", "must be positive");

  const auto& a = object_at(doc, "analysis");
  reject_unknown(a, "analysis.", {"layer", "horizon_position", "samples", "threshold", "index_space", "threads"});
  if (a.contains("layer")) {
    std::size_t layer = 0;
    read(a, "layer", "analysis.", layer);
    rc.analysis.layer = layer;
  }
  if (a.contains("horizon_position")) {
    const auto& hp = a.at("horizon_position");
    rc.analysis.horizon = analysis::HorizonPosition::parse(hp.is_string() ? hp.get<std::string>() : hp.dump());
  }
  read(a, "samples", "analysis.", rc.analysis.samples);
  read(a, "threshold", "analysis.", rc.analysis.threshold);
  read(a, "threads", "analysis.", rc.analysis.threads);
  if (a.contains("index_space")) {
    const std::string space = a.at("index_space").get<std::string>();
    if (space == "global") {
      rc.analysis.index_space = analysis::TokenIndexSpace::global;
    } else if (space != "within_variable") {
      bad("analysis.index_space", "expected within_variable or global");
    }
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc, path.parent_path());
}

void apply_overrides(RunConfig& config, const Overrides& o) {
  std::optional<std::uint64_t> seed = o.seed;
  if (!seed) {
    if (const char* env = std::getenv(kSeedEnvVar); env != nullptr && *env != '\0') {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (end == env || *end != '\0') throw InvalidArgument(std::string(kSeedEnvVar) + " must be an unsigned integer");
      seed = v;
    }
  }
  if (seed) config.seed = *seed;
  if (o.out) config.out = *o.out;
  if (o.layer) config.analysis.layer = *o.layer;
  if (o.horizon_position) config.analysis.horizon = analysis::HorizonPosition::parse(*o.horizon_position);
  if (o.samples) config.analysis.samples = *o.samples;
  if (o.threshold) config.analysis.threshold = *o.threshold;
  if (o.threads) config.analysis.threads = *o.threads;
}

}  // namespace alr::cli
