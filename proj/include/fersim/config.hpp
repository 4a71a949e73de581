// Experiment configuration: a flat JSON object whose keys mirror the fields
// below. Unknown keys are rejected.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fersim/adapter.hpp"
#include "fersim/agents.hpp"
#include "fersim/errors.hpp"
#include "fersim/metrics.hpp"
#include "fersim/synthetic.hpp"

namespace fersim {

inline constexpr int kManifestVersion = 1;

struct ExperimentConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";

  int grid_width = 5;
  int grid_height = 5;
  std::map<std::string, int> cohort{{"western", 5}, {"asian", 5}};

  int t_learn = 1000;
  int t_block = 200;
  std::vector<int> sigma_levels{0, 1, 2, 3, 4};

  TrainingConfig training;
  BehaviorConfig behavior;
  bool trust_enabled = true;

  /// Embedding source: a store file, or a synthetic spec when empty.
  std::optional<std::filesystem::path> store_path;
  SyntheticCorpusSpec synthetic;
  std::optional<std::uint64_t> synthetic_seed;  // defaults to the run seed

  /// 0 selects the default schedule: every tick below 10, then every 50.
  int snapshot_stride = 0;
  std::size_t ece_bins = 10;
  DeltaForm delta_form = DeltaForm::kRelative;

  int agent_count() const {
    int n = 0;
    for (const auto& [g, c] : cohort) n += c;
    return n;
  }

  SyntheticCorpusSpec resolved_synthetic() const {
    SyntheticCorpusSpec s = synthetic;
    s.seed = synthetic_seed.value_or(seed);
    return s;
  }

  bool snapshot_due(int t) const {
    if (snapshot_stride > 0) return t % snapshot_stride == 0;
    return t < 10 || t % 50 == 0;
  }

  /// Checks that do not need the embedding store.
  void validate() const {
    if (grid_width < 1 || grid_height < 1) throw ConfigError("grid dimensions must be >= 1");
    for (const auto& [g, c] : cohort) {
      if (c < 0) throw ConfigError("cohort count for '" + g + "' is negative");
    }
    const int cells = grid_width * grid_height;
    if (agent_count() > cells) {
      throw ConfigError("cohort of " + std::to_string(agent_count()) + " agents exceeds " + std::to_string(cells) +
                        " lattice cells");
    }
    if (agent_count() == 0) throw ConfigError("cohort is empty");
    if (t_learn < 0) throw ConfigError("t_learn must be >= 0");
    if (t_block < 1) throw ConfigError("t_block must be >= 1");
    for (std::size_t i = 1; i < sigma_levels.size(); ++i) {
      if (sigma_levels[i] <= sigma_levels[i - 1]) throw ConfigError("sigma_levels must be strictly increasing");
    }
    if (snapshot_stride < 0) throw ConfigError("snapshot_stride must be >= 0");
    if (ece_bins < 1) throw ConfigError("ece_bins must be >= 1");
    training.validate();
    behavior.validate();
    if (!store_path) synthetic.validate();
  }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.generic_string();
  j["grid_width"] = c.grid_width;
  j["grid_height"] = c.grid_height;
  j["cohort"] = c.cohort;
  j["t_learn"] = c.t_learn;
  j["t_block"] = c.t_block;
  j["sigma_levels"] = c.sigma_levels;
  j["learning_rate"] = c.training.learning_rate;
  j["weight_decay"] = c.training.weight_decay;
  j["label_smoothing"] = c.training.label_smoothing;
  j["dropout"] = c.training.dropout;
  j["adam_beta1"] = c.training.adam_beta1;
  j["adam_beta2"] = c.training.adam_beta2;
  j["adam_eps"] = c.training.adam_eps;
  j["hidden"] = c.training.hidden;
  j["ln_eps"] = c.training.ln_eps;
  j["peer_threshold"] = c.behavior.peer_threshold;
  j["move_prob"] = c.behavior.move_prob;
  j["valence_threshold"] = c.behavior.valence_threshold;
  j["valence_basis"] = c.behavior.valence_basis == ValenceBasis::kPredicted ? "predicted" : "true";
  j["trust_lambda"] = c.behavior.trust_lambda;
  j["trust_enabled"] = c.trust_enabled;
  if (c.store_path) {
    j["store"] = c.store_path->generic_string();
  } else {
    j["synthetic"] = c.resolved_synthetic();
  }
  j["snapshot_stride"] = c.snapshot_stride;
  j["ece_bins"] = c.ece_bins;
  j["delta_form"] = c.delta_form == DeltaForm::kRelative ? "relative" : "absolute";
  return j;
}

/// Builds a config from JSON. Relative store paths resolve against base_dir.
inline ExperimentConfig config_from_json(const nlohmann::json& in, const std::filesystem::path& base_dir = {}) {
  const nlohmann::json& j = in.contains("manifest_version") ? in.at("config") : in;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "run_id") c.run_id = v.get<std::string>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "out_dir") c.out_dir = v.get<std::string>();
      else if (key == "grid_width") c.grid_width = v.get<int>();
      else if (key == "grid_height") c.grid_height = v.get<int>();
      else if (key == "cohort") c.cohort = v.get<std::map<std::string, int>>();
      else if (key == "t_learn") c.t_learn = v.get<int>();
      else if (key == "t_block") c.t_block = v.get<int>();
      else if (key == "sigma_levels") c.sigma_levels = v.get<std::vector<int>>();
      else if (key == "learning_rate") c.training.learning_rate = v.get<double>();
      else if (key == "weight_decay") c.training.weight_decay = v.get<double>();
      else if (key == "label_smoothing") c.training.label_smoothing = v.get<double>();
      else if (key == "dropout") c.training.dropout = v.get<double>();
      else if (key == "adam_beta1") c.training.adam_beta1 = v.get<double>();
      else if (key == "adam_beta2") c.training.adam_beta2 = v.get<double>();
      else if (key == "adam_eps") c.training.adam_eps = v.get<double>();
      else if (key == "hidden") c.training.hidden = v.get<std::size_t>();
      else if (key == "ln_eps") c.training.ln_eps = v.get<double>();
      else if (key == "peer_threshold") c.behavior.peer_threshold = v.get<double>();
      else if (key == "move_prob") c.behavior.move_prob = v.get<double>();
      else if (key == "valence_threshold") c.behavior.valence_threshold = v.get<int>();
      else if (key == "trust_lambda") c.behavior.trust_lambda = v.get<double>();
      else if (key == "trust_enabled") c.trust_enabled = v.get<bool>();
      else if (key == "snapshot_stride") c.snapshot_stride = v.get<int>();
      else if (key == "ece_bins") c.ece_bins = v.get<std::size_t>();
      else if (key == "valence_basis") {
        const auto s = v.get<std::string>();
        if (s == "predicted") c.behavior.valence_basis = ValenceBasis::kPredicted;
        else if (s == "true") c.behavior.valence_basis = ValenceBasis::kTrue;
        else throw ConfigError("valence_basis must be 'predicted' or 'true'");
      } else if (key == "delta_form") {
        const auto s = v.get<std::string>();
        if (s == "relative") c.delta_form = DeltaForm::kRelative;
        else if (s == "absolute") c.delta_form = DeltaForm::kAbsolute;
        else throw ConfigError("delta_form must be 'relative' or 'absolute'");
      } else if (key == "store") {
        std::filesystem::path p = v.get<std::string>();
        c.store_path = std::filesystem::absolute(p.is_relative() && !base_dir.empty() ? base_dir / p : p);
      } else if (key == "synthetic") {
        if (read_synthetic_spec(v, c.synthetic)) c.synthetic_seed = c.synthetic.seed;
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  if (j.contains("store") && j.contains("synthetic")) {
    throw ConfigError("config may name either 'store' or 'synthetic', not both");
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

}  // namespace fersim
