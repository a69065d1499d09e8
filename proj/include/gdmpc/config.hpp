#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdmpc/diffusion.hpp"
#include "gdmpc/eval.hpp"
#include "gdmpc/expert.hpp"
#include "gdmpc/gnn.hpp"
#include "gdmpc/net.hpp"
#include "gdmpc/trainer.hpp"

namespace gdmpc {

struct EvalConfig {
  std::size_t rollout_T = 200;
  std::vector<std::size_t> horizons = {20, 200};
  GdmSampling gdm_mode = GdmSampling::cached;

  void validate() const;
};

struct SplitConfig {
  std::size_t train = 10;
  std::size_t val = 2;
  std::size_t test = 4;

  std::size_t total() const { return train + val + test; }
  void validate() const;
};

// Exact proportional split (largest remainder); ratio like {5, 1, 2}.
std::vector<std::size_t> split_counts(std::size_t total, const std::vector<std::size_t>& ratio);

struct ExperimentConfig {
  NetworkConfig network;
  ExpertConfig expert;
  GnnConfig gnn;
  TrainConfig train;
  ScheduleConfig schedule;
  EvalConfig eval;
  SplitConfig split;
  // When true, f_min is calibrated to the given percentile of full-power
  // ergodic rates pooled over the training networks.
  bool f_min_auto = false;
  double f_min_percentile = 10.0;
  std::uint64_t master_seed = 1;

  void validate() const;
};

// Strict parsers: unknown keys raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical hash used in manifests and artifact headers.
std::string experiment_config_hash(const ExperimentConfig& config);

nlohmann::json network_config_to_json(const NetworkConfig&);
NetworkConfig network_config_from_json(const nlohmann::json&);
nlohmann::json gnn_config_to_json(const GnnConfig&);
GnnConfig gnn_config_from_json(const nlohmann::json&);
nlohmann::json train_config_to_json(const TrainConfig&);
TrainConfig train_config_from_json(const nlohmann::json&);
nlohmann::json schedule_config_to_json(const ScheduleConfig&);
ScheduleConfig schedule_config_from_json(const nlohmann::json&);
nlohmann::json expert_config_to_json(const ExpertConfig&);
ExpertConfig expert_config_from_json(const nlohmann::json&);

}  // namespace gdmpc
