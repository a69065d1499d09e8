#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gdmpc/config.hpp"
#include "gdmpc/io.hpp"

namespace gdmpc {

struct PipelinePaths {
  std::string out_dir;

  std::string dataset() const { return out_dir + "/dataset.json"; }
  std::string buffers() const { return out_dir + "/buffers.json"; }
  std::string checkpoint() const { return out_dir + "/ckpt/best.json"; }
  std::string trace() const { return out_dir + "/ckpt/trace.csv"; }
  std::string manifest() const { return out_dir + "/manifest.json"; }
  std::string summary() const { return out_dir + "/eval/summary.json"; }
  std::string compare_csv() const { return out_dir + "/eval/compare.csv"; }
  std::string rollout_csv(const std::string& source, const std::string& network_id) const {
    return out_dir + "/eval/rollouts/" + source + "_" + network_id + ".csv";
  }
  std::string error_record() const { return out_dir + "/error.json"; }
};

// Dataset split by generation order: train, then validation, then test.
struct SplitView {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};
SplitView split_indices(const SplitConfig& split);

io::Dataset make_dataset(const ExperimentConfig& config, std::uint64_t master_seed);

// 10th-percentile-of-full-power calibration (percentile from config).
double calibrate_f_min(const ExperimentConfig& config, const io::Dataset& dataset,
                       std::uint64_t master_seed, std::size_t jobs);

io::BufferSet make_buffers(const ExperimentConfig& config, const io::Dataset& dataset,
                           std::uint64_t master_seed, std::size_t jobs);

TrainResult run_training(const ExperimentConfig& config, const io::Dataset& dataset,
                         const io::BufferSet& buffers, std::uint64_t master_seed,
                         std::size_t jobs);

struct EvalArtifacts {
  ComparisonTable table;
  nlohmann::json summary;
  // (relative path, contents) for every rollout CSV
  std::vector<std::pair<std::string, std::string>> rollout_csvs;
};

EvalArtifacts run_eval(const ExperimentConfig& config, const io::Dataset& dataset,
                       const io::BufferSet& buffers, const Checkpoint& checkpoint,
                       std::uint64_t master_seed, std::size_t jobs);

struct StageStatus {
  std::string name;
  bool skipped = false;
};

// Runs netgen -> expert -> train -> eval with digest-based stage skipping. A
// failing stage leaves earlier artifacts on disk plus a machine-readable
// error record, then rethrows.
std::vector<StageStatus> run_pipeline(const ExperimentConfig& config, const std::string& out_dir,
                                      std::size_t jobs);

// Fig-style 2D scatter dump: expert rows and generated samples for two nodes,
// transmit powers normalized by p_max.
std::string slice_csv(const ExperimentConfig& config, const io::Dataset& dataset,
                      const io::BufferSet& buffers, const Checkpoint& checkpoint,
                      const std::string& network_id, std::size_t node_a, std::size_t node_b,
                      std::size_t n_samples, std::uint64_t seed);

}  // namespace gdmpc
