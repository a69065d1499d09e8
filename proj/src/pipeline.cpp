#include "gdmpc/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <map>

#include "gdmpc/parallel.hpp"
#include "gdmpc/rng.hpp"

namespace gdmpc {

namespace {

using nlohmann::json;

std::string network_id_for(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "net-%03zu", index);
  return buf;
}

class Manifest {
 public:
  Manifest(const PipelinePaths& paths, const std::string& config_hash, std::uint64_t master_seed)
      : paths_(paths) {
    doc_ = {{"format", "gdmpc-manifest"},
            {"version", 1},
            {"config_hash", config_hash},
            {"master_seed", master_seed},
            {"stages", json::object()}};
    if (std::filesystem::exists(paths_.manifest())) {
      json existing;
      try {
        existing = json::parse(io::read_file(paths_.manifest()));
      } catch (const json::exception&) {
        return;  // unreadable manifest: rebuild everything
      }
      if (existing.value("config_hash", "") == config_hash &&
          existing.value("master_seed", std::uint64_t{0}) == master_seed)
        doc_ = existing;
    }
  }

  // True when every recorded output of the stage still matches on disk.
  // Missing outputs trigger a rerun; outputs that exist but no longer match
  // their recorded digest are treated as corruption and halt the pipeline.
  bool stage_complete(const std::string& stage) const {
    if (!doc_["stages"].contains(stage)) return false;
    for (const auto& item : doc_["stages"][stage]["outputs"].items()) {
      const std::string path = paths_.out_dir + "/" + item.key();
      if (!std::filesystem::exists(path)) return false;
      if (io::file_digest(path) != item.value().get<std::string>())
        throw IntegrityError("digest mismatch for " + item.key() +
                             " (artifact modified or corrupted; remove it to regenerate)");
    }
    return true;
  }

  // Inputs of later stages must match the digests their producer recorded.
  void verify_input(const std::string& producer_stage, const std::string& rel_path) const {
    if (!doc_["stages"].contains(producer_stage))
      throw IntegrityError("stage '" + producer_stage + "' has not produced outputs yet");
    const auto& outputs = doc_["stages"][producer_stage]["outputs"];
    if (!outputs.contains(rel_path))
      throw IntegrityError(rel_path + " is not an output of stage " + producer_stage);
    const std::string path = paths_.out_dir + "/" + rel_path;
    if (!std::filesystem::exists(path)) throw IntegrityError(rel_path + " is missing");
    if (io::file_digest(path) != outputs.at(rel_path).get<std::string>())
      throw IntegrityError("digest mismatch for " + rel_path +
                           " (artifact modified or corrupted)");
  }

  void record_stage(const std::string& stage, std::uint64_t stage_seed,
                    const std::vector<std::string>& rel_paths, json extra = json::object()) {
    json outputs = json::object();
    for (const auto& rel : rel_paths) outputs[rel] = io::file_digest(paths_.out_dir + "/" + rel);
    json entry = {{"seed", stage_seed}, {"outputs", outputs}};
    for (const auto& item : extra.items()) entry[item.key()] = item.value();
    doc_["stages"][stage] = entry;
    io::write_file(paths_.manifest(), doc_.dump(2) + "\n");
  }

 private:
  PipelinePaths paths_;
  json doc_;
};

}  // namespace

SplitView split_indices(const SplitConfig& split) {
  SplitView view;
  std::size_t at = 0;
  for (std::size_t i = 0; i < split.train; ++i) view.train.push_back(at++);
  for (std::size_t i = 0; i < split.val; ++i) view.val.push_back(at++);
  for (std::size_t i = 0; i < split.test; ++i) view.test.push_back(at++);
  return view;
}

io::Dataset make_dataset(const ExperimentConfig& config, std::uint64_t master_seed) {
  io::Dataset dataset;
  dataset.config = config.network;
  dataset.config.area_side_m =
      NetworkConfig::area_side_for(config.network.n_pairs, config.network.density_per_km2);
  dataset.config_hash = experiment_config_hash(config);
  const std::size_t total = config.split.total();
  dataset.networks.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    dataset.networks[i] = generate_network(dataset.config, derive_seed(master_seed, "netgen", i));
    dataset.networks[i].id = network_id_for(i);
  }
  return dataset;
}

double calibrate_f_min(const ExperimentConfig& config, const io::Dataset& dataset,
                       std::uint64_t master_seed, std::size_t jobs) {
  const auto split = split_indices(config.split);
  std::vector<std::vector<double>> per_net(split.train.size());
  parallel_for(split.train.size(), jobs, [&](std::size_t i) {
    const auto& net = dataset.networks[split.train[i]];
    auto report = rollout(PolicySource::full_power(), net, dataset.config, config.eval.rollout_T,
                          derive_seed(master_seed, "calibrate", split.train[i]));
    per_net[i].resize(net.n());
    for (std::size_t r = 0; r < net.n(); ++r)
      per_net[i][r] = report.running_rates.at(config.eval.rollout_T - 1, r);
  });
  std::vector<double> pooled;
  for (const auto& rates : per_net) pooled.insert(pooled.end(), rates.begin(), rates.end());
  return percentile_nearest_rank(pooled, config.f_min_percentile);
}

io::BufferSet make_buffers(const ExperimentConfig& config, const io::Dataset& dataset,
                           std::uint64_t master_seed, std::size_t jobs) {
  io::BufferSet set;
  set.config_hash = experiment_config_hash(config);
  set.f_min = config.f_min_auto ? calibrate_f_min(config, dataset, master_seed, jobs)
                                : config.network.f_min;

  NetworkConfig net_config = dataset.config;
  net_config.f_min = set.f_min;
  set.buffers.resize(dataset.networks.size());
  parallel_for(dataset.networks.size(), jobs, [&](std::size_t i) {
    set.buffers[i] = run_expert(dataset.networks[i], config.expert, net_config,
                                derive_seed(master_seed, "expert", i));
  });
  return set;
}

namespace {

std::vector<TrainingNetwork> collect(const io::Dataset& dataset, const io::BufferSet& buffers,
                                     const NetworkConfig& net_config,
                                     const std::vector<std::size_t>& indices) {
  std::map<std::string, const ExpertBuffer*> by_id;
  for (const auto& b : buffers.buffers) by_id[b.network_id] = &b;

  std::vector<TrainingNetwork> nets;
  for (const auto idx : indices) {
    const auto& state = dataset.networks.at(idx);
    const auto it = by_id.find(state.id);
    if (it == by_id.end()) throw IntegrityError("no expert buffer for " + state.id);
    nets.push_back({state, build_gso(state, net_config), *it->second});
  }
  return nets;
}

}  // namespace

TrainResult run_training(const ExperimentConfig& config, const io::Dataset& dataset,
                         const io::BufferSet& buffers, std::uint64_t master_seed,
                         std::size_t jobs) {
  NetworkConfig net_config = dataset.config;
  net_config.f_min = buffers.f_min;
  const auto split = split_indices(config.split);
  const auto train_nets = collect(dataset, buffers, net_config, split.train);
  const auto val_nets = collect(dataset, buffers, net_config, split.val);
  const std::uint64_t seed = derive_seed(master_seed, "train");
  TrainResult result = train(train_nets, val_nets, net_config, config.gnn, config.train,
                             config.schedule, seed, jobs);
  result.best.train_seed = seed;
  return result;
}

EvalArtifacts run_eval(const ExperimentConfig& config, const io::Dataset& dataset,
                       const io::BufferSet& buffers, const Checkpoint& checkpoint,
                       std::uint64_t master_seed, std::size_t jobs) {
  NetworkConfig net_config = dataset.config;
  net_config.f_min = buffers.f_min;
  const auto split = split_indices(config.split);
  const auto test_nets = collect(dataset, buffers, net_config, split.test);
  const NoiseSchedule schedule = make_schedule(checkpoint.schedule);

  const std::vector<std::string> source_names = {"gdm", "expert_replay", "average_power",
                                                 "full_power"};
  std::vector<std::vector<RolloutReport>> reports(source_names.size());
  for (auto& r : reports) r.resize(test_nets.size());

  // One (source, network) rollout per work item; seeds depend only on the
  // network, so every source sees identical fading.
  const std::size_t n_nets = test_nets.size();
  parallel_for(source_names.size() * n_nets, jobs, [&](std::size_t item) {
    const std::size_t s = item / n_nets;
    const std::size_t i = item % n_nets;
    const auto& net = test_nets[i];
    const std::uint64_t seed = derive_seed(master_seed, "eval", split.test[i]);
    PolicySource source = PolicySource::full_power();
    if (source_names[s] == "gdm")
      source = PolicySource::gdm(checkpoint.params, schedule, net.gso, config.eval.gdm_mode,
                                 config.eval.rollout_T);
    else if (source_names[s] == "expert_replay")
      source = PolicySource::expert_replay(net.buffer);
    else if (source_names[s] == "average_power")
      source = PolicySource::average_power(net.buffer);
    reports[s][i] = rollout(std::move(source), net.state, net_config, config.eval.rollout_T, seed);
  });

  EvalArtifacts artifacts;
  artifacts.table = compare(reports, net_config.f_min, config.eval.horizons);

  json per_source = json::array();
  for (std::size_t s = 0; s < source_names.size(); ++s) {
    const auto summary = pooled_metrics(std::span(reports[s].data(), reports[s].size()),
                                        net_config.f_min, config.eval.horizons);
    json rows = json::array();
    for (std::size_t h = 0; h < config.eval.horizons.size(); ++h) {
      rows.push_back({{"horizon", config.eval.horizons[h]},
                      {"mean_rate", summary.mean_rate[h]},
                      {"p5_rate", summary.p5_rate[h]},
                      {"satisfaction", summary.satisfaction[h]}});
    }
    per_source.push_back({{"source", source_names[s]},
                          {"gdm_mode", reports[s].front().gdm_mode},
                          {"metrics", rows}});
  }
  artifacts.summary = {{"format", "gdmpc-eval-summary"},
                       {"version", 1},
                       {"f_min", net_config.f_min},
                       {"horizons", config.eval.horizons},
                       {"networks", json::array()},
                       {"sources", per_source}};
  for (const auto& net : test_nets) artifacts.summary["networks"].push_back(net.state.id);

  for (std::size_t s = 0; s < source_names.size(); ++s)
    for (std::size_t i = 0; i < n_nets; ++i)
      artifacts.rollout_csvs.push_back(
          {"eval/rollouts/" + source_names[s] + "_" + test_nets[i].state.id + ".csv",
           io::rollout_to_csv(reports[s][i])});
  return artifacts;
}

std::vector<StageStatus> run_pipeline(const ExperimentConfig& config, const std::string& out_dir,
                                      std::size_t jobs) {
  const PipelinePaths paths{out_dir};
  std::filesystem::create_directories(out_dir);
  const std::string config_hash = experiment_config_hash(config);
  Manifest manifest(paths, config_hash, config.master_seed);
  std::vector<StageStatus> statuses;

  std::string current_stage;
  try {
    current_stage = "netgen";
    if (manifest.stage_complete("netgen")) {
      statuses.push_back({"netgen", true});
    } else {
      io::save_dataset(make_dataset(config, config.master_seed), paths.dataset());
      manifest.record_stage("netgen", derive_seed(config.master_seed, "netgen"),
                            {"dataset.json"});
      statuses.push_back({"netgen", false});
    }

    current_stage = "expert";
    manifest.verify_input("netgen", "dataset.json");
    if (manifest.stage_complete("expert")) {
      statuses.push_back({"expert", true});
    } else {
      const auto dataset = io::load_dataset(paths.dataset());
      const auto buffers = make_buffers(config, dataset, config.master_seed, jobs);
      io::save_buffers(buffers, paths.buffers());
      manifest.record_stage("expert", derive_seed(config.master_seed, "expert"),
                            {"buffers.json"}, json{{"f_min", buffers.f_min}});
      statuses.push_back({"expert", false});
    }

    current_stage = "train";
    manifest.verify_input("netgen", "dataset.json");
    manifest.verify_input("expert", "buffers.json");
    if (manifest.stage_complete("train")) {
      statuses.push_back({"train", true});
    } else {
      const auto dataset = io::load_dataset(paths.dataset());
      const auto buffers = io::load_buffers(paths.buffers());
      auto result = run_training(config, dataset, buffers, config.master_seed, jobs);
      if (result.diverged) throw NumericalError("training diverged; last good checkpoint kept");
      io::save_checkpoint(result.best, paths.checkpoint());
      io::write_file(paths.trace(), io::trace_to_csv(result.trace));
      manifest.record_stage("train", derive_seed(config.master_seed, "train"),
                            {"ckpt/best.json", "ckpt/trace.csv"});
      statuses.push_back({"train", false});
    }

    current_stage = "eval";
    manifest.verify_input("netgen", "dataset.json");
    manifest.verify_input("expert", "buffers.json");
    manifest.verify_input("train", "ckpt/best.json");
    if (manifest.stage_complete("eval")) {
      statuses.push_back({"eval", true});
    } else {
      const auto dataset = io::load_dataset(paths.dataset());
      const auto buffers = io::load_buffers(paths.buffers());
      const auto checkpoint = io::load_checkpoint(paths.checkpoint());
      const auto artifacts = run_eval(config, dataset, buffers, checkpoint, config.master_seed,
                                      jobs);
      std::vector<std::string> outputs = {"eval/summary.json", "eval/compare.csv"};
      io::write_file(paths.summary(), artifacts.summary.dump(2) + "\n");
      io::write_file(paths.compare_csv(), artifacts.table.to_csv());
      for (const auto& [rel, csv] : artifacts.rollout_csvs) {
        io::write_file(out_dir + "/" + rel, csv);
        outputs.push_back(rel);
      }
      manifest.record_stage("eval", derive_seed(config.master_seed, "eval"), outputs);
      statuses.push_back({"eval", false});
    }
  } catch (const std::exception& e) {
    const json record = {{"stage", current_stage}, {"error", e.what()}};
    io::write_file(paths.error_record(), record.dump(2) + "\n");
    throw;
  }
  return statuses;
}

std::string slice_csv(const ExperimentConfig& config, const io::Dataset& dataset,
                      const io::BufferSet& buffers, const Checkpoint& checkpoint,
                      const std::string& network_id, std::size_t node_a, std::size_t node_b,
                      std::size_t n_samples, std::uint64_t seed) {
  const NetworkState* state = nullptr;
  for (const auto& net : dataset.networks)
    if (net.id == network_id) state = &net;
  if (state == nullptr) throw ConfigError("unknown network id " + network_id);
  const ExpertBuffer* buffer = nullptr;
  for (const auto& b : buffers.buffers)
    if (b.network_id == network_id) buffer = &b;
  if (buffer == nullptr) throw IntegrityError("no expert buffer for " + network_id);
  if (node_a >= state->n() || node_b >= state->n()) throw ConfigError("node index out of range");

  const Gso gso = build_gso(*state, dataset.config);
  const NoiseSchedule schedule = make_schedule(checkpoint.schedule);
  Rng rng(derive_seed(seed, "slice"));
  const Tensor generated = sample_policy(gso, checkpoint.params, schedule, rng, n_samples,
                                         dataset.config.p_max_w);

  const double p_max = dataset.config.p_max_w;
  std::string csv = "source,x_a,x_b\n";
  char line[96];
  for (std::size_t b = 0; b < buffer->capacity(); ++b) {
    std::snprintf(line, sizeof line, "expert,%.10g,%.10g\n", buffer->samples.at(b, node_a) / p_max,
                  buffer->samples.at(b, node_b) / p_max);
    csv += line;
  }
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::snprintf(line, sizeof line, "gdm,%.10g,%.10g\n", generated.at(s, node_a) / p_max,
                  generated.at(s, node_b) / p_max);
    csv += line;
  }
  return csv;
}

}  // namespace gdmpc
