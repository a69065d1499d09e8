#pragma once

#include <cstdint>
#include <vector>

#include "gdmpc/diffusion.hpp"
#include "gdmpc/eval.hpp"
#include "gdmpc/expert.hpp"
#include "gdmpc/gnn.hpp"

namespace gdmpc {

struct TrainConfig {
  std::size_t max_epochs = 2000;
  std::size_t batch_graphs = 8;
  std::size_t signals_per_graph = 64;
  double lr_init = 1e-2;
  double lr_min = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warm_restart_t0 = 250;
  std::size_t warm_restart_mult = 2;
  std::size_t validate_every = 100;
  std::size_t val_rollout_T = 50;
  double grad_clip = 1.0;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

AdamState make_adam_state(const GnnParams& params);

// Standard bias-corrected first/second-moment update.
void adam_step(GnnParams& params, const GradBuffer& grads, AdamState& state, double lr,
               const TrainConfig& config);

// Cosine decay with warm restarts; cycle lengths T_0, T_0*T_mult, ...
double lr_at(std::size_t epoch, const TrainConfig& config);

// Fisher-Yates permutation of 0..n-1; the per-epoch graph visit order.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

struct TrainingNetwork {
  NetworkState state;
  Gso gso;
  ExpertBuffer buffer;
};

struct TraceRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool validated = false;
  double val_mean_rate = 0.0;
  double val_p5 = 0.0;
  double val_satisfaction = 0.0;
};

struct Checkpoint {
  GnnParams params;
  ScheduleConfig schedule;
  TrainConfig train;
  std::size_t epoch = 0;
  double val_p5 = 0.0;
  double val_mean_rate = 0.0;
  double val_satisfaction = 0.0;
  std::uint64_t train_seed = 0;  // RNG descriptor: all streams derive from it
};

struct TrainResult {
  Checkpoint best;
  std::vector<TraceRow> trace;
  bool diverged = false;
};

// GDM validation rollouts on the validation networks; pooled metrics at
// horizon rollout_T. Rollout seeds are fixed per network, so metrics from
// different epochs are comparable.
MetricsSummary validate(const GnnParams& params, const NoiseSchedule& schedule,
                        const std::vector<TrainingNetwork>& val_nets,
                        const NetworkConfig& net_config, std::size_t rollout_T,
                        std::uint64_t seed);

TrainResult train(const std::vector<TrainingNetwork>& train_nets,
                  const std::vector<TrainingNetwork>& val_nets, const NetworkConfig& net_config,
                  const GnnConfig& gnn_config, const TrainConfig& config,
                  const ScheduleConfig& schedule_config, std::uint64_t seed, std::size_t jobs = 1);

}  // namespace gdmpc
