#include "gdmpc/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace gdmpc {

void TrainConfig::validate() const {
  if (max_epochs < 1 || batch_graphs < 1 || signals_per_graph < 1 || validate_every < 1 ||
      warm_restart_t0 < 1 || warm_restart_mult < 1 || val_rollout_T < 1)
    throw ConfigError("train: counts must be >= 1");
  if (!(lr_init > 0.0)) throw ConfigError("train: lr_init must be positive");
  if (!(lr_min >= 0.0 && lr_min <= lr_init)) throw ConfigError("train: need 0 <= lr_min <= lr_init");
}

AdamState make_adam_state(const GnnParams& params) {
  AdamState state;
  state.m.reserve(params.entries.size());
  state.v.reserve(params.entries.size());
  for (const auto& e : params.entries) {
    state.m.emplace_back(e.tensor.shape());
    state.v.emplace_back(e.tensor.shape());
  }
  return state;
}

void adam_step(GnnParams& params, const GradBuffer& grads, AdamState& state, double lr,
               const TrainConfig& config) {
  if (grads.size() != params.entries.size()) throw ContractError("adam: gradient buffer mismatch");
  for (const auto& g : grads)
    if (!g.all_finite()) throw NumericalError("adam: non-finite gradient");

  state.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    double* m = state.m[p].data();
    double* v = state.v[p].data();
    double* w = params.entries[p].tensor.data();
    const double* g = grads[p].data();
    for (std::size_t i = 0; i < grads[p].numel(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  std::size_t start = 0;
  std::size_t len = config.warm_restart_t0;
  while (epoch >= start + len) {
    start += len;
    len *= config.warm_restart_mult;
  }
  const double t = static_cast<double>(epoch - start) / static_cast<double>(len);
  return config.lr_min +
         (config.lr_init - config.lr_min) * (1.0 + std::cos(3.14159265358979323846 * t)) / 2.0;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

MetricsSummary validate(const GnnParams& params, const NoiseSchedule& schedule,
                        const std::vector<TrainingNetwork>& val_nets,
                        const NetworkConfig& net_config, std::size_t rollout_T,
                        std::uint64_t seed) {
  std::vector<RolloutReport> reports;
  reports.reserve(val_nets.size());
  for (std::size_t i = 0; i < val_nets.size(); ++i) {
    auto source = PolicySource::gdm(params, schedule, val_nets[i].gso, GdmSampling::cached,
                                    rollout_T);
    reports.push_back(rollout(std::move(source), val_nets[i].state, net_config, rollout_T,
                              derive_seed(seed, "validate", i)));
  }
  return pooled_metrics(std::span(reports.data(), reports.size()), net_config.f_min, {rollout_T});
}

namespace {

double clip_gradient_norm(GradBuffer& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return norm;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= scale;
  return norm;
}

GraphSignals draw_signals(const TrainingNetwork& net, const NetworkConfig& net_config,
                          const NoiseSchedule& schedule, std::size_t signals, Rng& rng) {
  const std::size_t n = net.state.n();
  GraphSignals gs;
  gs.gso = &net.gso;
  gs.x0 = Tensor({signals, n});
  gs.epsilon = Tensor({signals, n});
  gs.k.resize(signals);
  for (std::size_t s = 0; s < signals; ++s) {
    const std::size_t row = rng.uniform_index(net.buffer.capacity());
    for (std::size_t i = 0; i < n; ++i)
      gs.x0.at(s, i) = net.buffer.samples.at(row, i) / net_config.p_max_w - 0.5;
    gs.k[s] = 1 + rng.uniform_index(schedule.steps());
    for (std::size_t i = 0; i < n; ++i) gs.epsilon.at(s, i) = rng.normal();
  }
  return gs;
}

}  // namespace

TrainResult train(const std::vector<TrainingNetwork>& train_nets,
                  const std::vector<TrainingNetwork>& val_nets, const NetworkConfig& net_config,
                  const GnnConfig& gnn_config, const TrainConfig& config,
                  const ScheduleConfig& schedule_config, std::uint64_t seed, std::size_t jobs) {
  config.validate();
  if (train_nets.empty()) throw ContractError("train: no training networks");
  for (const auto& net : train_nets)
    if (net.buffer.capacity() == 0) throw ContractError("train: network without expert buffer");

  const NoiseSchedule schedule = make_schedule(schedule_config);
  GnnParams params = GnnParams::init(gnn_config, derive_seed(seed, "init"));

  AdamState adam = make_adam_state(params);
  TrainResult result;
  result.best.schedule = schedule_config;
  result.best.train = config;
  bool have_best = false;

  auto run_validation = [&](std::size_t epoch) {
    if (val_nets.empty()) return;
    const auto summary =
        validate(params, schedule, val_nets, net_config, config.val_rollout_T, seed);
    TraceRow& row = result.trace.back();
    row.validated = true;
    row.val_mean_rate = summary.mean_rate[0];
    row.val_p5 = summary.p5_rate[0];
    row.val_satisfaction = summary.satisfaction[0];
    const bool better =
        !have_best || summary.p5_rate[0] > result.best.val_p5 ||
        (summary.p5_rate[0] == result.best.val_p5 && summary.mean_rate[0] > result.best.val_mean_rate);
    if (better) {
      result.best.params = params;
      result.best.epoch = epoch;
      result.best.val_p5 = summary.p5_rate[0];
      result.best.val_mean_rate = summary.mean_rate[0];
      result.best.val_satisfaction = summary.satisfaction[0];
      have_best = true;
    }
  };

  GnnParams last_good = params;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng epoch_rng(derive_seed(seed, "epoch", epoch));
    const auto order = shuffled_indices(train_nets.size(), epoch_rng);

    const double lr = lr_at(epoch, config);
    double epoch_loss = 0.0;
    std::size_t graphs_seen = 0;
    bool diverged = false;

    for (std::size_t at = 0; at < order.size() && !diverged; at += config.batch_graphs) {
      const std::size_t batch_end = std::min(at + config.batch_graphs, order.size());
      DiffusionBatch batch;
      for (std::size_t b = at; b < batch_end; ++b)
        batch.push_back(draw_signals(train_nets[order[b]], net_config, schedule,
                                     config.signals_per_graph, epoch_rng));
      try {
        GradBuffer grads = make_grad_buffer(params);
        const double loss = ddpm_loss_grad(batch, params, schedule, grads, jobs);
        clip_gradient_norm(grads, config.grad_clip);
        adam_step(params, grads, adam, lr, config);
        epoch_loss += loss * static_cast<double>(batch.size());
        graphs_seen += batch.size();
      } catch (const NumericalError&) {
        diverged = true;
      }
    }

    if (diverged) {
      if (!have_best) {
        result.best.params = last_good;
        result.best.epoch = epoch;
      }
      result.diverged = true;
      break;
    }

    last_good = params;
    TraceRow row;
    row.epoch = epoch;
    row.loss = epoch_loss / static_cast<double>(graphs_seen);
    row.lr = lr;
    result.trace.push_back(row);

    const bool last_epoch = (epoch + 1 == config.max_epochs);
    if ((epoch + 1) % config.validate_every == 0 || last_epoch) run_validation(epoch);
  }

  if (!have_best) {
    // No validation networks (or divergence before the first checkpoint).
    if (!result.diverged) {
      result.best.params = params;
      result.best.epoch = config.max_epochs == 0 ? 0 : config.max_epochs - 1;
    }
  }
  return result;
}

}  // namespace gdmpc
