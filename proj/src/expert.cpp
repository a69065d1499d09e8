#include "gdmpc/expert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gdmpc {

namespace {
constexpr double kInvLn2 = 1.4426950408889634;  // 1/ln(2)
}

void ExpertConfig::validate() const {
  if (t_total <= t_burn) throw ConfigError("expert: t_total must exceed t_burn");
  if (buffer_capacity == 0 || buffer_capacity > t_total - t_burn)
    throw ConfigError("expert: require 0 < B <= t_total - t_burn");
  if (!(eta_dual > 0.0 && eta_primal > 0.0)) throw ConfigError("expert: step sizes must be positive");
  if (primal_steps == 0) throw ConfigError("expert: primal_steps must be >= 1");
  if (n_restarts == 0) throw ConfigError("expert: n_restarts must be >= 1");
}

std::vector<double> ExpertBuffer::row(std::size_t b) const {
  const std::size_t N = n();
  std::vector<double> out(N);
  for (std::size_t i = 0; i < N; ++i) out[i] = samples.at(b, i);
  return out;
}

std::vector<double> ExpertBuffer::row_mean() const {
  const std::size_t B = capacity(), N = n();
  std::vector<double> mean(N, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < N; ++i) mean[i] += samples.at(b, i);
  for (auto& m : mean) m /= static_cast<double>(B);
  return mean;
}

double ExpertBuffer::feasible_fraction(double f_min) const {
  std::size_t ok = 0;
  for (double r : running_rates)
    if (r >= f_min) ++ok;
  return static_cast<double>(ok) / static_cast<double>(running_rates.size());
}

double lagrangian_value(const std::vector<double>& x, const DualState& lambdas,
                        const std::vector<double>& rates, const NetworkConfig& config) {
  (void)x;
  const std::size_t n = rates.size();
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    value += rates[i] / static_cast<double>(n) + lambdas.lambdas[i] * (rates[i] - config.f_min);
  return value;
}

std::vector<double> lagrangian_gradient(const std::vector<double>& x, const DualState& lambdas,
                                        const FadingSample& fading, const NetworkConfig& config) {
  const std::size_t n = x.size();
  const double noise = config.noise_power_w();

  // Per-receiver signal and interference-plus-noise totals.
  std::vector<double> sig(n), itf(n), coef(n);
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = x[i] * fading.gains.at(i, i);
    double acc = noise;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) acc += x[j] * fading.gains.at(j, i);
    itf[i] = acc;
    coef[i] = 1.0 / static_cast<double>(n) + lambdas.lambdas[i];
  }

  std::vector<double> grad(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double g = coef[j] * kInvLn2 * fading.gains.at(j, j) / (itf[j] + sig[j]);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      g -= coef[i] * kInvLn2 * sig[i] * fading.gains.at(j, i) / (itf[i] * (itf[i] + sig[i]));
    }
    if (!std::isfinite(g)) throw NumericalError("non-finite Lagrangian gradient");
    grad[j] = g;
  }
  return grad;
}

namespace {

std::vector<double> ascend(std::vector<double> x, const DualState& lambdas,
                           const FadingSample& fading, const ExpertConfig& config,
                           const NetworkConfig& net_config) {
  for (std::size_t step = 0; step < config.primal_steps; ++step) {
    const auto grad = lagrangian_gradient(x, lambdas, fading, net_config);
    for (std::size_t j = 0; j < x.size(); ++j)
      x[j] = std::clamp(x[j] + config.eta_primal * grad[j], 0.0, net_config.p_max_w);
  }
  return x;
}

}  // namespace

std::vector<double> maximize_lagrangian(const DualState& lambdas, const FadingSample& fading,
                                        const std::vector<double>& x_init,
                                        const ExpertConfig& config,
                                        const NetworkConfig& net_config, Rng& rng) {
  const std::size_t n = x_init.size();
  std::vector<std::vector<double>> starts;
  starts.push_back(x_init);
  if (config.n_restarts > 1) starts.emplace_back(n, 0.0);
  if (config.n_restarts > 2) starts.emplace_back(n, net_config.p_max_w);
  std::size_t total = std::max<std::size_t>(config.n_restarts, starts.size());
  if (config.corner_starts) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> corner(n, 0.0);
      corner[i] = net_config.p_max_w;
      starts.push_back(std::move(corner));
    }
    total += n;
  }
  while (starts.size() < total) {
    std::vector<double> r(n);
    for (auto& v : r) v = rng.uniform(0.0, net_config.p_max_w);
    starts.push_back(std::move(r));
  }

  std::vector<double> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (auto& start : starts) {
    auto x = ascend(std::move(start), lambdas, fading, config, net_config);
    const auto rates = instantaneous_rates(x, fading, net_config);
    const double score = lagrangian_value(x, lambdas, rates, net_config);
    if (score > best_score) {
      best_score = score;
      best = std::move(x);
    }
  }
  return best;
}

DualState dual_update(const DualState& lambdas, const std::vector<double>& rates,
                      const ExpertConfig& config, const NetworkConfig& net_config) {
  DualState next(lambdas.lambdas.size());
  for (std::size_t i = 0; i < rates.size(); ++i)
    next.lambdas[i] =
        std::max(0.0, lambdas.lambdas[i] - config.eta_dual * (rates[i] - net_config.f_min));
  return next;
}

ExpertBuffer run_expert(const NetworkState& state, const ExpertConfig& config,
                        const NetworkConfig& net_config, std::uint64_t seed) {
  config.validate();
  const std::size_t n = state.n();
  const std::size_t B = config.buffer_capacity;

  Rng restart_rng(derive_seed(seed, "expert-restarts"));
  const std::uint64_t fading_base = derive_seed(seed, "expert-fading");

  ExpertBuffer buffer;
  buffer.network_id = state.id;
  buffer.samples = Tensor({B, n});

  DualState lambdas(n);
  std::vector<double> x(n, net_config.p_max_w);
  std::vector<double> rate_sum(n, 0.0);
  const std::size_t first_stored = config.t_total - B + 1;

  for (std::size_t t = 1; t <= config.t_total; ++t) {
    const FadingSample fading = sample_fading(state, derive_seed(fading_base, "t", t));
    x = maximize_lagrangian(lambdas, fading, x, config, net_config, restart_rng);
    const auto rates = instantaneous_rates(x, fading, net_config);
    lambdas = dual_update(lambdas, rates, config, net_config);
    for (std::size_t i = 0; i < n; ++i) rate_sum[i] += rates[i];
    if (t >= first_stored)
      for (std::size_t i = 0; i < n; ++i) buffer.samples.at(t - first_stored, i) = x[i];
  }

  buffer.final_lambda = lambdas.lambdas;
  buffer.running_rates.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    buffer.running_rates[i] = rate_sum[i] / static_cast<double>(config.t_total);
  return buffer;
}

}  // namespace gdmpc
