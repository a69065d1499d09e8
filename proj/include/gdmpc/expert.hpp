#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdmpc/net.hpp"
#include "gdmpc/rng.hpp"
#include "gdmpc/tensor.hpp"

namespace gdmpc {

// Nonnegative multipliers, one per receiver minimum-rate constraint.
struct DualState {
  std::vector<double> lambdas;

  explicit DualState(std::size_t n = 0) : lambdas(n, 0.0) {}
};

struct ExpertConfig {
  std::size_t t_total = 640;
  std::size_t t_burn = 128;
  double eta_dual = 0.2;
  double eta_primal = 5e-4;  // absolute; configs default it to 0.05 * p_max
  std::size_t primal_steps = 50;
  std::size_t n_restarts = 4;
  // Also start each subproblem from every axis corner p_max * e_i. The
  // single-user corners sit in narrow attraction basins that interior and
  // random starts miss under strong interference.
  bool corner_starts = true;
  std::size_t buffer_capacity = 500;  // B

  void validate() const;
};

// The empirical expert distribution for one network: uniform over the stored
// post-burn-in primal iterates.
struct ExpertBuffer {
  std::string network_id;
  Tensor samples;                     // (B, N), temporal order
  std::vector<double> final_lambda;   // N
  std::vector<double> running_rates;  // per-receiver ergodic estimate at t_total

  std::size_t capacity() const { return samples.dim(0); }
  std::size_t n() const { return samples.dim(1); }
  std::vector<double> row(std::size_t b) const;
  std::vector<double> row_mean() const;
  double feasible_fraction(double f_min) const;
};

// (1/N) sum_i r_i + sum_i lambda_i (r_i - f_min)
double lagrangian_value(const std::vector<double>& x, const DualState& lambdas,
                        const std::vector<double>& rates, const NetworkConfig& config);

// Analytic gradient of the Lagrangian of the instantaneous rates w.r.t. x.
std::vector<double> lagrangian_gradient(const std::vector<double>& x, const DualState& lambdas,
                                        const FadingSample& fading, const NetworkConfig& config);

// Projected gradient ascent from n_restarts starts {x_init, 0, p_max*1,
// random...}; returns the best-scoring terminal point.
std::vector<double> maximize_lagrangian(const DualState& lambdas, const FadingSample& fading,
                                        const std::vector<double>& x_init,
                                        const ExpertConfig& config,
                                        const NetworkConfig& net_config, Rng& rng);

// lambda_i <- max(0, lambda_i - eta_dual (r_i - f_min))
DualState dual_update(const DualState& lambdas, const std::vector<double>& rates,
                      const ExpertConfig& config, const NetworkConfig& net_config);

ExpertBuffer run_expert(const NetworkState& state, const ExpertConfig& config,
                        const NetworkConfig& net_config, std::uint64_t seed);

}  // namespace gdmpc
