#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdmpc/gnn.hpp"
#include "gdmpc/net.hpp"
#include "gdmpc/rng.hpp"
#include "gdmpc/tensor.hpp"

namespace gdmpc {

enum class ScheduleKind { linear, cosine };
enum class SnrForm { conventional, alpha_sq };  // alpha_bar/(1-alpha_bar) vs alpha_k^2/sigma_k^2

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::cosine;
  std::size_t steps = 200;  // K
  SnrForm snr_form = SnrForm::conventional;
  // Clamp bounds for the log-SNR loss weight. The floor must stay O(1):
  // high-noise timesteps otherwise receive ~0 gradient and the reverse chain
  // never learns to contract from its Gaussian start.
  double weight_min = 1.0;
  double weight_max = 5.0;
};

// Arrays are indexed by timestep k = 1..K directly; index 0 is unused except
// for alpha_bar[0] = 1. sigma_k^2 is the posterior variance beta_tilde_k.
struct NoiseSchedule {
  ScheduleConfig config;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  std::size_t steps() const { return config.steps; }
  double snr(std::size_t k) const;
  // clamp(log(SNR(k)), [weight_min, weight_max])
  double loss_weight(std::size_t k) const;
  std::uint64_t digest() const;
};

NoiseSchedule make_schedule(const ScheduleConfig& config);

// Affine map [0, p_max] <-> [-1/2, 1/2]; the inverse projects onto the support.
std::vector<double> to_diffusion_space(const std::vector<double>& x, double p_max);
std::vector<double> from_diffusion_space(const std::vector<double>& y, double p_max);
Tensor to_diffusion_space(const Tensor& x, double p_max);
Tensor from_diffusion_space(const Tensor& y, double p_max);

// x_k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps
Tensor q_sample(const Tensor& x0, std::size_t k, const Tensor& epsilon,
                const NoiseSchedule& schedule);
// Per-row timesteps for a (S, N) batch.
Tensor q_sample(const Tensor& x0, const std::vector<std::size_t>& k, const Tensor& epsilon,
                const NoiseSchedule& schedule);

// Training mini-batch: per-graph signal stacks in diffusion space.
struct GraphSignals {
  const Gso* gso = nullptr;
  Tensor x0;                    // (S, N), entries in [-1/2, 1/2]
  std::vector<std::size_t> k;   // S timesteps in 1..K
  Tensor epsilon;               // (S, N)

  void validate(const NoiseSchedule& schedule) const;
};
using DiffusionBatch = std::vector<GraphSignals>;

// Aligned with GnnParams::entries.
using GradBuffer = std::vector<Tensor>;
GradBuffer make_grad_buffer(const GnnParams& params);

double ddpm_loss(const DiffusionBatch& batch, const GnnParams& params,
                 const NoiseSchedule& schedule);
// Same loss; additionally accumulates d loss / d params into grads (which must
// be zeroed by the caller). Per-graph terms may run on jobs worker threads;
// the reduction order is fixed, so results are bit-reproducible.
double ddpm_loss_grad(const DiffusionBatch& batch, const GnnParams& params,
                      const NoiseSchedule& schedule, GradBuffer& grads, std::size_t jobs = 1);

// One reverse transition for a (S, N) stack at common timestep k.
Tensor ddpm_step(const Tensor& x_k, std::size_t k, const Gso& gso, const GnnParams& params,
                 const NoiseSchedule& schedule, Rng& rng);

// Full reverse chain from x_K ~ N(0, I); returns (n_samples, N) in diffusion space.
Tensor sample_diffusion(const Gso& gso, const GnnParams& params, const NoiseSchedule& schedule,
                        Rng& rng, std::size_t n_samples);
// Reverse chain + inverse affine transform + projection onto [0, p_max]^N.
Tensor sample_policy(const Gso& gso, const GnnParams& params, const NoiseSchedule& schedule,
                     Rng& rng, std::size_t n_samples, double p_max);

}  // namespace gdmpc
