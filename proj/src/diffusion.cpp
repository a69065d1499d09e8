#include "gdmpc/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

namespace gdmpc {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;
}  // namespace

double NoiseSchedule::snr(std::size_t k) const {
  if (config.snr_form == SnrForm::conventional) return alpha_bar[k] / (1.0 - alpha_bar[k]);
  const double s2 = sigma[k] * sigma[k];
  if (s2 == 0.0) return std::numeric_limits<double>::infinity();
  return alpha[k] * alpha[k] / s2;
}

double NoiseSchedule::loss_weight(std::size_t k) const {
  const double s = snr(k);
  const double w = std::isinf(s) ? config.weight_max : std::log(s);
  return std::clamp(w, config.weight_min, config.weight_max);
}

std::uint64_t NoiseSchedule::digest() const {
  std::uint64_t h = kFnvOffset;
  auto mix = [&h](const std::vector<double>& v) {
    for (double d : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= kFnvPrime;
      }
    }
  };
  mix(beta);
  mix(alpha_bar);
  mix(sigma);
  return h;
}

NoiseSchedule make_schedule(const ScheduleConfig& config) {
  const std::size_t K = config.steps;
  if (K < 1) throw ConfigError("noise schedule requires K >= 1");

  NoiseSchedule s;
  s.config = config;
  s.beta.assign(K + 1, 0.0);
  s.alpha.assign(K + 1, 0.0);
  s.alpha_bar.assign(K + 1, 0.0);
  s.sigma.assign(K + 1, 0.0);
  s.alpha_bar[0] = 1.0;

  if (config.kind == ScheduleKind::linear) {
    const double b0 = 1e-4, b1 = 2e-2;
    for (std::size_t k = 1; k <= K; ++k)
      s.beta[k] = (K == 1) ? b0 : b0 + (b1 - b0) * static_cast<double>(k - 1) / static_cast<double>(K - 1);
  } else {
    const double off = 0.008;
    auto f = [&](double k) {
      const double t = ((k / static_cast<double>(K)) + off) / (1.0 + off);
      const double c = std::cos(t * kPi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (std::size_t k = 1; k <= K; ++k) {
      const double ab = f(static_cast<double>(k)) / f0;
      s.beta[k] = std::min(1.0 - ab / prev, 0.999);
      prev = ab;
    }
  }

  for (std::size_t k = 1; k <= K; ++k) {
    if (!(s.beta[k] > 0.0 && s.beta[k] < 1.0)) throw NumericalError("beta outside (0, 1)");
    s.alpha[k] = 1.0 - s.beta[k];
    s.alpha_bar[k] = s.alpha_bar[k - 1] * s.alpha[k];
    s.sigma[k] = std::sqrt((1.0 - s.alpha_bar[k - 1]) / (1.0 - s.alpha_bar[k]) * s.beta[k]);
  }
  return s;
}

std::vector<double> to_diffusion_space(const std::vector<double>& x, double p_max) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / p_max - 0.5;
  return y;
}

std::vector<double> from_diffusion_space(const std::vector<double>& y, double p_max) {
  std::vector<double> x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    x[i] = std::clamp((y[i] + 0.5) * p_max, 0.0, p_max);
  return x;
}

Tensor to_diffusion_space(const Tensor& x, double p_max) {
  return Tensor(x.shape(), to_diffusion_space(x.vec(), p_max));
}

Tensor from_diffusion_space(const Tensor& y, double p_max) {
  return Tensor(y.shape(), from_diffusion_space(y.vec(), p_max));
}

Tensor q_sample(const Tensor& x0, std::size_t k, const Tensor& epsilon,
                const NoiseSchedule& schedule) {
  if (!x0.same_shape(epsilon)) throw ContractError("q_sample shape mismatch");
  if (k > schedule.steps()) throw ContractError("q_sample timestep out of range");
  const double a = std::sqrt(schedule.alpha_bar[k]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[k]);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * epsilon[i];
  return out;
}

Tensor q_sample(const Tensor& x0, const std::vector<std::size_t>& k, const Tensor& epsilon,
                const NoiseSchedule& schedule) {
  if (!x0.same_shape(epsilon) || x0.rank() != 2 || k.size() != x0.dim(0))
    throw ContractError("q_sample batch shape mismatch");
  const std::size_t S = x0.dim(0), N = x0.dim(1);
  Tensor out(x0.shape());
  for (std::size_t s = 0; s < S; ++s) {
    if (k[s] > schedule.steps()) throw ContractError("q_sample timestep out of range");
    const double a = std::sqrt(schedule.alpha_bar[k[s]]);
    const double b = std::sqrt(1.0 - schedule.alpha_bar[k[s]]);
    for (std::size_t i = 0; i < N; ++i) out.at(s, i) = a * x0.at(s, i) + b * epsilon.at(s, i);
  }
  return out;
}

void GraphSignals::validate(const NoiseSchedule& schedule) const {
  if (gso == nullptr) throw ContractError("GraphSignals without a GSO");
  if (x0.rank() != 2 || !x0.same_shape(epsilon) || k.size() != x0.dim(0))
    throw ContractError("GraphSignals shape mismatch");
  for (double v : x0.vec())
    if (!(v >= -0.5 && v <= 0.5)) throw ContractError("x0 outside diffusion space [-1/2, 1/2]");
  if (!epsilon.all_finite()) throw ContractError("non-finite epsilon");
  for (auto ks : k)
    if (ks < 1 || ks > schedule.steps()) throw ContractError("timestep outside 1..K");
}

GradBuffer make_grad_buffer(const GnnParams& params) {
  GradBuffer grads;
  grads.reserve(params.entries.size());
  for (const auto& e : params.entries) grads.emplace_back(e.tensor.shape());
  return grads;
}

namespace {

// Loss (and optional param gradients) for one graph's signal stack.
double graph_loss_term(const GraphSignals& gs, const GnnParams& params,
                       const NoiseSchedule& schedule, GradBuffer* grads) {
  ad::Tape tape(grads != nullptr);
  std::vector<ad::Tape::Id> param_ids;
  param_ids.reserve(params.entries.size());
  for (const auto& e : params.entries) param_ids.push_back(tape.leaf(e.tensor));

  const Tensor x_k = q_sample(gs.x0, gs.k, gs.epsilon, schedule);
  std::vector<double> weights(gs.k.size());
  for (std::size_t s = 0; s < weights.size(); ++s) weights[s] = schedule.loss_weight(gs.k[s]);

  const auto pred = predict_noise_on_tape(tape, params.config, param_ids, tape.constant(x_k),
                                          gs.k, *gs.gso);
  const auto loss = tape.weighted_row_sse(pred, tape.constant(gs.epsilon), std::move(weights));
  const double value = tape.value(loss).scalar_value();
  if (!std::isfinite(value)) throw NumericalError("non-finite DDPM loss");

  if (grads != nullptr) {
    tape.backward(loss);
    for (std::size_t p = 0; p < param_ids.size(); ++p) {
      const Tensor& g = tape.grad(param_ids[p]);
      double* acc = (*grads)[p].data();
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
    }
  }
  return value;
}

}  // namespace

double ddpm_loss_grad(const DiffusionBatch& batch, const GnnParams& params,
                      const NoiseSchedule& schedule, GradBuffer& grads, std::size_t jobs) {
  if (batch.empty()) throw ContractError("empty diffusion batch");
  std::size_t total_signals = 0;
  for (const auto& gs : batch) {
    gs.validate(schedule);
    total_signals += gs.x0.dim(0);
  }

  const std::size_t g = batch.size();
  std::vector<double> partial(g, 0.0);
  std::vector<GradBuffer> partial_grads;
  partial_grads.reserve(g);
  for (std::size_t i = 0; i < g; ++i) partial_grads.push_back(make_grad_buffer(params));

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, g));
  if (workers == 1) {
    for (std::size_t i = 0; i < g; ++i)
      partial[i] = graph_loss_term(batch[i], params, schedule, &partial_grads[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (std::size_t i = w; i < g; i += workers)
            partial[i] = graph_loss_term(batch[i], params, schedule, &partial_grads[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Fixed-order reduction: graph i's contribution lands before graph i+1's.
  double loss = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const double share = static_cast<double>(batch[i].x0.dim(0)) / static_cast<double>(total_signals);
    loss += partial[i] * share;
    for (std::size_t p = 0; p < grads.size(); ++p) {
      double* acc = grads[p].data();
      const double* src = partial_grads[i][p].data();
      for (std::size_t j = 0; j < grads[p].numel(); ++j) acc[j] += share * src[j];
    }
  }
  return loss;
}

double ddpm_loss(const DiffusionBatch& batch, const GnnParams& params,
                 const NoiseSchedule& schedule) {
  if (batch.empty()) throw ContractError("empty diffusion batch");
  std::size_t total_signals = 0;
  double acc = 0.0;
  for (const auto& gs : batch) {
    gs.validate(schedule);
    acc += graph_loss_term(gs, params, schedule, nullptr) * static_cast<double>(gs.x0.dim(0));
    total_signals += gs.x0.dim(0);
  }
  return acc / static_cast<double>(total_signals);
}

Tensor ddpm_step(const Tensor& x_k, std::size_t k, const Gso& gso, const GnnParams& params,
                 const NoiseSchedule& schedule, Rng& rng) {
  if (k < 1 || k > schedule.steps()) throw ContractError("ddpm_step requires 1 <= k <= K");
  const std::size_t S = x_k.dim(0), N = x_k.dim(1);
  const Tensor eps_hat = predict_noise(x_k, std::vector<std::size_t>(S, k), gso, params);

  // The sampling update routed through the implied clean sample, which is
  // clamped to the diffusion-space support (training signals are guaranteed
  // inside [-1/2, 1/2]). Without the clamp, the near-unity betas at the end
  // of a cosine schedule amplify predictor error by 1/sqrt(alpha_k) and the
  // chain diverges; with it, both forms coincide whenever the implied clean
  // sample is already in support.
  const double ab = schedule.alpha_bar[k];
  const double ab_prev = schedule.alpha_bar[k - 1];
  const double x0_coef = std::sqrt(ab_prev) * schedule.beta[k] / (1.0 - ab);
  const double xk_coef = std::sqrt(schedule.alpha[k]) * (1.0 - ab_prev) / (1.0 - ab);
  Tensor out({S, N});
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x0 = std::clamp(
        (x_k[i] - std::sqrt(1.0 - ab) * eps_hat[i]) / std::sqrt(ab), -0.5, 0.5);
    out[i] = x0_coef * x0 + xk_coef * x_k[i];
  }
  if (k > 1 && schedule.sigma[k] > 0.0) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += schedule.sigma[k] * rng.normal();
  }
  if (!out.all_finite()) throw NumericalError("reverse chain diverged at k=" + std::to_string(k));
  return out;
}

Tensor sample_diffusion(const Gso& gso, const GnnParams& params, const NoiseSchedule& schedule,
                        Rng& rng, std::size_t n_samples) {
  const std::size_t N = gso.n();
  Tensor x({n_samples, N});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  for (std::size_t k = schedule.steps(); k >= 1; --k) x = ddpm_step(x, k, gso, params, schedule, rng);
  return x;
}

Tensor sample_policy(const Gso& gso, const GnnParams& params, const NoiseSchedule& schedule,
                     Rng& rng, std::size_t n_samples, double p_max) {
  return from_diffusion_space(sample_diffusion(gso, params, schedule, rng, n_samples), p_max);
}

}  // namespace gdmpc
