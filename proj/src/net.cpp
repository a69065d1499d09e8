#include "gdmpc/net.hpp"

#include <cmath>

#include "gdmpc/rng.hpp"

namespace gdmpc {

namespace {
constexpr double kPi = 3.14159265358979323846;
// Links shorter than this would sit far outside the path-loss model's range.
constexpr double kMinLinkDistanceM = 1e-3;
}  // namespace

double NetworkConfig::area_side_for(std::size_t n_pairs, double density_per_km2) {
  return std::sqrt(static_cast<double>(n_pairs) / density_per_km2) * 1000.0;
}

void NetworkConfig::validate() const {
  if (n_pairs < 2) throw ConfigError("n_pairs must be >= 2");
  if (!(p_max_w > 0.0)) throw ConfigError("p_max must be positive");
  if (!(bandwidth_hz > 0.0)) throw ConfigError("bandwidth must be positive");
  if (!(noise_psd_w_per_hz > 0.0)) throw ConfigError("noise PSD must be positive (linear W/Hz)");
  if (!(density_per_km2 > 0.0)) throw ConfigError("density must be positive");
  if (!(shadowing_sigma_db >= 0.0)) throw ConfigError("shadowing sigma must be >= 0");
  if (!(f_min >= 0.0)) throw ConfigError("f_min must be >= 0");
  if (!(rx_dist_min_m > 0.0 && rx_dist_min_m < rx_dist_max_m && rx_dist_max_m < breakpoint_m))
    throw ConfigError("require 0 < rx_dist_min < rx_dist_max < breakpoint");
  if (!(pathloss_exp_near > 0.0 && pathloss_exp_far > 0.0))
    throw ConfigError("path-loss exponents must be positive");
  const double expected = area_side_for(n_pairs, density_per_km2);
  if (!(area_side_m > 0.0) || std::abs(area_side_m - expected) > 1e-6 * expected)
    throw ConfigError("area_side inconsistent with sqrt(n_pairs/density)");
}

double pathloss(double distance_m, const NetworkConfig& config) {
  if (!(distance_m > 0.0)) throw ConfigError("path loss requires a positive distance");
  const double c = std::pow(10.0, config.pathloss_ref_db / 10.0);
  if (distance_m <= config.breakpoint_m) {
    return c * std::pow(distance_m, -config.pathloss_exp_near);
  }
  const double knee =
      std::pow(config.breakpoint_m, config.pathloss_exp_far - config.pathloss_exp_near);
  return c * knee * std::pow(distance_m, -config.pathloss_exp_far);
}

NetworkState generate_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t n = config.n_pairs;
  Rng rng(seed);

  NetworkState state;
  state.seed = seed;
  state.tx_pos.resize(n);
  state.rx_pos.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    state.tx_pos[i] = {rng.uniform(0.0, config.area_side_m), rng.uniform(0.0, config.area_side_m)};
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rng.uniform(config.rx_dist_min_m, config.rx_dist_max_m);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    state.rx_pos[i] = {state.tx_pos[i][0] + d * std::cos(phi),
                       state.tx_pos[i][1] + d * std::sin(phi)};
  }

  state.gains = Tensor({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = state.tx_pos[j][0] - state.rx_pos[i][0];
      const double dy = state.tx_pos[j][1] - state.rx_pos[i][1];
      const double d = std::hypot(dx, dy);
      if (d < kMinLinkDistanceM)
        throw NumericalError("degenerate geometry: tx " + std::to_string(j) +
                             " collides with rx " + std::to_string(i));
      const double shadow_db = config.shadowing_sigma_db * rng.normal();
      state.gains.at(j, i) = pathloss(d, config) * std::pow(10.0, shadow_db / 10.0);
    }
  }
  return state;
}

FadingSample sample_fading(const NetworkState& state, std::uint64_t seed) {
  const std::size_t n = state.n();
  Rng rng(seed);
  FadingSample fading;
  fading.gains = Tensor({n, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      fading.gains.at(j, i) = state.gains.at(j, i) * rng.exponential();
  return fading;
}

Gso build_gso(const NetworkState& state, const NetworkConfig& config) {
  const std::size_t n = state.n();
  const double noise = config.noise_power_w();
  Tensor raw({n, n});
  double max_raw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = std::log2(1.0 + config.p_max_w * state.gains.at(i, j) / noise);
      raw.at(i, j) = v;
      if (v > max_raw) max_raw = v;
    }
  }
  if (!(max_raw > 0.0)) throw NumericalError("degenerate channel: all-zero GSO");
  Gso gso;
  gso.norm_constant = max_raw;
  gso.edges = Tensor({n, n});
  for (std::size_t i = 0; i < n * n; ++i) gso.edges[i] = raw[i] / max_raw;
  return gso;
}

std::vector<double> instantaneous_rates(const std::vector<double>& x, const FadingSample& fading,
                                        const NetworkConfig& config) {
  const std::size_t n = fading.n();
  if (x.size() != n) throw ContractError("power vector length mismatch");
  for (double xi : x)
    if (!(xi >= 0.0 && xi <= config.p_max_w)) throw ContractError("power outside [0, p_max]");

  const double noise = config.noise_power_w();
  std::vector<double> rates(n);
  for (std::size_t i = 0; i < n; ++i) {
    double interference = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) interference += x[j] * fading.gains.at(j, i);
    rates[i] = std::log2(1.0 + x[i] * fading.gains.at(i, i) / (noise + interference));
  }
  return rates;
}

}  // namespace gdmpc
