#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gdmpc/tensor.hpp"

namespace gdmpc {

// Interference-network family parameters. All gains and powers are linear;
// dB shows up only in configuration values and logs.
struct NetworkConfig {
  std::size_t n_pairs = 16;
  double density_per_km2 = 1.92;  // pairs per km^2
  double area_side_m = 0.0;       // sqrt(n_pairs/density) in meters; 0 = derive
  double p_max_w = 0.01;
  double bandwidth_hz = 20e6;
  double noise_psd_w_per_hz = 3.9810717055349565e-21;  // -174 dBm/Hz
  double shadowing_sigma_db = 7.0;
  double breakpoint_m = 100.0;
  double pathloss_exp_near = 2.0;
  double pathloss_exp_far = 4.0;
  double pathloss_ref_db = -36.6;  // gain at 1 m reference distance
  double rx_dist_min_m = 10.0;
  double rx_dist_max_m = 99.0;  // must stay strictly inside the breakpoint
  double f_min = 0.6;  // bps/Hz

  // Throws ConfigError on violated invariants.
  void validate() const;

  double noise_power_w() const { return bandwidth_hz * noise_psd_w_per_hz; }

  static double area_side_for(std::size_t n_pairs, double density_per_km2);
};

// Long-term state of one network. gains.at(j, i) is the power gain from
// transmitter j to receiver i; the diagonal holds the direct links.
struct NetworkState {
  std::string id;
  Tensor gains;  // (N, N)
  std::vector<std::array<double, 2>> tx_pos;
  std::vector<std::array<double, 2>> rx_pos;
  std::uint64_t seed = 0;

  std::size_t n() const { return gains.dim(0); }
};

// One Rayleigh-fading realization; entries pair with NetworkState::gains.
struct FadingSample {
  Tensor gains;  // (N, N)
  std::size_t n() const { return gains.dim(0); }
};

// Graph shift operator: log-normalized long-term gains, max entry exactly 1.
struct Gso {
  Tensor edges;  // (N, N)
  double norm_constant = 0.0;
  std::size_t n() const { return edges.dim(0); }
};

// Dual-slope path loss, continuous at the breakpoint.
double pathloss(double distance_m, const NetworkConfig& config);

NetworkState generate_network(const NetworkConfig& config, std::uint64_t seed);

FadingSample sample_fading(const NetworkState& state, std::uint64_t seed);

Gso build_gso(const NetworkState& state, const NetworkConfig& config);

// Instantaneous per-receiver spectral efficiencies for power vector x.
std::vector<double> instantaneous_rates(const std::vector<double>& x, const FadingSample& fading,
                                        const NetworkConfig& config);

}  // namespace gdmpc
