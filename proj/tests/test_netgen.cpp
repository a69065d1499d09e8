#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gdmpc/net.hpp"
#include "gdmpc/rng.hpp"

using namespace gdmpc;

namespace {

NetworkConfig paper_scale_config() {
  NetworkConfig c;
  c.n_pairs = 100;
  c.density_per_km2 = 12.0;
  c.area_side_m = NetworkConfig::area_side_for(c.n_pairs, c.density_per_km2);
  return c;
}

NetworkConfig small_config(std::size_t n = 4) {
  NetworkConfig c;
  c.n_pairs = n;
  c.density_per_km2 = 1.92;
  c.area_side_m = NetworkConfig::area_side_for(n, c.density_per_km2);
  return c;
}

}  // namespace

TEST_CASE("area side matches sqrt(n/density) in meters") {
  const auto c = paper_scale_config();
  CHECK(c.area_side_m == doctest::Approx(2886.7513459).epsilon(1e-9));
  c.validate();

  NetworkConfig bad = c;
  bad.area_side_m = 2000.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config invariants are enforced") {
  NetworkConfig c = small_config();
  c.n_pairs = 1;
  c.area_side_m = NetworkConfig::area_side_for(1, c.density_per_km2);
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_config();
  c.rx_dist_min_m = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_config();
  c.rx_dist_max_m = c.breakpoint_m + 1.0;  // receivers past the breakpoint
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_config();
  c.p_max_w = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dual-slope path loss") {
  const auto c = small_config();
  const double at_bp = pathloss(c.breakpoint_m, c);

  SUBCASE("both branches agree at the breakpoint") {
    const double cref = std::pow(10.0, c.pathloss_ref_db / 10.0);
    const double near = cref * std::pow(c.breakpoint_m, -c.pathloss_exp_near);
    const double knee = std::pow(c.breakpoint_m, c.pathloss_exp_far - c.pathloss_exp_near);
    const double far = cref * knee * std::pow(c.breakpoint_m, -c.pathloss_exp_far);
    CHECK(near == doctest::Approx(far).epsilon(1e-14));
    CHECK(at_bp == doctest::Approx(near).epsilon(1e-14));
  }

  SUBCASE("power law beyond the breakpoint") {
    const double at_2bp = pathloss(2.0 * c.breakpoint_m, c);
    CHECK(at_2bp / at_bp == doctest::Approx(std::pow(2.0, -c.pathloss_exp_far)).epsilon(1e-12));
  }

  SUBCASE("near-branch value against hand evaluation") {
    // C d^-2 at d = 10 m with the -36.6 dB reference
    const double expected = std::pow(10.0, -36.6 / 10.0) / (10.0 * 10.0);
    CHECK(pathloss(c.rx_dist_min_m, c) == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("nonpositive distance is invalid geometry") {
    CHECK_THROWS_AS(pathloss(0.0, c), ConfigError);
    CHECK_THROWS_AS(pathloss(-5.0, c), ConfigError);
  }
}

TEST_CASE("generate_network is deterministic and respects geometry") {
  const auto c = small_config(6);
  const auto a = generate_network(c, 123);
  const auto b = generate_network(c, 123);
  CHECK(a.gains.vec() == b.gains.vec());
  CHECK(a.tx_pos == b.tx_pos);
  CHECK(a.rx_pos == b.rx_pos);

  const auto other = generate_network(c, 124);
  CHECK(a.gains.vec() != other.gains.vec());

  for (std::size_t i = 0; i < c.n_pairs; ++i) {
    CHECK(a.tx_pos[i][0] >= 0.0);
    CHECK(a.tx_pos[i][0] <= c.area_side_m);
    const double d = std::hypot(a.tx_pos[i][0] - a.rx_pos[i][0], a.tx_pos[i][1] - a.rx_pos[i][1]);
    CHECK(d >= c.rx_dist_min_m);
    CHECK(d <= c.rx_dist_max_m);
  }
  for (std::size_t i = 0; i < a.gains.numel(); ++i) {
    CHECK(a.gains[i] > 0.0);
    CHECK(std::isfinite(a.gains[i]));
  }
}

TEST_CASE("zero shadowing reduces gains to pure path loss") {
  auto c = small_config(5);
  c.shadowing_sigma_db = 0.0;
  const auto net = generate_network(c, 9);
  for (std::size_t j = 0; j < c.n_pairs; ++j) {
    for (std::size_t i = 0; i < c.n_pairs; ++i) {
      const double d =
          std::hypot(net.tx_pos[j][0] - net.rx_pos[i][0], net.tx_pos[j][1] - net.rx_pos[i][1]);
      CHECK(net.gains.at(j, i) == doctest::Approx(pathloss(d, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("fading is unit-mean exponential per link") {
  const auto c = small_config(3);
  const auto net = generate_network(c, 77);
  const int draws = 100000;

  Tensor mean({3, 3});
  double e_sum = 0.0, e_sq = 0.0;
  for (int d = 0; d < draws; ++d) {
    const auto fading = sample_fading(net, derive_seed(1000, "fading", d));
    for (std::size_t i = 0; i < 9; ++i) {
      mean[i] += fading.gains[i] / draws;
      const double e = fading.gains[i] / net.gains[i];
      e_sum += e;
      e_sq += e * e;
    }
  }
  // Exp(1): sd of the per-link mean estimate is g/sqrt(draws).
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(std::abs(mean[i] - net.gains[i]) < 3.0 * net.gains[i] / std::sqrt(double(draws)));
  const double n_e = 9.0 * draws;
  const double e_mean = e_sum / n_e;
  const double e_var = e_sq / n_e - e_mean * e_mean;
  CHECK(std::abs(e_var - 1.0) < 3.0 * std::sqrt(8.0 / n_e));

  const auto f1 = sample_fading(net, 5);
  const auto f2 = sample_fading(net, 5);
  CHECK(f1.gains.vec() == f2.gains.vec());
}

TEST_CASE("gso normalization and hand oracle") {
  const auto c = small_config(4);
  const auto net = generate_network(c, 3);
  const auto gso = build_gso(net, c);

  double max_edge = 0.0;
  for (std::size_t i = 0; i < gso.edges.numel(); ++i) {
    CHECK(gso.edges[i] >= 0.0);
    CHECK(gso.edges[i] <= 1.0);
    max_edge = std::max(max_edge, gso.edges[i]);
  }
  CHECK(max_edge == 1.0);

  SUBCASE("unit snr entry gives one bit before normalization") {
    NetworkConfig unit = c;
    NetworkState s;
    s.gains = Tensor({2, 2}, {unit.noise_power_w() / unit.p_max_w, 1e-18, 1e-18, 1e-19});
    const auto g = build_gso(s, unit);
    CHECK(g.norm_constant == doctest::Approx(1.0).epsilon(1e-9));
  }

  SUBCASE("2x2 entries match the scalar formula") {
    NetworkState s;
    s.gains = Tensor({2, 2}, {2e-13, 5e-14, 8e-14, 1e-13});
    const auto g = build_gso(s, c);
    const double noise = c.noise_power_w();
    double raw[4];
    for (int i = 0; i < 4; ++i) raw[i] = std::log2(1.0 + c.p_max_w * s.gains[i] / noise);
    const double mx = std::max(std::max(raw[0], raw[1]), std::max(raw[2], raw[3]));
    for (int i = 0; i < 4; ++i) CHECK(g.edges[i] == doctest::Approx(raw[i] / mx).epsilon(1e-14));
    CHECK(g.norm_constant == doctest::Approx(mx).epsilon(1e-14));
  }
}

TEST_CASE("instantaneous rates") {
  NetworkConfig c = small_config(3);
  c.p_max_w = 1.0;
  c.bandwidth_hz = 1.0;
  c.noise_psd_w_per_hz = 0.5;
  FadingSample f;
  f.gains = Tensor({3, 3}, {1.0, 0.2, 0.1, 0.3, 2.0, 0.4, 0.05, 0.6, 1.5});

  SUBCASE("zero power gives zero rate") {
    const auto r = instantaneous_rates({0.0, 0.0, 0.0}, f, c);
    for (double v : r) CHECK(v == 0.0);
  }

  SUBCASE("single active transmitter sees no interference") {
    const auto r = instantaneous_rates({1.0, 0.0, 0.0}, f, c);
    CHECK(r[0] == doctest::Approx(std::log2(1.0 + 1.0 / 0.5)).epsilon(1e-14));
  }

  SUBCASE("per-receiver oracle for a full power vector") {
    const std::vector<double> x = {0.8, 0.5, 1.0};
    const auto r = instantaneous_rates(x, f, c);
    for (std::size_t i = 0; i < 3; ++i) {
      double interference = 0.5;
      for (std::size_t j = 0; j < 3; ++j)
        if (j != i) interference += x[j] * f.gains.at(j, i);
      CHECK(r[i] == doctest::Approx(std::log2(1.0 + x[i] * f.gains.at(i, i) / interference))
                        .epsilon(1e-14));
    }
  }

  SUBCASE("contract violations are rejected") {
    CHECK_THROWS_AS(instantaneous_rates({2.0, 0.0, 0.0}, f, c), ContractError);
    CHECK_THROWS_AS(instantaneous_rates({-0.1, 0.0, 0.0}, f, c), ContractError);
    CHECK_THROWS_AS(instantaneous_rates({0.1, 0.0}, f, c), ContractError);
  }
}

TEST_CASE("raising own power helps self and hurts others") {
  NetworkConfig c = small_config(4);
  c.p_max_w = 1.0;
  c.bandwidth_hz = 1.0;
  c.noise_psd_w_per_hz = 0.25;
  Rng rng(17);
  FadingSample f;
  f.gains = Tensor({4, 4});
  for (std::size_t i = 0; i < 16; ++i) f.gains[i] = rng.uniform(0.05, 2.0);

  std::vector<double> x = {0.3, 0.6, 0.2, 0.9};
  const auto base = instantaneous_rates(x, f, c);
  for (std::size_t i = 0; i < 4; ++i) {
    auto bumped = x;
    bumped[i] = std::min(1.0, x[i] + 0.05);
    const auto r = instantaneous_rates(bumped, f, c);
    CHECK(r[i] >= base[i]);
    for (std::size_t j = 0; j < 4; ++j)
      if (j != i) CHECK(r[j] <= base[j]);
  }
}

TEST_CASE("permutation covariance is exact for dyadic gains") {
  NetworkConfig c = small_config(4);
  c.p_max_w = 1.0;
  c.bandwidth_hz = 1.0;
  c.noise_psd_w_per_hz = 0.25;
  // Dyadic values keep every interference sum exact in binary floating point,
  // so the relabeling identity can be checked bitwise.
  FadingSample f;
  f.gains = Tensor({4, 4}, {1.0, 0.5, 0.25, 0.125, 0.5, 2.0, 0.0625, 0.25, 0.125, 0.03125, 1.5,
                            0.5, 0.25, 0.125, 0.5, 0.75});
  const std::vector<double> x = {0.5, 0.25, 1.0, 0.125};
  const std::vector<std::size_t> perm = {2, 0, 3, 1};  // new index -> old index

  FadingSample pf;
  pf.gains = Tensor({4, 4});
  std::vector<double> px(4);
  for (std::size_t i = 0; i < 4; ++i) {
    px[i] = x[perm[i]];
    for (std::size_t j = 0; j < 4; ++j) pf.gains.at(i, j) = f.gains.at(perm[i], perm[j]);
  }

  const auto r = instantaneous_rates(x, f, c);
  const auto pr = instantaneous_rates(px, pf, c);
  for (std::size_t i = 0; i < 4; ++i) CHECK(pr[i] == r[perm[i]]);
}
