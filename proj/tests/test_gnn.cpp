#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gdmpc/gnn.hpp"
#include "gdmpc/rng.hpp"

using namespace gdmpc;

namespace {

Gso random_gso(std::size_t n, Rng& rng) {
  Gso gso;
  gso.edges = Tensor({n, n});
  for (std::size_t i = 0; i < n * n; ++i) gso.edges[i] = rng.uniform(0.0, 1.0);
  // renormalize so the max entry is exactly 1
  double mx = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) mx = std::max(mx, gso.edges[i]);
  for (std::size_t i = 0; i < n * n; ++i) gso.edges[i] /= mx;
  gso.norm_constant = mx;
  return gso;
}

GnnConfig tiny_config(std::size_t layers = 2, std::size_t features = 6, Nonlinearity act
                      = Nonlinearity::relu) {
  GnnConfig c;
  c.n_layers = layers;
  c.features = features;
  c.filter_hops = 2;
  c.embed_dim = features;
  c.act = act;
  return c;
}

}  // namespace

TEST_CASE("sinusoidal embedding") {
  SUBCASE("k = 0 alternates zeros and ones") {
    const auto e = sinusoidal_embed(0, 8);
    for (std::size_t i = 0; i < 8; i += 2) {
      CHECK(e[i] == 0.0);
      CHECK(e[i + 1] == 1.0);
    }
  }

  SUBCASE("components stay within [-1, 1]") {
    for (std::size_t k : {1u, 17u, 500u, 9999u}) {
      const auto e = sinusoidal_embed(k, 32);
      for (double v : e) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
    }
  }

  SUBCASE("dim 4 hand values") {
    const std::size_t k = 37;
    const auto e = sinusoidal_embed(k, 4);
    CHECK(e[0] == doctest::Approx(std::sin(37.0)).epsilon(1e-14));
    CHECK(e[1] == doctest::Approx(std::cos(37.0)).epsilon(1e-14));
    CHECK(e[2] == doctest::Approx(std::sin(37.0 / 100.0)).epsilon(1e-14));
    CHECK(e[3] == doctest::Approx(std::cos(37.0 / 100.0)).epsilon(1e-14));
  }
}

TEST_CASE("read-in combines lift and time embedding") {
  const auto config = tiny_config();
  auto params = GnnParams::init(config, 11);

  SUBCASE("equal inputs give equal rows") {
    const Tensor x({1, 3}, {0.4, 0.4, 0.4});
    const auto z = read_in_features(x, {5}, params);
    for (std::size_t f = 0; f < config.embed_dim; ++f) {
      CHECK(z.at(0, 0, f) == z.at(0, 1, f));
      CHECK(z.at(0, 1, f) == z.at(0, 2, f));
    }
  }

  SUBCASE("the timestep changes the features") {
    const Tensor x({2, 3}, {0.1, -0.2, 0.3, 0.1, -0.2, 0.3});
    const auto z = read_in_features(x, {1, 400}, params);
    bool differs = false;
    for (std::size_t i = 0; i < 3 && !differs; ++i)
      for (std::size_t f = 0; f < config.embed_dim; ++f)
        if (z.at(0, i, f) != z.at(1, i, f)) {
          differs = true;
          break;
        }
    CHECK(differs);
  }

  SUBCASE("zero lift weights leave only the embedding path") {
    auto zeroed = params;
    for (auto& e : zeroed.entries)
      if (e.name == "read_in.x.w" || e.name == "read_in.x.b")
        for (std::size_t i = 0; i < e.tensor.numel(); ++i) e.tensor[i] = 0.0;
    const Tensor x({1, 2}, {0.7, -0.9});
    const auto z = read_in_features(x, {9}, zeroed);
    for (std::size_t f = 0; f < config.embed_dim; ++f)
      CHECK(z.at(0, 0, f) == z.at(0, 1, f));  // node signal no longer enters
  }
}

TEST_CASE("gcn layer matches a brute-force polynomial filter") {
  Rng rng(13);
  const std::size_t n = 3, fin = 4, fout = 5, hops = 2;
  const Gso gso = random_gso(n, rng);
  Tensor z({1, n, fin});
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-1.0, 1.0);
  std::vector<Tensor> taps;
  for (std::size_t m = 0; m <= hops; ++m) {
    Tensor t({fin, fout});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.5, 0.5);
    taps.push_back(std::move(t));
  }
  const Tensor gain = Tensor::full({fout}, 1.3);
  const Tensor bias = Tensor::full({fout}, -0.2);

  // Oracle: explicit matrix powers H^m, then S = sum_m H^m Z taps[m].
  std::vector<Tensor> powers = {Tensor({n, n})};
  for (std::size_t i = 0; i < n; ++i) powers[0].at(i, i) = 1.0;
  for (std::size_t m = 1; m <= hops; ++m) {
    Tensor p({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < n; ++l)
          p.at(i, j) += gso.edges.at(i, l) * powers[m - 1].at(l, j);
    powers.push_back(std::move(p));
  }
  Tensor s({n, fout});
  for (std::size_t m = 0; m <= hops; ++m)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < fout; ++f)
        for (std::size_t l = 0; l < n; ++l)
          for (std::size_t g = 0; g < fin; ++g)
            s.at(i, f) += powers[m].at(i, l) * z.at(0, l, g) * taps[m].at(g, f);
  // normalization + relu applied to the oracle rows
  Tensor expected({n, fout});
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t f = 0; f < fout; ++f) mu += s.at(i, f);
    mu /= fout;
    for (std::size_t f = 0; f < fout; ++f) var += (s.at(i, f) - mu) * (s.at(i, f) - mu);
    var /= fout;
    for (std::size_t f = 0; f < fout; ++f) {
      const double y = (s.at(i, f) - mu) / std::sqrt(var + 1e-12) * 1.3 - 0.2;
      expected.at(i, f) = y > 0.0 ? y : 0.0;
    }
  }

  const auto out = gcn_layer_forward(z, gso, taps, gain, bias, Nonlinearity::relu);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < fout; ++f)
      CHECK(out.at(0, i, f) == doctest::Approx(expected.at(i, f)).epsilon(1e-10));

  SUBCASE("zero higher taps ignore the graph") {
    auto taps0 = taps;
    for (std::size_t m = 1; m <= hops; ++m)
      for (std::size_t i = 0; i < taps0[m].numel(); ++i) taps0[m][i] = 0.0;
    const auto a = gcn_layer_forward(z, gso, taps0, gain, bias, Nonlinearity::relu);
    Gso other = random_gso(n, rng);
    const auto b = gcn_layer_forward(z, other, taps0, gain, bias, Nonlinearity::relu);
    CHECK(a.vec() == b.vec());
  }

  SUBCASE("zero shift operator gives the same reduction") {
    Gso zero;
    zero.edges = Tensor({n, n});
    auto taps0 = taps;
    for (std::size_t m = 1; m <= hops; ++m)
      for (std::size_t i = 0; i < taps0[m].numel(); ++i) taps0[m][i] = 0.0;
    const auto a = gcn_layer_forward(z, zero, taps, gain, bias, Nonlinearity::relu);
    const auto b = gcn_layer_forward(z, zero, taps0, gain, bias, Nonlinearity::relu);
    CHECK(a.vec() == b.vec());
  }
}

TEST_CASE("predict_noise is permutation equivariant") {
  Rng rng(21);
  const std::size_t n = 8;
  const auto config = tiny_config(2, 8);
  const auto params = GnnParams::init(config, 3);
  const Gso gso = random_gso(n, rng);
  Tensor x({1, n});
  for (std::size_t i = 0; i < n; ++i) x[0 * n + i] = rng.uniform(-0.5, 0.5);
  const auto base = predict_noise(x, {7}, gso, params);

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);

    Gso pg;
    pg.edges = Tensor({n, n});
    Tensor px({1, n});
    for (std::size_t i = 0; i < n; ++i) {
      px[i] = x[perm[i]];
      for (std::size_t j = 0; j < n; ++j) pg.edges.at(i, j) = gso.edges.at(perm[i], perm[j]);
    }
    const auto out = predict_noise(px, {7}, pg, params);
    for (std::size_t i = 0; i < n; ++i) CHECK(out[i] == doctest::Approx(base[perm[i]]).epsilon(1e-8));
  }
}

TEST_CASE("isomorphic networks produce permuted outputs") {
  Rng rng(22);
  const std::size_t n = 5;
  const auto params = GnnParams::init(tiny_config(), 5);
  const Gso gso = random_gso(n, rng);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);

  const std::vector<std::size_t> perm = {3, 1, 4, 0, 2};
  Gso pg;
  pg.edges = Tensor({n, n});
  std::vector<double> px(n);
  for (std::size_t i = 0; i < n; ++i) {
    px[i] = x[perm[i]];
    for (std::size_t j = 0; j < n; ++j) pg.edges.at(i, j) = gso.edges.at(perm[i], perm[j]);
  }
  const auto a = predict_noise(x, 3, gso, params);
  const auto b = predict_noise(px, 3, pg, params);
  for (std::size_t i = 0; i < n; ++i) CHECK(b[i] == doctest::Approx(a[perm[i]]).epsilon(1e-10));
}

TEST_CASE("parameter count does not depend on the network size") {
  const auto config = tiny_config(3, 12);
  const auto params = GnnParams::init(config, 2);
  Rng rng(31);
  const Gso g8 = random_gso(8, rng);
  const Gso g16 = random_gso(16, rng);
  // the same parameter vector serves both sizes
  const auto out8 = predict_noise(Tensor({1, 8}), {1}, g8, params);
  const auto out16 = predict_noise(Tensor({1, 16}), {1}, g16, params);
  CHECK(out8.numel() == 8);
  CHECK(out16.numel() == 16);
  CHECK(params.count() == GnnParams::init(config, 99).count());
}

TEST_CASE("output length always matches N") {
  Rng rng(41);
  for (std::size_t features : {4u, 10u}) {
    const auto params = GnnParams::init(tiny_config(1, features), 7);
    const Gso gso = random_gso(6, rng);
    CHECK(predict_noise(Tensor({3, 6}), {1, 2, 3}, gso, params).shape() ==
          std::vector<std::size_t>{3, 6});
  }
}

TEST_CASE("analytic gradient of a squared-error loss matches finite differences") {
  Rng rng(51);
  const std::size_t n = 4, s = 2;
  const auto config = tiny_config(1, 5, Nonlinearity::silu);
  auto params = GnnParams::init(config, 17);
  const Gso gso = random_gso(n, rng);
  Tensor x({s, n});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-0.5, 0.5);
  Tensor target({s, n});
  for (std::size_t i = 0; i < target.numel(); ++i) target[i] = rng.uniform(-1.0, 1.0);
  const std::vector<std::size_t> k = {2, 9};

  auto loss_value = [&](const GnnParams& p) {
    ad::Tape tape(false);
    std::vector<ad::Tape::Id> ids;
    for (const auto& e : p.entries) ids.push_back(tape.constant(e.tensor));
    const auto pred = predict_noise_on_tape(tape, config, ids, tape.constant(x), k, gso);
    return tape.value(tape.mse(pred, tape.constant(target))).scalar_value();
  };

  ad::Tape tape;
  std::vector<ad::Tape::Id> ids;
  for (const auto& e : params.entries) ids.push_back(tape.leaf(e.tensor));
  const auto pred = predict_noise_on_tape(tape, config, ids, tape.constant(x), k, gso);
  const auto loss = tape.mse(pred, tape.constant(target));
  tape.backward(loss);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < params.entries.size(); ++p) {
    for (std::size_t i = 0; i < params.entries[p].tensor.numel(); ++i) {
      auto bumped = params;
      bumped.entries[p].tensor[i] += h;
      const double up = loss_value(bumped);
      bumped.entries[p].tensor[i] -= 2.0 * h;
      const double down = loss_value(bumped);
      const double fd = (up - down) / (2.0 * h);
      const double an = tape.grad(ids[p])[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
    }
  }
  CHECK(worst < 1e-5);
}
