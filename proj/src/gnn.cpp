#include "gdmpc/gnn.hpp"

#include <cmath>

#include "gdmpc/rng.hpp"

namespace gdmpc {

void GnnConfig::validate() const {
  if (n_layers < 1) throw ConfigError("gnn: n_layers must be >= 1");
  if (features < 1) throw ConfigError("gnn: features must be >= 1");
  if (embed_dim < 1) throw ConfigError("gnn: embed_dim must be >= 1");
}

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

GnnParams GnnParams::init(const GnnConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t F0 = config.embed_dim;
  const std::size_t F = config.features;

  GnnParams p;
  p.config = config;
  auto push = [&p](std::string name, Tensor t) {
    p.entries.push_back({std::move(name), std::move(t)});
  };

  push("read_in.x.w", uniform_init({1, F0}, 1, rng));
  push("read_in.x.b", Tensor({F0}));
  push("read_in.t.w1", uniform_init({F0, F0}, F0, rng));
  push("read_in.t.b1", Tensor({F0}));
  push("read_in.t.w2", uniform_init({F0, F0}, F0, rng));
  push("read_in.t.b2", Tensor({F0}));

  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::size_t fin = (l == 0) ? F0 : F;
    for (std::size_t m = 0; m <= config.filter_hops; ++m)
      push("layer" + std::to_string(l) + ".tap" + std::to_string(m),
           uniform_init({fin, F}, fin, rng));
    push("layer" + std::to_string(l) + ".ln.gain", Tensor::full({F}, 1.0));
    push("layer" + std::to_string(l) + ".ln.bias", Tensor({F}));
  }

  push("readout.w1", uniform_init({F, F}, F, rng));
  push("readout.b1", Tensor({F}));
  push("readout.w2", uniform_init({F, 1}, F, rng));
  push("readout.b2", Tensor({1}));
  return p;
}

std::size_t GnnParams::count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tensor.numel();
  return n;
}

std::vector<double> GnnParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(count());
  for (const auto& e : entries) flat.insert(flat.end(), e.tensor.vec().begin(), e.tensor.vec().end());
  return flat;
}

void GnnParams::unflatten(const std::vector<double>& flat) {
  if (flat.size() != count()) throw ContractError("unflatten size mismatch");
  std::size_t off = 0;
  for (auto& e : entries) {
    std::copy(flat.begin() + off, flat.begin() + off + e.tensor.numel(), e.tensor.data());
    off += e.tensor.numel();
  }
}

std::vector<double> sinusoidal_embed(std::size_t k, std::size_t dim) {
  std::vector<double> out(dim);
  for (std::size_t i = 0; 2 * i < dim; ++i) {
    const double freq = std::pow(10000.0, -(2.0 * static_cast<double>(i)) / static_cast<double>(dim));
    const double angle = static_cast<double>(k) * freq;
    out[2 * i] = std::sin(angle);
    if (2 * i + 1 < dim) out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

namespace {

using Id = ad::Tape::Id;

Id apply_nonlinearity(ad::Tape& tape, Nonlinearity act, Id z) {
  return act == Nonlinearity::relu ? tape.relu(z) : tape.silu(z);
}

// Read-in: per-node scalar lift plus MLP-transformed time embedding,
// broadcast identically to all nodes of a signal. params: xw, xb, tw1, tb1,
// tw2, tb2.
Id build_read_in(ad::Tape& tape, const GnnConfig& config, const Id* params, Id x,
                 const std::vector<std::size_t>& k_steps) {
  const std::size_t S = tape.value(x).dim(0), N = tape.value(x).dim(1);
  Id lifted = tape.reshape(x, {S * N, 1});
  lifted = tape.add_bias(tape.matmul(lifted, params[0]), params[1]);
  lifted = tape.reshape(lifted, {S, N, config.embed_dim});

  Tensor emb({S, config.embed_dim});
  for (std::size_t s = 0; s < S; ++s) {
    const auto e = sinusoidal_embed(k_steps[s], config.embed_dim);
    std::copy(e.begin(), e.end(), emb.data() + s * config.embed_dim);
  }
  Id temb = tape.constant(std::move(emb));
  temb = apply_nonlinearity(tape, config.act, tape.add_bias(tape.matmul(temb, params[2]), params[3]));
  temb = tape.add_bias(tape.matmul(temb, params[4]), params[5]);
  return tape.add_node_broadcast(lifted, temb);
}

// One layer: sum_m H^m Z taps[m] with iterated shifts (tap 0 is the learnable
// residual), then per-node normalization and the pointwise nonlinearity.
Id build_gcn_layer(ad::Tape& tape, Id z, Id h, const Id* taps, std::size_t hops, Id gain, Id bias,
                   Nonlinearity act) {
  Id acc = tape.matmul(z, taps[0]);
  Id shifted = z;
  for (std::size_t m = 1; m <= hops; ++m) {
    shifted = tape.matmul(h, shifted);
    acc = tape.add(acc, tape.matmul(shifted, taps[m]));
  }
  return apply_nonlinearity(tape, act, tape.layer_norm(acc, gain, bias));
}

}  // namespace

ad::Tape::Id predict_noise_on_tape(ad::Tape& tape, const GnnConfig& config,
                                   const std::vector<ad::Tape::Id>& param_ids, ad::Tape::Id x,
                                   const std::vector<std::size_t>& k_steps, const Gso& gso) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2) throw ContractError("predict_noise expects (S, N) input");
  const std::size_t S = xv.dim(0), N = xv.dim(1);
  if (k_steps.size() != S) throw ContractError("one timestep per signal required");
  if (gso.n() != N) throw ContractError("GSO size does not match signal length");

  std::size_t next = 0;
  auto param = [&]() { return param_ids.at(next++); };
  Id read_in_params[6];
  for (auto& id : read_in_params) id = param();
  Id z = build_read_in(tape, config, read_in_params, x, k_steps);

  const Id h = tape.constant(gso.edges);
  std::vector<Id> taps(config.filter_hops + 1);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    for (auto& id : taps) id = param();
    const Id gain = param(), bias = param();
    z = build_gcn_layer(tape, z, h, taps.data(), config.filter_hops, gain, bias, config.act);
  }

  const Id rw1 = param(), rb1 = param(), rw2 = param(), rb2 = param();
  Id out = apply_nonlinearity(tape, config.act, tape.add_bias(tape.matmul(z, rw1), rb1));
  out = tape.add_bias(tape.matmul(out, rw2), rb2);
  return tape.reshape(out, {S, N});
}

Tensor read_in_features(const Tensor& x_batch, const std::vector<std::size_t>& k_steps,
                        const GnnParams& params) {
  ad::Tape tape(false);
  Id ids[6];
  for (std::size_t i = 0; i < 6; ++i) ids[i] = tape.constant(params.entries[i].tensor);
  return tape.value(build_read_in(tape, params.config, ids, tape.constant(x_batch), k_steps));
}

Tensor gcn_layer_forward(const Tensor& z, const Gso& gso, const std::vector<Tensor>& taps,
                         const Tensor& gain, const Tensor& bias, Nonlinearity act) {
  ad::Tape tape(false);
  std::vector<Id> tap_ids;
  for (const auto& t : taps) tap_ids.push_back(tape.constant(t));
  return tape.value(build_gcn_layer(tape, tape.constant(z), tape.constant(gso.edges),
                                    tap_ids.data(), taps.size() - 1, tape.constant(gain),
                                    tape.constant(bias), act));
}

Tensor predict_noise(const Tensor& x_batch, const std::vector<std::size_t>& k_steps,
                     const Gso& gso, const GnnParams& params) {
  ad::Tape tape(false);
  std::vector<ad::Tape::Id> ids;
  ids.reserve(params.entries.size());
  for (const auto& e : params.entries) ids.push_back(tape.constant(e.tensor));
  const auto out = predict_noise_on_tape(tape, params.config, ids, tape.constant(x_batch),
                                         k_steps, gso);
  Tensor result = tape.value(out);
  if (!result.all_finite()) throw NumericalError("non-finite noise prediction");
  return result;
}

std::vector<double> predict_noise(const std::vector<double>& x, std::size_t k, const Gso& gso,
                                  const GnnParams& params) {
  Tensor xb({1, x.size()}, x);
  return predict_noise(xb, {k}, gso, params).vec();
}

}  // namespace gdmpc
