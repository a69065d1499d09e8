#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdmpc/net.hpp"
#include "gdmpc/tape.hpp"
#include "gdmpc/tensor.hpp"

namespace gdmpc {

enum class Nonlinearity { relu, silu };

struct GnnConfig {
  std::size_t n_layers = 4;     // L
  std::size_t features = 64;    // F per hidden layer
  std::size_t filter_hops = 2;  // M
  std::size_t embed_dim = 64;   // F_0
  Nonlinearity act = Nonlinearity::relu;

  void validate() const;
};

// All learnable tensors of the noise predictor, in fixed manifest order:
// read-in lift, time-embedding MLP, per-layer filter taps + normalization
// affine, readout MLP. The count is independent of the network size N.
struct GnnParams {
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  GnnConfig config;
  std::vector<Entry> entries;

  static GnnParams init(const GnnConfig& config, std::uint64_t seed);

  std::size_t count() const;

  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
};

// Standard sinusoidal timestep embedding; component 2i is
// sin(k / 10000^(2i/dim)) and component 2i+1 the matching cosine.
std::vector<double> sinusoidal_embed(std::size_t k, std::size_t dim);

// Builds the predictor on an existing tape. x is (S, N) noisy signals for one
// graph, k_steps the per-signal timesteps, param_ids one tape id per
// GnnParams entry (same order). Returns the (S, N) prediction node.
ad::Tape::Id predict_noise_on_tape(ad::Tape& tape, const GnnConfig& config,
                                   const std::vector<ad::Tape::Id>& param_ids, ad::Tape::Id x,
                                   const std::vector<std::size_t>& k_steps, const Gso& gso);

// Pure-forward convenience wrappers.
Tensor predict_noise(const Tensor& x_batch, const std::vector<std::size_t>& k_steps,
                     const Gso& gso, const GnnParams& params);
std::vector<double> predict_noise(const std::vector<double>& x, std::size_t k, const Gso& gso,
                                  const GnnParams& params);

// Stage-level forward evaluators (the same builders predict_noise uses).
// Z^(0): per-node lift of x plus the shared time-embedding rows.
Tensor read_in_features(const Tensor& x_batch, const std::vector<std::size_t>& k_steps,
                        const GnnParams& params);
// One graph-filter layer: nonlinearity(layer_norm(sum_m H^m Z taps[m])).
Tensor gcn_layer_forward(const Tensor& z, const Gso& gso, const std::vector<Tensor>& taps,
                         const Tensor& gain, const Tensor& bias, Nonlinearity act);

}  // namespace gdmpc
