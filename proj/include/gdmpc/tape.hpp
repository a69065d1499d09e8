#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gdmpc/tensor.hpp"

namespace gdmpc::ad {

// Reverse-mode tape over dense tensors. Ops record their adjoint rule at
// forward time; backward() replays them in exact reverse order, accumulating
// gradients additively into every node that requires them.
//
// A tape built with grad_enabled = false records no adjoints and serves as a
// plain forward evaluator (used by the samplers).
class Tape {
 public:
  using Id = std::uint32_t;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  // Input without gradient (data, noise, graph shift operators).
  Id constant(Tensor value);
  // Learnable input; gradient is populated by backward().
  Id leaf(Tensor value);

  // C = A * B. Supports (R,K)x(K,C), and batched forms (S,R,K)x(K,C),
  // (R,K)x(S,K,C), (S,R,K)x(S,K,C); a rank-2 operand broadcasts over S.
  Id matmul(Id a, Id b);

  Id add(Id a, Id b);                    // same shape
  Id add_bias(Id a, Id bias);            // bias rank 1, broadcast over last axis
  Id add_node_broadcast(Id a, Id rows);  // a (S,N,F) + rows (S,F) over nodes
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);  // elementwise
  Id scale(Id a, double c);
  Id relu(Id a);
  Id silu(Id a);

  // Normalize over the last (feature) axis per row, then affine (gain, bias).
  Id layer_norm(Id a, Id gain, Id bias);

  Id reshape(Id a, std::vector<std::size_t> shape);
  Id sum(Id a);         // scalar
  Id mse(Id a, Id b);   // mean over all elements of squared difference

  // (1/S) * sum_s w[s] * ||pred[s,:] - target[s,:]||^2 for pred, target (S,N).
  Id weighted_row_sse(Id pred, Id target, std::vector<double> weights);

  // Populates gradients of every node reachable from the scalar loss.
  void backward(Id loss);

  const Tensor& value(Id id) const { return nodes_[id].value; }
  const Tensor& grad(Id id) const;
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  static constexpr double kLayerNormEps = 1e-12;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&)> pull;
  };

  Id push(Tensor value, bool requires_grad, std::function<void(Tape&)> pull);
  bool wants_grad(Id a) const { return grad_enabled_ && nodes_[a].requires_grad; }
  Tensor& grad_slot(Id id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
  Id current_pull_ = 0;  // node whose adjoint is being propagated
};

}  // namespace gdmpc::ad
