#include "gdmpc/tape.hpp"

#include <cmath>
#include <string>

namespace gdmpc::ad {

namespace {

// c(R,C) += a(R,K) * b(K,C)
void mm_acc(const double* a, const double* b, double* c, std::size_t R, std::size_t K,
            std::size_t C) {
  for (std::size_t i = 0; i < R; ++i) {
    const double* ai = a + i * K;
    double* ci = c + i * C;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = ai[k];
      const double* bk = b + k * C;
      for (std::size_t j = 0; j < C; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c(K,C) += a(R,K)^T * b(R,C)
void mm_at_acc(const double* a, const double* b, double* c, std::size_t R, std::size_t K,
               std::size_t C) {
  for (std::size_t i = 0; i < R; ++i) {
    const double* ai = a + i * K;
    const double* bi = b + i * C;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = ai[k];
      double* ck = c + k * C;
      for (std::size_t j = 0; j < C; ++j) ck[j] += aik * bi[j];
    }
  }
}

// c(R,K) += a(R,C) * b(K,C)^T
void mm_bt_acc(const double* a, const double* b, double* c, std::size_t R, std::size_t K,
               std::size_t C) {
  for (std::size_t i = 0; i < R; ++i) {
    const double* ai = a + i * C;
    double* ci = c + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double* bk = b + k * C;
      double acc = 0.0;
      for (std::size_t j = 0; j < C; ++j) acc += ai[j] * bk[j];
      ci[k] += acc;
    }
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tape::Id Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> pull) {
  Node node;
  node.requires_grad = requires_grad;
  if (requires_grad) node.grad = Tensor(value.shape());
  node.value = std::move(value);
  node.pull = std::move(pull);
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Tape::Id Tape::leaf(Tensor value) { return push(std::move(value), grad_enabled_, nullptr); }

const Tensor& Tape::grad(Id id) const {
  if (!nodes_[id].requires_grad) throw ContractError("gradient requested for non-grad node");
  return nodes_[id].grad;
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool a3 = ta.rank() == 3, b3 = tb.rank() == 3;
  if ((ta.rank() != 2 && !a3) || (tb.rank() != 2 && !b3)) throw ContractError("matmul rank");
  const std::size_t R = ta.dim(a3 ? 1 : 0), K = ta.dim(a3 ? 2 : 1);
  const std::size_t Kb = tb.dim(b3 ? 1 : 0), C = tb.dim(b3 ? 2 : 1);
  if (K != Kb) throw ContractError("matmul inner dimension mismatch");
  const std::size_t Sa = a3 ? ta.dim(0) : 1, Sb = b3 ? tb.dim(0) : 1;
  if (a3 && b3 && Sa != Sb) throw ContractError("matmul batch mismatch");
  const std::size_t S = std::max(Sa, Sb);

  Tensor out = (a3 || b3) ? Tensor({S, R, C}) : Tensor({R, C});
  const std::size_t sa = a3 ? R * K : 0, sb = b3 ? K * C : 0;
  for (std::size_t s = 0; s < S; ++s)
    mm_acc(ta.data() + s * sa, tb.data() + s * sb, out.data() + s * R * C, R, K, C);

  const bool req = wants_grad(a) || wants_grad(b);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      for (std::size_t s = 0; s < S; ++s)
        mm_bt_acc(g.data() + s * R * C, vb.data() + s * sb, da + s * sa, R, K, C);
    }
    if (t.wants_grad(b)) {
      double* db = t.grad_slot(b).data();
      for (std::size_t s = 0; s < S; ++s)
        mm_at_acc(va.data() + s * sa, g.data() + s * R * C, db + s * sb, R, K, C);
    }
  });
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) throw ContractError("add shape mismatch");
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i];
  const bool req = wants_grad(a) || wants_grad(b);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
    }
    if (t.wants_grad(b)) {
      double* db = t.grad_slot(b).data();
      for (std::size_t i = 0; i < g.numel(); ++i) db[i] += g[i];
    }
  });
}

Tape::Id Tape::add_bias(Id a, Id bias) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(bias);
  if (tb.rank() != 1 || ta.rank() < 1 || ta.shape().back() != tb.dim(0))
    throw ContractError("add_bias shape mismatch");
  const std::size_t F = tb.dim(0);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i % F];
  const bool req = wants_grad(a) || wants_grad(bias);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
    }
    if (t.wants_grad(bias)) {
      double* db = t.grad_slot(bias).data();
      for (std::size_t i = 0; i < g.numel(); ++i) db[i % F] += g[i];
    }
  });
}

Tape::Id Tape::add_node_broadcast(Id a, Id rows) {
  const Tensor& ta = value(a);
  const Tensor& tr = value(rows);
  if (ta.rank() != 3 || tr.rank() != 2 || ta.dim(0) != tr.dim(0) || ta.dim(2) != tr.dim(1))
    throw ContractError("add_node_broadcast shape mismatch");
  const std::size_t S = ta.dim(0), N = ta.dim(1), F = ta.dim(2);
  Tensor out(ta.shape());
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t f = 0; f < F; ++f) out.at(s, i, f) = ta.at(s, i, f) + tr.at(s, f);
  const bool req = wants_grad(a) || wants_grad(rows);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
    }
    if (t.wants_grad(rows)) {
      Tensor& dr = t.grad_slot(rows);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t f = 0; f < F; ++f) dr.at(s, f) += g.at(s, i, f);
    }
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) throw ContractError("sub shape mismatch");
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - tb[i];
  const bool req = wants_grad(a) || wants_grad(b);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
    }
    if (t.wants_grad(b)) {
      double* db = t.grad_slot(b).data();
      for (std::size_t i = 0; i < g.numel(); ++i) db[i] -= g[i];
    }
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) throw ContractError("mul shape mismatch");
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * tb[i];
  const bool req = wants_grad(a) || wants_grad(b);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i] * vb[i];
    }
    if (t.wants_grad(b)) {
      double* db = t.grad_slot(b).data();
      for (std::size_t i = 0; i < g.numel(); ++i) db[i] += g[i] * va[i];
    }
  });
}

Tape::Id Tape::scale(Id a, double c) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * ta[i];
  const bool req = wants_grad(a);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    double* da = t.grad_slot(a).data();
    for (std::size_t i = 0; i < g.numel(); ++i) da[i] += c * g[i];
  });
}

Tape::Id Tape::relu(Id a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  const bool req = wants_grad(a);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    const Tensor& va = t.value(a);
    double* da = t.grad_slot(a).data();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (va[i] > 0.0) da[i] += g[i];
  });
}

Tape::Id Tape::silu(Id a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * sigmoid(ta[i]);
  const bool req = wants_grad(a);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    const Tensor& va = t.value(a);
    double* da = t.grad_slot(a).data();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double s = sigmoid(va[i]);
      da[i] += g[i] * s * (1.0 + va[i] * (1.0 - s));
    }
  });
}

Tape::Id Tape::layer_norm(Id a, Id gain, Id bias) {
  const Tensor& ta = value(a);
  const Tensor& tg = value(gain);
  const Tensor& tb = value(bias);
  if (ta.rank() < 1) throw ContractError("layer_norm requires rank >= 1");
  const std::size_t F = ta.shape().back();
  if (tg.rank() != 1 || tb.rank() != 1 || tg.dim(0) != F || tb.dim(0) != F)
    throw ContractError("layer_norm gain/bias shape mismatch");
  const std::size_t rows = ta.numel() / F;

  Tensor xhat(ta.shape());
  std::vector<double> inv_sd(rows);
  Tensor out(ta.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ta.data() + r * F;
    double mu = 0.0;
    for (std::size_t f = 0; f < F; ++f) mu += x[f];
    mu /= static_cast<double>(F);
    double var = 0.0;
    for (std::size_t f = 0; f < F; ++f) var += (x[f] - mu) * (x[f] - mu);
    var /= static_cast<double>(F);
    const double isd = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sd[r] = isd;
    double* xh = xhat.data() + r * F;
    double* y = out.data() + r * F;
    for (std::size_t f = 0; f < F; ++f) {
      xh[f] = (x[f] - mu) * isd;
      y[f] = xh[f] * tg[f] + tb[f];
    }
  }

  const bool req = wants_grad(a) || wants_grad(gain) || wants_grad(bias);
  return push(std::move(out), req,
              !req ? std::function<void(Tape&)>()
                   : [=, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    const Tensor& tg2 = t.value(gain);
    if (t.wants_grad(gain)) {
      double* dg = t.grad_slot(gain).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t f = 0; f < F; ++f) dg[f] += g[r * F + f] * xhat[r * F + f];
    }
    if (t.wants_grad(bias)) {
      double* db = t.grad_slot(bias).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t f = 0; f < F; ++f) db[f] += g[r * F + f];
    }
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      std::vector<double> dxhat(F);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          dxhat[f] = g[r * F + f] * tg2[f];
          m1 += dxhat[f];
          m2 += dxhat[f] * xhat[r * F + f];
        }
        m1 /= static_cast<double>(F);
        m2 /= static_cast<double>(F);
        for (std::size_t f = 0; f < F; ++f)
          da[r * F + f] += (dxhat[f] - m1 - xhat[r * F + f] * m2) * inv_sd[r];
      }
    }
  });
}

Tape::Id Tape::reshape(Id a, std::vector<std::size_t> shape) {
  const Tensor& ta = value(a);
  if (Tensor::compute_numel(shape) != ta.numel()) throw ContractError("reshape element count");
  Tensor out(std::move(shape), ta.vec());
  const bool req = wants_grad(a);
  return push(std::move(out), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const Tensor& g = t.nodes_[t.current_pull_].grad;
    double* da = t.grad_slot(a).data();
    for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
  });
}

Tape::Id Tape::sum(Id a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.numel(); ++i) acc += ta[i];
  const bool req = wants_grad(a);
  return push(Tensor::scalar(acc), req, !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const double g = t.nodes_[t.current_pull_].grad[0];
    double* da = t.grad_slot(a).data();
    for (std::size_t i = 0; i < t.value(a).numel(); ++i) da[i] += g;
  });
}

Tape::Id Tape::mse(Id a, Id b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) throw ContractError("mse shape mismatch");
  const std::size_t n = ta.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ta[i] - tb[i];
    acc += d * d;
  }
  const bool req = wants_grad(a) || wants_grad(b);
  return push(Tensor::scalar(acc / static_cast<double>(n)), req,
              !req ? std::function<void(Tape&)>() : [=](Tape& t) {
    const double g = t.nodes_[t.current_pull_].grad[0] * 2.0 / static_cast<double>(n);
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (t.wants_grad(a)) {
      double* da = t.grad_slot(a).data();
      for (std::size_t i = 0; i < n; ++i) da[i] += g * (va[i] - vb[i]);
    }
    if (t.wants_grad(b)) {
      double* db = t.grad_slot(b).data();
      for (std::size_t i = 0; i < n; ++i) db[i] -= g * (va[i] - vb[i]);
    }
  });
}

Tape::Id Tape::weighted_row_sse(Id pred, Id target, std::vector<double> weights) {
  const Tensor& tp = value(pred);
  const Tensor& tt = value(target);
  if (tp.rank() != 2 || !tp.same_shape(tt) || weights.size() != tp.dim(0))
    throw ContractError("weighted_row_sse shape mismatch");
  const std::size_t S = tp.dim(0), N = tp.dim(1);
  double acc = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    double row = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double d = tp.at(s, i) - tt.at(s, i);
      row += d * d;
    }
    acc += weights[s] * row;
  }
  const bool req = wants_grad(pred) || wants_grad(target);
  return push(Tensor::scalar(acc / static_cast<double>(S)), req,
              !req ? std::function<void(Tape&)>() : [=, w = std::move(weights)](Tape& t) {
    const double g = t.nodes_[t.current_pull_].grad[0] * 2.0 / static_cast<double>(S);
    const Tensor& vp = t.value(pred);
    const Tensor& vt = t.value(target);
    if (t.wants_grad(pred)) {
      Tensor& dp = t.grad_slot(pred);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < N; ++i)
          dp.at(s, i) += g * w[s] * (vp.at(s, i) - vt.at(s, i));
    }
    if (t.wants_grad(target)) {
      Tensor& dt = t.grad_slot(target);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < N; ++i)
          dt.at(s, i) -= g * w[s] * (vp.at(s, i) - vt.at(s, i));
    }
  });
}

void Tape::backward(Id loss) {
  if (!grad_enabled_) throw ContractError("backward on a grad-disabled tape");
  if (backward_done_) throw ContractError("backward called twice on the same tape");
  if (value(loss).numel() != 1) throw ContractError("backward requires a scalar loss");
  if (!nodes_[loss].requires_grad) throw ContractError("loss does not depend on any leaf");
  backward_done_ = true;
  nodes_[loss].grad[0] = 1.0;
  for (std::size_t i = loss + 1; i-- > 0;) {
    if (nodes_[i].pull && nodes_[i].requires_grad) {
      current_pull_ = static_cast<Id>(i);
      nodes_[i].pull(*this);
    }
  }
}

}  // namespace gdmpc::ad
