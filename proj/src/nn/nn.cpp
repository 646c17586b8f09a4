#include "cflow/nn.hpp"

#include <cmath>

#include "cflow/errors.hpp"

namespace cflow {

Var bind(Tape& tape, Tensor& param, bool trainable) {
  if (trainable && param.requires_grad()) {
    return tape.watch(param);
  }
  Tensor copy = param;
  copy.set_requires_grad(false);
  return tape.constant(std::move(copy));
}

Dense Dense::glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& x : w) {
    x = rng.uniform(-limit, limit);
  }
  Dense d{Tensor(Shape{in, out}, std::move(w)), Tensor(Shape{out})};
  d.weight.set_requires_grad(true);
  d.bias.set_requires_grad(true);
  return d;
}

Dense Dense::zeros(std::size_t in, std::size_t out) {
  Dense d{Tensor(Shape{in, out}), Tensor(Shape{out})};
  d.weight.set_requires_grad(true);
  d.bias.set_requires_grad(true);
  return d;
}

Mlp::Mlp(const std::vector<std::size_t>& widths, bool activate_last, bool zero_last, Rng& rng)
    : activate_last_(activate_last) {
  if (widths.size() < 2) {
    throw ContractError("Mlp needs at least input and output widths");
  }
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.push_back(last && zero_last ? Dense::zeros(widths[i], widths[i + 1])
                                        : Dense::glorot(widths[i], widths[i + 1], rng));
  }
}

Var Mlp::forward(Tape& tape, const Var& x, bool trainable) {
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = add_bias(matmul(h, bind(tape, layers_[i].weight, trainable)), bind(tape, layers_[i].bias, trainable));
    if (i + 1 < layers_.size() || activate_last_) {
      h = elu(h);
    }
  }
  return h;
}

Tensor Mlp::eval(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = kernels::affine(h, layers_[i].weight, layers_[i].bias);
    if (i + 1 < layers_.size() || activate_last_) {
      kernels::elu_inplace(h);
    }
  }
  h.check_finite("Mlp::eval");
  return h;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (const Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Tensor* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    if (!p.grad()) {
      continue;
    }
    const std::vector<double>& g = *p.grad();
    auto data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] *= 1.0 - lr * cfg_.weight_decay;
      m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
      v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      data[i] -= lr * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + cfg_.eps);
    }
    p.check_finite("AdamW::step");
  }
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) {
    p->zero_grad();
  }
}

}  // namespace cflow
