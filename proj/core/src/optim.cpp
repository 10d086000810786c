#include "infocons/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "infocons/errors.hpp"

namespace infocons {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

std::optional<OptimizerKind> parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  return std::nullopt;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
}

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: params/grads count mismatch");
  ++steps_;
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto w = params[p]->data();
      auto g = grads[p].data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
    }
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p]->data();
    auto g = grads[p].data();
    if (g.size() != w.size()) throw ShapeError("optimizer: gradient shape differs from parameter");
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

}  // namespace infocons
