#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "infocons/tensor.hpp"

namespace infocons {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
std::optional<OptimizerKind> parse_optimizer_kind(std::string_view name);

// Plain SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8) over a fixed list of
// parameter tensors. State is keyed by position in that list.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);
  std::size_t steps() const { return steps_; }

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace infocons
