#pragma once

// Define-by-run reverse-mode differentiation over small dense arrays.
//
// A Graph is a tape: every operation appends a node whose value is computed
// immediately. Because nodes are only ever appended, creation order is a
// topological order, and backward() walks the tape once in reverse.
// forward() re-evaluates every non-leaf node in creation order, which lets
// callers change a leaf with set_value() and recompute (finite differences).
//
// Graphs are single-owner and not thread-safe; build one per worker.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "infocons/rng.hpp"
#include "infocons/tensor.hpp"

namespace infocons::ad {

enum class Op : std::uint8_t {
  leaf,
  matmul,
  transpose,
  add,
  sub,
  mul,
  div,
  add_row,
  mul_row,
  scale,
  add_scalar,
  elu,
  sigmoid,
  exp,
  log,
  softplus,
  logaddexp,
  clamp_min,
  stop_gradient,
  softmax,
  log_softmax,
  max_reduce,
  mean_reduce,
  var_reduce,
  sum_all,
  mean_all,
  group_max,
  gather_rows,
  cross_entropy,
};

const char* op_name(Op op);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid as long as the graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const;
  // Forward value and adjoint; the adjoint is all zeros until backward().
  Tensor value() const;
  Tensor grad() const;
  std::span<const double> data() const;
  std::span<const double> grad_data() const;
  double item() const;
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor t, bool requires_grad = true);
  Var constant(Tensor t) { return leaf(std::move(t), false); }

  // Replace a leaf's data (same shape) without re-running anything.
  void set_value(Var leaf, const Tensor& t);

  // Recompute every non-leaf node from the current leaf values.
  void forward();

  // Reverse sweep from a scalar; clears and repopulates all adjoints.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  // Number of nodes visited by the last backward() (for the once-each check).
  std::size_t last_backward_visits() const { return backward_visits_; }

  // Low-level append used by the free-function ops below.
  struct Node {
    Op op = Op::leaf;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::uint32_t a = kNone;
    std::uint32_t b = kNone;
    double scalar = 0.0;
    int axis = 0;
    bool requires_grad = false;
    std::vector<std::size_t> index;      // argmax positions
    std::vector<std::size_t> aux_index;  // labels / gather rows / groups
    std::vector<double> cache;           // saved forward quantities
  };
  static constexpr std::uint32_t kNone = UINT32_MAX;

  Var push(Node node);
  const Node& node(std::uint32_t id) const { return nodes_[id]; }

 private:
  void evaluate(Node& n);
  void propagate(Node& n);

  std::vector<Node> nodes_;
  std::size_t backward_visits_ = 0;
};

// ---- primitives -----------------------------------------------------------
// Shape mismatches throw ShapeError naming both shapes.

Var matmul(Var a, Var b);        // [m,k] x [k,n]
Var transpose(Var a);            // rank 2
Var add(Var a, Var b);           // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_row(Var a, Var row);     // [m,n] + [n] broadcast over rows
Var mul_row(Var a, Var row);     // [m,n] * [n] broadcast over rows
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var elu(Var a);                  // alpha = 1
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var logaddexp(Var a, Var b);
Var clamp_min(Var a, double lo); // zero adjoint where clamped
Var stop_gradient(Var a);

// axis 0 normalizes down columns (over points), axis 1 along rows.
Var softmax(Var a, int axis);
Var log_softmax(Var a, int axis);

// Reductions over one axis of a rank-2 tensor, producing rank 1.
// max_reduce keeps the argmax per output entry; ties go to the lowest index.
Var max_reduce(Var a, int axis);
Var mean_reduce(Var a, int axis);
Var var_reduce(Var a, int axis);  // population variance
Var sum_all(Var a);
Var mean_all(Var a);

// Per-group max over rows: groups is a flat list of group_size row indices
// per output row. Output shape [groups.size()/group_size, cols].
Var group_max(Var a, std::span<const std::size_t> groups, std::size_t group_size);
Var gather_rows(Var a, std::span<const std::size_t> rows);

// Mean cross-entropy of row-wise logits [B,C] (or [C]) against labels.
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

// argmax indices retained by a max_reduce / group_max node.
std::span<const std::size_t> argmax_of(Var reduced);

// ---- composites -----------------------------------------------------------

Var affine(Var x, Var weight, Var bias);  // x W + b

// Mean over k relaxed samples softmax((g + log_softmax(logits)) / tau) with
// Gumbel noise g. logits is rank 1 of length N; result has length N.
Var gumbel_softmax(Var logits, double tau, std::size_t k, Rng& rng);

// Per-entry KL(N(mu_p, sigma_p^2) || N(mu_q, sigma_q^2)); all four operands
// share one shape. Throws std::invalid_argument if any sigma <= 0.
Var gaussian_kl(Var mu_p, Var sigma_p, Var mu_q, Var sigma_q);

}  // namespace infocons::ad
