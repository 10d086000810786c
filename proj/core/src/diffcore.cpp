#include "infocons/diffcore.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "infocons/errors.hpp"

namespace infocons::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims dims_of(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

[[noreturn]] void shape_fail(const char* what, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) +
                   " vs " + shape_string(b));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Graph::Node make(Op op, Shape shape, Var a, Var b = {}) {
  Graph::Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.a = a.valid() ? a.id() : Graph::kNone;
  n.b = b.valid() ? b.id() : Graph::kNone;
  return n;
}

Graph& graph_of(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("operation on an empty Var");
  if (&a.graph() != &b.graph()) throw std::invalid_argument("operands live in different graphs");
  return a.graph();
}

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty Var");
  return a.graph();
}

void check_axis(const char* what, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument(std::string(what) + ": axis must be 0 or 1");
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::add_row: return "add_row";
    case Op::mul_row: return "mul_row";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::elu: return "elu";
    case Op::sigmoid: return "sigmoid";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::softplus: return "softplus";
    case Op::logaddexp: return "logaddexp";
    case Op::clamp_min: return "clamp_min";
    case Op::stop_gradient: return "stop_gradient";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::max_reduce: return "max_reduce";
    case Op::mean_reduce: return "mean_reduce";
    case Op::var_reduce: return "var_reduce";
    case Op::sum_all: return "sum_all";
    case Op::mean_all: return "mean_all";
    case Op::group_max: return "group_max";
    case Op::gather_rows: return "gather_rows";
    case Op::cross_entropy: return "cross_entropy";
  }
  return "?";
}

// ---- Var ------------------------------------------------------------------

const Shape& Var::shape() const { return graph_->node(id_).shape; }

Tensor Var::value() const {
  const auto& n = graph_->node(id_);
  return Tensor(n.shape, n.value);
}

Tensor Var::grad() const {
  const auto& n = graph_->node(id_);
  if (n.grad.size() != n.value.size()) return Tensor(n.shape, 0.0);
  return Tensor(n.shape, n.grad);
}

std::span<const double> Var::data() const { return graph_->node(id_).value; }
std::span<const double> Var::grad_data() const { return graph_->node(id_).grad; }

double Var::item() const {
  const auto& n = graph_->node(id_);
  if (n.value.size() != 1) throw ShapeError("item() on " + shape_string(n.shape));
  return n.value[0];
}

bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }

// ---- Graph ----------------------------------------------------------------

Var Graph::leaf(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.shape = t.shape();
  n.value = std::move(t.storage());
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Graph::set_value(Var leaf, const Tensor& t) {
  auto& n = nodes_.at(leaf.id());
  if (n.op != Op::leaf) throw std::invalid_argument("set_value on a non-leaf node");
  if (n.shape != t.shape()) shape_fail("set_value", n.shape, t.shape());
  n.value.assign(t.data().begin(), t.data().end());
}

Var Graph::push(Node node) {
  node.requires_grad = false;
  if (node.op != Op::stop_gradient) {
    if (node.a != kNone && nodes_[node.a].requires_grad) node.requires_grad = true;
    if (node.b != kNone && nodes_[node.b].requires_grad) node.requires_grad = true;
  }
  node.value.assign(shape_size(node.shape), 0.0);
  evaluate(node);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Graph::forward() {
  for (auto& n : nodes_) {
    if (n.op != Op::leaf) evaluate(n);
  }
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw std::invalid_argument("backward: loss from another graph");
  auto& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward on non-scalar of shape " + shape_string(root.shape));
  }
  for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
  root.grad[0] = 1.0;
  backward_visits_ = 0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    ++backward_visits_;
    if (!n.requires_grad || n.op == Op::leaf) continue;
    propagate(n);
  }
}

void Graph::evaluate(Node& n) {
  auto& out = n.value;
  switch (n.op) {
    case Op::leaf:
      return;
    case Op::matmul: {
      const auto& A = nodes_[n.a];
      const auto& B = nodes_[n.b];
      const Dims da = dims_of(A.shape), db = dims_of(B.shape);
      // Fixed i-k-j order: each output row depends only on its own input row,
      // so a point's features are bit-identical whatever else is in the cloud.
      const double* a = A.value.data();
      const double* b = B.value.data();
      double* o = out.data();
      std::fill(o, o + da.rows * db.cols, 0.0);
      for (std::size_t i = 0; i < da.rows; ++i) {
        double* orow = o + i * db.cols;
        for (std::size_t k = 0; k < da.cols; ++k) {
          const double aik = a[i * da.cols + k];
          const double* brow = b + k * db.cols;
          for (std::size_t j = 0; j < db.cols; ++j) orow[j] += aik * brow[j];
        }
      }
      return;
    }
    case Op::transpose: {
      const auto& A = nodes_[n.a];
      const Dims d = dims_of(A.shape);
      for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t c = 0; c < d.cols; ++c) out[c * d.rows + r] = A.value[r * d.cols + c];
      return;
    }
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: {
      const auto& x = nodes_[n.a].value;
      const auto& y = nodes_[n.b].value;
      for (std::size_t i = 0; i < out.size(); ++i) {
        switch (n.op) {
          case Op::add: out[i] = x[i] + y[i]; break;
          case Op::sub: out[i] = x[i] - y[i]; break;
          case Op::mul: out[i] = x[i] * y[i]; break;
          default: out[i] = x[i] / y[i]; break;
        }
      }
      return;
    }
    case Op::add_row:
    case Op::mul_row: {
      const auto& x = nodes_[n.a].value;
      const auto& row = nodes_[n.b].value;
      const std::size_t cols = row.size();
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = n.op == Op::add_row ? x[i] + row[i % cols] : x[i] * row[i % cols];
      }
      return;
    }
    case Op::scale: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * n.scalar;
      return;
    }
    case Op::add_scalar: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + n.scalar;
      return;
    }
    case Op::elu: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : std::expm1(x[i]);
      return;
    }
    case Op::sigmoid: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x[i]);
      return;
    }
    case Op::exp: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
      return;
    }
    case Op::log: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
      return;
    }
    case Op::softplus: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_scalar(x[i]);
      return;
    }
    case Op::logaddexp: {
      const auto& x = nodes_[n.a].value;
      const auto& y = nodes_[n.b].value;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = std::max(x[i], y[i]);
        out[i] = m + std::log1p(std::exp(-std::abs(x[i] - y[i])));
      }
      return;
    }
    case Op::clamp_min: {
      const auto& x = nodes_[n.a].value;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x[i], n.scalar);
      return;
    }
    case Op::stop_gradient: {
      out = nodes_[n.a].value;
      return;
    }
    case Op::softmax:
    case Op::log_softmax: {
      const auto& x = nodes_[n.a].value;
      const Dims d = dims_of(n.shape);
      const bool along_rows = n.axis == 1 || n.shape.size() < 2;
      const std::size_t outer = along_rows ? d.rows : d.cols;
      const std::size_t inner = along_rows ? d.cols : d.rows;
      const std::size_t stride = along_rows ? 1 : d.cols;
      for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = along_rows ? o * d.cols : o;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < inner; ++j) m = std::max(m, x[base + j * stride]);
        double s = 0.0;
        for (std::size_t j = 0; j < inner; ++j) s += std::exp(x[base + j * stride] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < inner; ++j) {
          const double v = x[base + j * stride] - lse;
          out[base + j * stride] = n.op == Op::softmax ? std::exp(v) : v;
        }
      }
      return;
    }
    case Op::max_reduce: {
      const auto& A = nodes_[n.a];
      const Dims d = dims_of(A.shape);
      n.index.assign(out.size(), 0);
      if (n.axis == 0) {
        for (std::size_t c = 0; c < d.cols; ++c) {
          std::size_t best = 0;
          for (std::size_t r = 1; r < d.rows; ++r)
            if (A.value[r * d.cols + c] > A.value[best * d.cols + c]) best = r;
          out[c] = A.value[best * d.cols + c];
          n.index[c] = best;
        }
      } else {
        for (std::size_t r = 0; r < d.rows; ++r) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < d.cols; ++c)
            if (A.value[r * d.cols + c] > A.value[r * d.cols + best]) best = c;
          out[r] = A.value[r * d.cols + best];
          n.index[r] = best;
        }
      }
      return;
    }
    case Op::mean_reduce:
    case Op::var_reduce: {
      const auto& A = nodes_[n.a];
      const Dims d = dims_of(A.shape);
      const std::size_t outer = n.axis == 0 ? d.cols : d.rows;
      const std::size_t inner = n.axis == 0 ? d.rows : d.cols;
      n.cache.assign(outer, 0.0);  // means
      for (std::size_t o = 0; o < outer; ++o) {
        double s = 0.0;
        for (std::size_t j = 0; j < inner; ++j)
          s += n.axis == 0 ? A.value[j * d.cols + o] : A.value[o * d.cols + j];
        const double mean = s / static_cast<double>(inner);
        n.cache[o] = mean;
        if (n.op == Op::mean_reduce) {
          out[o] = mean;
        } else {
          double v = 0.0;
          for (std::size_t j = 0; j < inner; ++j) {
            const double e = (n.axis == 0 ? A.value[j * d.cols + o] : A.value[o * d.cols + j]) - mean;
            v += e * e;
          }
          out[o] = v / static_cast<double>(inner);
        }
      }
      return;
    }
    case Op::sum_all:
    case Op::mean_all: {
      const auto& x = nodes_[n.a].value;
      double s = 0.0;
      for (double v : x) s += v;
      out[0] = n.op == Op::sum_all ? s : s / static_cast<double>(x.size());
      return;
    }
    case Op::group_max: {
      const auto& A = nodes_[n.a];
      const std::size_t cols = dims_of(A.shape).cols;
      const std::size_t k = static_cast<std::size_t>(n.axis);
      const std::size_t groups = n.aux_index.size() / k;
      n.index.assign(out.size(), 0);
      for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t c = 0; c < cols; ++c) {
          std::size_t best = n.aux_index[g * k];
          for (std::size_t j = 1; j < k; ++j) {
            const std::size_t r = n.aux_index[g * k + j];
            const double v = A.value[r * cols + c], bv = A.value[best * cols + c];
            if (v > bv || (v == bv && r < best)) best = r;
          }
          out[g * cols + c] = A.value[best * cols + c];
          n.index[g * cols + c] = best;
        }
      }
      return;
    }
    case Op::gather_rows: {
      const auto& A = nodes_[n.a];
      const std::size_t cols = dims_of(A.shape).cols;
      for (std::size_t r = 0; r < n.aux_index.size(); ++r) {
        std::copy_n(A.value.begin() + static_cast<std::ptrdiff_t>(n.aux_index[r] * cols), cols,
                    out.begin() + static_cast<std::ptrdiff_t>(r * cols));
      }
      return;
    }
    case Op::cross_entropy: {
      const auto& L = nodes_[n.a];
      const Dims d = dims_of(L.shape);
      n.cache.assign(L.value.size(), 0.0);  // softmax probabilities
      double total = 0.0;
      for (std::size_t r = 0; r < d.rows; ++r) {
        const double* x = L.value.data() + r * d.cols;
        double m = *std::max_element(x, x + d.cols);
        double s = 0.0;
        for (std::size_t c = 0; c < d.cols; ++c) s += std::exp(x[c] - m);
        const double lse = m + std::log(s);
        for (std::size_t c = 0; c < d.cols; ++c) n.cache[r * d.cols + c] = std::exp(x[c] - lse);
        total += lse - x[n.aux_index[r]];
      }
      out[0] = total / static_cast<double>(d.rows);
      return;
    }
  }
}

void Graph::propagate(Node& n) {
  const auto& g = n.grad;
  auto accumulate = [&](std::uint32_t id, auto&& fn) {
    auto& p = nodes_[id];
    if (!p.requires_grad) return;
    fn(p);
  };
  switch (n.op) {
    case Op::leaf:
    case Op::stop_gradient:
      return;
    case Op::matmul: {
      auto& A = nodes_[n.a];
      auto& B = nodes_[n.b];
      const Dims da = dims_of(A.shape), db = dims_of(B.shape);
      MapC G(g.data(), da.rows, db.cols);
      if (A.requires_grad)
        Map(A.grad.data(), da.rows, da.cols).noalias() += G * MapC(B.value.data(), db.rows, db.cols).transpose();
      if (B.requires_grad)
        Map(B.grad.data(), db.rows, db.cols).noalias() += MapC(A.value.data(), da.rows, da.cols).transpose() * G;
      return;
    }
    case Op::transpose: {
      accumulate(n.a, [&](Node& A) {
        const Dims d = dims_of(A.shape);
        for (std::size_t r = 0; r < d.rows; ++r)
          for (std::size_t c = 0; c < d.cols; ++c) A.grad[r * d.cols + c] += g[c * d.rows + r];
      });
      return;
    }
    case Op::add:
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i]; });
      accumulate(n.b, [&](Node& B) { for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i]; });
      return;
    case Op::sub:
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i]; });
      accumulate(n.b, [&](Node& B) { for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] -= g[i]; });
      return;
    case Op::mul: {
      const auto& x = nodes_[n.a].value;
      const auto& y = nodes_[n.b].value;
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * y[i]; });
      accumulate(n.b, [&](Node& B) { for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i] * x[i]; });
      return;
    }
    case Op::div: {
      const auto& x = nodes_[n.a].value;
      const auto& y = nodes_[n.b].value;
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] / y[i]; });
      accumulate(n.b, [&](Node& B) {
        for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] -= g[i] * x[i] / (y[i] * y[i]);
      });
      return;
    }
    case Op::add_row: {
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i]; });
      accumulate(n.b, [&](Node& R) {
        const std::size_t cols = R.value.size();
        for (std::size_t i = 0; i < g.size(); ++i) R.grad[i % cols] += g[i];
      });
      return;
    }
    case Op::mul_row: {
      const auto& x = nodes_[n.a].value;
      const auto& row = nodes_[n.b].value;
      const std::size_t cols = row.size();
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * row[i % cols]; });
      accumulate(n.b, [&](Node& R) { for (std::size_t i = 0; i < g.size(); ++i) R.grad[i % cols] += g[i] * x[i]; });
      return;
    }
    case Op::scale:
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * n.scalar; });
      return;
    case Op::add_scalar:
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i]; });
      return;
    case Op::elu:
      accumulate(n.a, [&](Node& A) {
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * (A.value[i] > 0 ? 1.0 : n.value[i] + 1.0);
      });
      return;
    case Op::sigmoid:
      accumulate(n.a, [&](Node& A) {
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      });
      return;
    case Op::exp:
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * n.value[i]; });
      return;
    case Op::log:
      accumulate(n.a, [&](Node& A) { for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] / A.value[i]; });
      return;
    case Op::softplus:
      accumulate(n.a, [&](Node& A) {
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * sigmoid_scalar(A.value[i]);
      });
      return;
    case Op::logaddexp: {
      const auto& x = nodes_[n.a].value;
      const auto& y = nodes_[n.b].value;
      accumulate(n.a, [&](Node& A) {
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * std::exp(x[i] - n.value[i]);
      });
      accumulate(n.b, [&](Node& B) {
        for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i] * std::exp(y[i] - n.value[i]);
      });
      return;
    }
    case Op::clamp_min:
      accumulate(n.a, [&](Node& A) {
        for (std::size_t i = 0; i < g.size(); ++i)
          if (A.value[i] > n.scalar) A.grad[i] += g[i];
      });
      return;
    case Op::softmax:
    case Op::log_softmax: {
      accumulate(n.a, [&](Node& A) {
        const Dims d = dims_of(n.shape);
        const bool along_rows = n.axis == 1 || n.shape.size() < 2;
        const std::size_t outer = along_rows ? d.rows : d.cols;
        const std::size_t inner = along_rows ? d.cols : d.rows;
        const std::size_t stride = along_rows ? 1 : d.cols;
        for (std::size_t o = 0; o < outer; ++o) {
          const std::size_t base = along_rows ? o * d.cols : o;
          if (n.op == Op::softmax) {
            double dot = 0.0;
            for (std::size_t j = 0; j < inner; ++j) {
              const std::size_t i = base + j * stride;
              dot += g[i] * n.value[i];
            }
            for (std::size_t j = 0; j < inner; ++j) {
              const std::size_t i = base + j * stride;
              A.grad[i] += n.value[i] * (g[i] - dot);
            }
          } else {
            double sum = 0.0;
            for (std::size_t j = 0; j < inner; ++j) sum += g[base + j * stride];
            for (std::size_t j = 0; j < inner; ++j) {
              const std::size_t i = base + j * stride;
              A.grad[i] += g[i] - std::exp(n.value[i]) * sum;
            }
          }
        }
      });
      return;
    }
    case Op::max_reduce:
      accumulate(n.a, [&](Node& A) {
        const std::size_t cols = dims_of(A.shape).cols;
        for (std::size_t o = 0; o < g.size(); ++o) {
          const std::size_t i = n.axis == 0 ? n.index[o] * cols + o : o * cols + n.index[o];
          A.grad[i] += g[o];
        }
      });
      return;
    case Op::mean_reduce:
    case Op::var_reduce:
      accumulate(n.a, [&](Node& A) {
        const Dims d = dims_of(A.shape);
        const std::size_t inner = n.axis == 0 ? d.rows : d.cols;
        const double inv = 1.0 / static_cast<double>(inner);
        for (std::size_t r = 0; r < d.rows; ++r) {
          for (std::size_t c = 0; c < d.cols; ++c) {
            const std::size_t o = n.axis == 0 ? c : r;
            const std::size_t i = r * d.cols + c;
            if (n.op == Op::mean_reduce) {
              A.grad[i] += g[o] * inv;
            } else {
              A.grad[i] += g[o] * 2.0 * (A.value[i] - n.cache[o]) * inv;
            }
          }
        }
      });
      return;
    case Op::sum_all:
    case Op::mean_all:
      accumulate(n.a, [&](Node& A) {
        const double s = n.op == Op::sum_all ? g[0] : g[0] / static_cast<double>(A.value.size());
        for (auto& v : A.grad) v += s;
      });
      return;
    case Op::group_max:
      accumulate(n.a, [&](Node& A) {
        const std::size_t cols = dims_of(A.shape).cols;
        for (std::size_t o = 0; o < g.size(); ++o) A.grad[n.index[o] * cols + o % cols] += g[o];
      });
      return;
    case Op::gather_rows:
      accumulate(n.a, [&](Node& A) {
        const std::size_t cols = dims_of(A.shape).cols;
        for (std::size_t r = 0; r < n.aux_index.size(); ++r)
          for (std::size_t c = 0; c < cols; ++c) A.grad[n.aux_index[r] * cols + c] += g[r * cols + c];
      });
      return;
    case Op::cross_entropy:
      accumulate(n.a, [&](Node& L) {
        const Dims d = dims_of(L.shape);
        const double s = g[0] / static_cast<double>(d.rows);
        for (std::size_t r = 0; r < d.rows; ++r) {
          for (std::size_t c = 0; c < d.cols; ++c) {
            const std::size_t i = r * d.cols + c;
            L.grad[i] += s * (n.cache[i] - (c == n.aux_index[r] ? 1.0 : 0.0));
          }
        }
      });
      return;
  }
}

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    shape_fail("matmul", a.shape(), b.shape());
  return g.push(make(Op::matmul, {a.shape()[0], b.shape()[1]}, a, b));
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  if (a.shape().size() != 2) throw ShapeError("transpose: needs rank 2, got " + shape_string(a.shape()));
  return g.push(make(Op::transpose, {a.shape()[1], a.shape()[0]}, a));
}

namespace {
Var binary(Op op, const char* name, Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (a.shape() != b.shape()) shape_fail(name, a.shape(), b.shape());
  return g.push(make(op, a.shape(), a, b));
}

Var unary(Op op, Var a, double scalar = 0.0) {
  Graph& g = graph_of(a);
  auto n = make(op, a.shape(), a);
  n.scalar = scalar;
  return g.push(std::move(n));
}

Var rowwise(Op op, const char* name, Var a, Var row) {
  Graph& g = graph_of(a, row);
  if (row.shape().size() != 1 || a.shape().empty() || a.shape().back() != row.shape()[0])
    shape_fail(name, a.shape(), row.shape());
  return g.push(make(op, a.shape(), a, row));
}

Var reduce(Op op, const char* name, Var a, int axis) {
  Graph& g = graph_of(a);
  check_axis(name, axis);
  if (a.shape().empty()) throw ShapeError(std::string(name) + ": scalar input");
  const Dims d = dims_of(a.shape());
  auto n = make(op, {axis == 0 ? d.cols : d.rows}, a);
  n.axis = axis;
  return g.push(std::move(n));
}
}  // namespace

Var add(Var a, Var b) { return binary(Op::add, "add", a, b); }
Var sub(Var a, Var b) { return binary(Op::sub, "sub", a, b); }
Var mul(Var a, Var b) { return binary(Op::mul, "mul", a, b); }
Var div(Var a, Var b) { return binary(Op::div, "div", a, b); }
Var logaddexp(Var a, Var b) { return binary(Op::logaddexp, "logaddexp", a, b); }
Var add_row(Var a, Var row) { return rowwise(Op::add_row, "add_row", a, row); }
Var mul_row(Var a, Var row) { return rowwise(Op::mul_row, "mul_row", a, row); }
Var scale(Var a, double c) { return unary(Op::scale, a, c); }
Var add_scalar(Var a, double c) { return unary(Op::add_scalar, a, c); }
Var elu(Var a) { return unary(Op::elu, a); }
Var sigmoid(Var a) { return unary(Op::sigmoid, a); }
Var exp(Var a) { return unary(Op::exp, a); }
Var log(Var a) { return unary(Op::log, a); }
Var softplus(Var a) { return unary(Op::softplus, a); }
Var clamp_min(Var a, double lo) { return unary(Op::clamp_min, a, lo); }
Var stop_gradient(Var a) { return unary(Op::stop_gradient, a); }

Var softmax(Var a, int axis) {
  check_axis("softmax", axis);
  auto n = make(Op::softmax, a.shape(), a);
  n.axis = axis;
  return graph_of(a).push(std::move(n));
}

Var log_softmax(Var a, int axis) {
  check_axis("log_softmax", axis);
  auto n = make(Op::log_softmax, a.shape(), a);
  n.axis = axis;
  return graph_of(a).push(std::move(n));
}

Var max_reduce(Var a, int axis) { return reduce(Op::max_reduce, "max_reduce", a, axis); }
Var mean_reduce(Var a, int axis) { return reduce(Op::mean_reduce, "mean_reduce", a, axis); }
Var var_reduce(Var a, int axis) { return reduce(Op::var_reduce, "var_reduce", a, axis); }

Var sum_all(Var a) { return graph_of(a).push(make(Op::sum_all, {}, a)); }
Var mean_all(Var a) { return graph_of(a).push(make(Op::mean_all, {}, a)); }

Var group_max(Var a, std::span<const std::size_t> groups, std::size_t group_size) {
  Graph& g = graph_of(a);
  if (a.shape().size() != 2) throw ShapeError("group_max: needs rank 2, got " + shape_string(a.shape()));
  if (group_size == 0 || groups.size() % group_size != 0)
    throw std::invalid_argument("group_max: group list not a multiple of group size");
  for (auto r : groups)
    if (r >= a.shape()[0]) throw std::out_of_range("group_max: row index out of range");
  auto n = make(Op::group_max, {groups.size() / group_size, a.shape()[1]}, a);
  n.aux_index.assign(groups.begin(), groups.end());
  n.axis = static_cast<int>(group_size);
  return g.push(std::move(n));
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Graph& g = graph_of(a);
  if (a.shape().size() != 2) throw ShapeError("gather_rows: needs rank 2, got " + shape_string(a.shape()));
  for (auto r : rows)
    if (r >= a.shape()[0]) throw std::out_of_range("gather_rows: row index out of range");
  auto n = make(Op::gather_rows, {rows.size(), a.shape()[1]}, a);
  n.aux_index.assign(rows.begin(), rows.end());
  return g.push(std::move(n));
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Graph& g = graph_of(logits);
  const Dims d = dims_of(logits.shape());
  if (logits.shape().empty() || labels.size() != d.rows)
    shape_fail("cross_entropy", logits.shape(), Shape{labels.size()});
  for (auto l : labels)
    if (l >= d.cols) throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " >= classes");
  auto n = make(Op::cross_entropy, {}, logits);
  n.aux_index.assign(labels.begin(), labels.end());
  return g.push(std::move(n));
}

std::span<const std::size_t> argmax_of(Var reduced) {
  const auto& n = reduced.graph().node(reduced.id());
  if (n.op != Op::max_reduce && n.op != Op::group_max)
    throw std::invalid_argument("argmax_of: node is not a max reduction");
  return n.index;
}

// ---- composites -----------------------------------------------------------

Var affine(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var gumbel_softmax(Var logits, double tau, std::size_t k, Rng& rng) {
  if (!(tau > 0)) throw std::invalid_argument("gumbel_softmax: tau must be positive");
  if (k < 1) throw std::invalid_argument("gumbel_softmax: k must be >= 1");
  if (logits.shape().size() != 1) throw ShapeError("gumbel_softmax: logits must be rank 1, got " + shape_string(logits.shape()));
  for (double v : logits.data())
    if (!std::isfinite(v)) throw NumericError("gumbel_softmax: non-finite logit");
  const std::size_t n = logits.shape()[0];
  Tensor noise(Shape{k, n});
  for (auto& v : noise.storage()) v = rng.gumbel();
  Graph& g = logits.graph();
  Var shifted = add_row(g.constant(std::move(noise)), log_softmax(logits, 0));
  return mean_reduce(softmax(scale(shifted, 1.0 / tau), 1), 0);
}

Var gaussian_kl(Var mu_p, Var sigma_p, Var mu_q, Var sigma_q) {
  for (Var s : {sigma_p, sigma_q})
    for (double v : s.data())
      if (!(v > 0)) throw std::invalid_argument("gaussian_kl: sigma must be positive");
  Var diff = sub(mu_p, mu_q);
  Var num = add(mul(sigma_p, sigma_p), mul(diff, diff));
  Var den = scale(mul(sigma_q, sigma_q), 2.0);
  return add_scalar(add(sub(log(sigma_q), log(sigma_p)), div(num, den)), -0.5);
}

}  // namespace infocons::ad
