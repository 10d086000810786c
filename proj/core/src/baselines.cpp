#include "infocons/baselines.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "infocons/errors.hpp"
#include "infocons/explainer.hpp"

namespace infocons {

std::vector<std::size_t> cp_maxpool(const PointModel& model, const PointCloud& pc) {
  const EncoderOutput enc = model.encode(pc, model.params().num_layers());
  std::vector<std::size_t> idx = enc.global_argmax;
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

ScoreMap cp_scores(const PointModel& model, const PointCloud& pc) {
  ScoreMap out;
  out.method = "cp";
  out.scores.assign(pc.size(), 0.0);
  for (auto i : cp_maxpool(model, pc)) out.scores[i] = 1.0;
  return out;
}

ScoreMap cppp_meanpool(const PointModel& model, const PointCloud& pc) {
  const EncoderOutput enc = model.encode(pc, model.params().tap_layer, true);
  std::vector<double> s(enc.z.rows());
  for (std::size_t r = 0; r < enc.z.rows(); ++r) {
    double acc = 0;
    for (double v : enc.z.row(r)) acc += std::abs(v);
    s[r] = acc / static_cast<double>(enc.z.cols());
  }
  ScoreMap out;
  out.method = "cp++";
  out.scores = min_max_normalize(s);
  if (out.scores.size() != pc.size()) out.scores = interpolate_scores(enc.anchors, out.scores, pc.points);
  return out;
}

Point3 coordinate_median(std::span<const Point3> points) {
  if (points.empty()) throw std::invalid_argument("coordinate_median: no points");
  Point3 c{};
  std::vector<double> v(points.size());
  for (int k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < points.size(); ++i) v[i] = points[i][k];
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    c[k] = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  return c;
}

std::vector<double> radial_derivative(std::span<const Point3> points, std::span<const Point3> grad,
                                      const Point3& center) {
  if (points.size() != grad.size()) throw std::invalid_argument("radial_derivative: length mismatch");
  std::vector<double> out(points.size(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double r2 = 0, dot = 0;
    for (int k = 0; k < 3; ++k) {
      const double d = points[i][k] - center[k];
      r2 += d * d;
      dot += grad[i][k] * d;
    }
    if (r2 > 0) out[i] = dot / std::sqrt(r2);
  }
  return out;
}

std::vector<double> pcsam_raw_scores(std::span<const Point3> points, std::span<const Point3> grad, double alpha) {
  const Point3 c = coordinate_median(points);
  auto dr = radial_derivative(points, grad, c);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double r2 = 0;
    for (int k = 0; k < 3; ++k) r2 += (points[i][k] - c[k]) * (points[i][k] - c[k]);
    const double r = std::sqrt(r2);
    dr[i] = r > 0 ? -dr[i] * std::pow(r, 1.0 + alpha) : 0.0;
  }
  return dr;
}

ScoreMap pcsam(const PointModel& model, const PointCloud& pc, std::size_t label, const PcsamConfig& config) {
  if (config.alpha < 0) throw std::invalid_argument("pcsam: alpha must be non-negative");
  if (config.iters == 0 || config.drop_per_iter == 0)
    throw std::invalid_argument("pcsam: iters and drop_per_iter must be positive");
  if (config.iters * config.drop_per_iter >= pc.size())
    throw std::invalid_argument("pcsam: " + std::to_string(config.iters) + " x " +
                                std::to_string(config.drop_per_iter) + " drops need more than " +
                                std::to_string(pc.size()) + " points");
  std::vector<std::size_t> alive(pc.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::vector<std::size_t> order;
  std::vector<double> last_raw(pc.size(), 0.0);
  for (std::size_t it = 0; it < config.iters; ++it) {
    const PointCloud cur = subset(pc, alive);
    const InputGradient g = model.input_gradient(cur, label);
    const auto raw = pcsam_raw_scores(cur.points, g.grad, config.alpha);
    for (std::size_t i = 0; i < alive.size(); ++i) last_raw[alive[i]] = raw[i];
    const auto ranked = rank_by_score(raw);
    std::vector<char> drop(alive.size(), 0);
    for (std::size_t j = 0; j < config.drop_per_iter; ++j) {
      order.push_back(alive[ranked[j]]);
      drop[ranked[j]] = 1;
    }
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < alive.size(); ++i)
      if (!drop[i]) next.push_back(alive[i]);
    alive = std::move(next);
  }
  ScoreMap out;
  out.method = "pcsam";
  out.iterations = config.iters;
  out.scores = iterative_drop_scores(pc.size(), order, last_raw);
  return out;
}

LimeFit lime3d_fit(std::size_t n, const MaskQuery& query, const Lime3DConfig& config) {
  if (n == 0) throw std::invalid_argument("lime3d: empty cloud");
  if (config.n_queries < 10) throw std::invalid_argument("lime3d: need at least 10 queries");
  if (config.lambda < 0) throw std::invalid_argument("lime3d: lambda must be non-negative");
  if (!(config.drop_prob >= 0 && config.drop_prob < 1))
    throw std::invalid_argument("lime3d: drop probability must be in [0, 1)");
  Rng rng = Rng(config.seed).fork(21);
  const std::size_t q = config.n_queries;
  Eigen::MatrixXd x(q, n);
  Eigen::VectorXd y(q);
  std::vector<char> keep(n, 1);
  for (std::size_t s = 0; s < q; ++s) {
    if (s > 0) {
      do {
        for (auto& k : keep) k = rng.uniform() >= config.drop_prob ? 1 : 0;
      } while (std::none_of(keep.begin(), keep.end(), [](char k) { return k != 0; }));
    }
    for (std::size_t i = 0; i < n; ++i) x(s, i) = keep[i];
    y(s) = query(keep);
  }
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  const Eigen::MatrixXd gram = xc.transpose() * xc;
  const Eigen::VectorXd rhs = xc.transpose() * yc;

  double lambda = config.lambda;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
      const Eigen::VectorXd w = llt.solve(rhs);
      if (w.allFinite()) {
        LimeFit fit;
        fit.coefficients.assign(w.data(), w.data() + w.size());
        fit.intercept = y_mean - x_mean.dot(w);
        fit.lambda_used = lambda;
        return fit;
      }
    }
    lambda = std::max(1e-6, lambda * 1e3) + 1e-3 * gram.diagonal().maxCoeff();
  }
  throw NumericError("lime3d: normal equations stayed singular after raising lambda");
}

ScoreMap lime3d(const PointModel& model, const PointCloud& pc, const Lime3DConfig& config) {
  std::size_t target = 0;
  bool first = true;
  const MaskQuery query = [&](const std::vector<char>& keep) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) idx.push_back(i);
    const auto p = model.classify(idx.size() == pc.size() ? pc : subset(pc, idx));
    if (first) {
      target = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      first = false;
    }
    return p[target];
  };
  const LimeFit fit = lime3d_fit(pc.size(), query, config);
  ScoreMap out;
  out.method = "lime3d";
  out.scores = min_max_normalize(fit.coefficients);
  return out;
}

ScoreMap random_scores(const PointCloud& pc, Rng& rng) {
  ScoreMap out;
  out.method = "random";
  out.scores.resize(pc.size());
  for (auto& s : out.scores) s = rng.uniform();
  return out;
}

}  // namespace infocons
