#pragma once

// Comparison attribution methods. Each returns a ScoreMap index-aligned with
// the input cloud, except cp_maxpool which returns the critical subset.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "infocons/pcmodel.hpp"
#include "infocons/scoremap.hpp"

namespace infocons {

// Distinct input indices that win at least one channel of the final
// max-pool, ascending. One model forward.
std::vector<std::size_t> cp_maxpool(const PointModel& model, const PointCloud& pc);

// CP subset as a ScoreMap: 1 for critical points, 0 elsewhere.
ScoreMap cp_scores(const PointModel& model, const PointCloud& pc);

// Channel mean of |z| at the model's tap layer, min-max normalized (a
// constant map becomes 0.5). Interpolated to all points when the tap layer
// is subsampled. One model forward.
ScoreMap cppp_meanpool(const PointModel& model, const PointCloud& pc);

struct PcsamConfig {
  double alpha = 1.0;
  std::size_t iters = 20;
  std::size_t drop_per_iter = 10;
};

// Radial derivative of a loss about the coordinate-wise median:
// dL/dr_i = <dL/dx_i, (x_i - c)/r_i>; zero when r_i = 0.
std::vector<double> radial_derivative(std::span<const Point3> points, std::span<const Point3> grad,
                                      const Point3& center);

// s_i = -(dL/dr_i) * r_i^(1 + alpha), with r_i = 0 scoring 0.
std::vector<double> pcsam_raw_scores(std::span<const Point3> points, std::span<const Point3> grad,
                                     double alpha);

Point3 coordinate_median(std::span<const Point3> points);

// Iterative radial-gradient saliency against `label`: one forward and one
// backward per iteration.
ScoreMap pcsam(const PointModel& model, const PointCloud& pc, std::size_t label, const PcsamConfig& config = {});

struct Lime3DConfig {
  std::size_t n_queries = 100;
  double drop_prob = 0.2;
  double lambda = 1.0;
  std::uint64_t seed = 1;
};

// Black box: probability of the explained class given a keep-mask.
using MaskQuery = std::function<double(const std::vector<char>& keep)>;

struct LimeFit {
  std::vector<double> coefficients;  // one per point
  double intercept = 0;
  double lambda_used = 0;
};

// Ridge regression of query responses on random keep-masks. Query 0 keeps
// every point; every later mask keeps each point with probability
// 1 - drop_prob and is redrawn if it would keep nothing.
LimeFit lime3d_fit(std::size_t n_points, const MaskQuery& query, const Lime3DConfig& config);

// Surrogate fit against the model's probability of its own prediction on the
// full cloud; exactly n_queries model forwards.
ScoreMap lime3d(const PointModel& model, const PointCloud& pc, const Lime3DConfig& config = {});

// i.i.d. U(0,1) control scores.
ScoreMap random_scores(const PointCloud& pc, Rng& rng);

}  // namespace infocons
