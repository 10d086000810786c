#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "infocons/baselines.hpp"
#include "test_support.hpp"

namespace infocons {
namespace {

using testing::sample_cloud;
using testing::small_shape;

PointModel small_model(ArchKind arch = ArchKind::flat) { return PointModel(init_model(arch, 3, 11, small_shape())); }

TEST(CriticalPoints, SubsetReproducesTheGlobalFeature) {
  const PointModel model = small_model();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PointCloud pc = sample_cloud(ShapeKind::table_like, 80, seed);
    const auto cp = cp_maxpool(model, pc);
    EXPECT_LE(cp.size(), model.params().global_dim());
    EXPECT_TRUE(std::is_sorted(cp.begin(), cp.end()));
    const Tensor full = model.encode(pc, model.params().num_layers()).global;
    const Tensor kept = model.encode(subset(pc, cp), model.params().num_layers()).global;
    EXPECT_EQ(full, kept);
  }
}

TEST(CriticalPoints, ScoreMapMarksTheSubset) {
  const PointModel model = small_model();
  const PointCloud pc = sample_cloud(ShapeKind::cube, 40, 2);
  model.reset_counters();
  const ScoreMap s = cp_scores(model, pc);
  EXPECT_EQ(model.forwards(), 1u);
  const auto cp = cp_maxpool(model, pc);
  for (std::size_t i = 0; i < pc.size(); ++i)
    EXPECT_EQ(s.scores[i], std::binary_search(cp.begin(), cp.end(), i) ? 1.0 : 0.0);
}

TEST(CriticalPointsPlus, NormalizedAndSingleForward) {
  for (auto arch : {ArchKind::flat, ArchKind::hier}) {
    const PointModel model = small_model(arch);
    const PointCloud pc = sample_cloud(ShapeKind::sphere, 100, 3);
    model.reset_counters();
    const ScoreMap s = cppp_meanpool(model, pc);
    EXPECT_EQ(model.forwards(), 1u);
    ASSERT_EQ(s.size(), 100u);
    EXPECT_NEAR(*std::max_element(s.scores.begin(), s.scores.end()), 1.0, 1e-12);
    for (double v : s.scores) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
  }
}

TEST(Pcsam, RadialDerivativeOracle) {
  // L = sum_i |x_i - c|^2 has dL/dr_i = 2 r_i.
  const Point3 c{0.1, -0.2, 0.3};
  Rng rng(4);
  std::vector<Point3> pts(30), grad(30);
  for (std::size_t i = 0; i < 30; ++i) {
    pts[i] = {rng.normal(), rng.normal(), rng.normal()};
    for (int d = 0; d < 3; ++d) grad[i][d] = 2 * (pts[i][d] - c[d]);
  }
  pts.push_back(c);
  grad.push_back({1, 1, 1});
  const auto dr = radial_derivative(pts, grad, c);
  for (std::size_t i = 0; i < 30; ++i) {
    const double r = std::hypot(pts[i][0] - c[0], pts[i][1] - c[1], pts[i][2] - c[2]);
    EXPECT_NEAR(dr[i], 2 * r, 1e-12);
  }
  EXPECT_EQ(dr[30], 0.0);
}

TEST(Pcsam, RawScoresAndMedian) {
  const std::vector<Point3> pts{{0, 0, 0}, {2, 0, 0}, {0, 0, 4}};
  const std::vector<Point3> grad{{1, 0, 0}, {-1, 0, 0}, {0, 0, 0.5}};
  const Point3 med = coordinate_median(pts);
  EXPECT_EQ(med, (Point3{0, 0, 0}));
  const auto s = pcsam_raw_scores(pts, grad, 1.0);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1], 4.0, 1e-12);   // -(-1) * 2^2
  EXPECT_NEAR(s[2], -8.0, 1e-12);  // -(0.5) * 4^2
}

TEST(Pcsam, OneForwardAndBackwardPerIteration) {
  const PointModel model = small_model();
  const PointCloud pc = sample_cloud(ShapeKind::cylinder, 256, 5);
  model.reset_counters();
  const ScoreMap s = pcsam(model, pc, 0);
  EXPECT_EQ(model.forwards(), 20u);
  EXPECT_EQ(model.backwards(), 20u);
  EXPECT_EQ(s.iterations, 20u);
  std::size_t high = 0;
  for (double v : s.scores) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    high += v > 0.5;
  }
  EXPECT_EQ(high, 200u);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[idx[i]] = static_cast<double>(i);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1 - 6 * d2 / (n * (n * n - 1));
}

TEST(Lime, RecoversALinearBlackBox) {
  Rng rng(6);
  std::vector<double> w(32);
  for (auto& v : w) v = rng.normal();
  std::size_t calls = 0;
  Lime3DConfig cfg;
  cfg.n_queries = 200;
  cfg.lambda = 1e-6;
  const LimeFit fit = lime3d_fit(
      32,
      [&](const std::vector<char>& keep) {
        ++calls;
        double y = 0.5;
        for (std::size_t i = 0; i < 32; ++i) y += w[i] * keep[i];
        return y;
      },
      cfg);
  EXPECT_EQ(calls, 200u);
  EXPECT_GT(spearman(fit.coefficients, w), 0.95);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(fit.coefficients[i], w[i], 1e-3);
  EXPECT_NEAR(fit.intercept, 0.5, 1e-3);
}

TEST(Lime, FirstQueryKeepsEverythingAndInputsAreValidated) {
  std::vector<std::vector<char>> seen;
  Lime3DConfig cfg;
  cfg.n_queries = 10;
  lime3d_fit(
      5, [&](const std::vector<char>& keep) { seen.push_back(keep); return 0.0; }, cfg);
  EXPECT_EQ(seen.front(), std::vector<char>(5, 1));
  for (const auto& k : seen) EXPECT_TRUE(std::any_of(k.begin(), k.end(), [](char c) { return c != 0; }));
  cfg.n_queries = 5;
  EXPECT_THROW(lime3d_fit(5, [](const std::vector<char>&) { return 0.0; }, cfg), std::invalid_argument);
}

TEST(Lime, CountsModelForwards) {
  const PointModel model = small_model();
  const PointCloud pc = sample_cloud(ShapeKind::torus, 64, 7);
  model.reset_counters();
  const ScoreMap s = lime3d(model, pc);
  EXPECT_EQ(model.forwards(), 100u);
  EXPECT_EQ(s.size(), 64u);
}

TEST(RandomScores, UniformAndSeeded) {
  const PointCloud pc = sample_cloud(ShapeKind::cone, 500, 8);
  Rng a(3), b(3);
  const ScoreMap s = random_scores(pc, a);
  EXPECT_EQ(s.scores, random_scores(pc, b).scores);
  double mean = 0;
  for (double v : s.scores) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    mean += v / 500.0;
  }
  EXPECT_NEAR(mean, 0.5, 0.05);
}

}  // namespace
}  // namespace infocons
