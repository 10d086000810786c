#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "infocons/errors.hpp"
#include "infocons/explainer.hpp"
#include "test_support.hpp"

namespace infocons {
namespace {

using testing::sample_cloud;
using testing::small_shape;

ExplainerConfig small_config() {
  ExplainerConfig c;
  c.reduced_dim = 8;
  c.tap_layer = 3;
  c.seed = 3;
  return c;
}

Tensor random_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor z(Shape{rows, cols});
  for (auto& v : z.storage()) v = rng.normal();
  return z;
}

TEST(AttentionBottleneck, MaskIsStrictlyInsideTheUnitInterval) {
  const BottleneckParams p = init_bottleneck(32, small_config());
  ad::Graph g;
  const auto theta = bind_bottleneck(g, p, false);
  const Tensor m = attention_bottleneck(theta, g.constant(random_features(20, 32, 1))).mask.value();
  ASSERT_EQ(m.shape(), (Shape{20, 32}));
  for (double v : m.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(AttentionBottleneck, ZeroExpansionGivesOneHalf) {
  BottleneckParams p = init_bottleneck(16, small_config());
  p.w_e = Tensor(p.w_e.shape());
  p.b_e = Tensor(p.b_e.shape());
  ad::Graph g;
  const auto theta = bind_bottleneck(g, p, false);
  for (double v : attention_bottleneck(theta, g.constant(random_features(7, 16, 2))).mask.data())
    EXPECT_EQ(v, 0.5);
}

TEST(AttentionBottleneck, PermutingPointsPermutesTheMask) {
  const BottleneckParams p = init_bottleneck(16, small_config());
  const Tensor z = random_features(9, 16, 3);
  std::vector<std::size_t> perm{4, 0, 8, 1, 7, 2, 6, 3, 5};
  Tensor zp(z.shape());
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 16; ++c) zp(r, c) = z(perm[r], c);
  const Explainer ex(p);
  const Tensor m = ex.mask(z), mp = ex.mask(zp);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(mp(r, c), m(perm[r], c), 1e-12);
}

TEST(AttentionBottleneck, FeatureWidthMismatchIsRejected) {
  const BottleneckParams p = init_bottleneck(16, small_config());
  ad::Graph g;
  const auto theta = bind_bottleneck(g, p, false);
  EXPECT_THROW(attention_bottleneck(theta, g.constant(random_features(4, 15, 1))), ShapeError);
}

struct HeadFixture {
  ModelParams mp = init_model(ArchKind::flat, 3, 4, small_shape());
  PointModel model{mp};
  PointCloud pc = sample_cloud(ShapeKind::cylinder, 48, 6);
  Batch batch = make_batch(mp, pc);
};

TEST(InfoConsLoss, IdentityMaskReproducesTheFrozenModel) {
  HeadFixture f;
  ad::Graph g;
  const ModelVars mv = bind_model(g, f.mp, false);
  const Tensor z = f.model.encode(f.pc, 3, true).z;
  ad::Var zv = g.constant(z);
  const MaskOutput id = identity_mask(g, z.shape());
  const std::vector<double> mean(z.cols(), 0.3), sd(z.cols(), 2.0);
  Rng rng(1);
  const std::size_t label[] = {1};
  const LossTerms l = infocons_loss(id, zv, frozen_head(f.mp, mv, f.batch, 3), label, 0.7, NoiseSpec{mean, sd, &rng});
  const double model_ce = -std::log(f.model.classify(f.pc)[1]);
  EXPECT_EQ(l.info.item(), 0.0);
  EXPECT_NEAR(l.total.item(), model_ce, 1e-9);
  EXPECT_NEAR(l.ce.item(), model_ce, 1e-9);
}

TEST(InfoConsLoss, ClosedMaskAtThePriorMeanCarriesNoInformation) {
  ad::Graph g;
  const std::vector<double> mean{0.5, -1.0, 2.0}, sd{1.0, 0.5, 3.0};
  Tensor z(Shape{4, 3});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) z(r, c) = mean[c];
  const ad::Var info = infocons_info(g.constant(Tensor(Shape{4, 3}, 0.0)), g.constant(z), mean, sd);
  EXPECT_NEAR(info.item(), 0.0, 1e-15);
}

TEST(InfoConsLoss, ZeroBetaMakesTotalEqualCrossEntropy) {
  HeadFixture f;
  ad::Graph g;
  const ModelVars mv = bind_model(g, f.mp, false);
  const BottleneckParams p = init_bottleneck(32, small_config());
  const auto theta = bind_bottleneck(g, p, true);
  ad::Var z = g.constant(f.model.encode(f.pc, 3, true).z);
  const MaskOutput m = attention_bottleneck(theta, z);
  const std::vector<double> mean(32, 0.0), sd(32, 1.0);
  Rng rng(2);
  const std::size_t label[] = {0};
  const LossTerms l = infocons_loss(m, z, frozen_head(f.mp, mv, f.batch, 3), label, 0.0, NoiseSpec{mean, sd, &rng});
  EXPECT_EQ(l.total.item(), l.ce.item());
  EXPECT_GT(l.info.item(), 0.0);
  EXPECT_THROW(infocons_loss(m, z, frozen_head(f.mp, mv, f.batch, 3), label, -1.0, NoiseSpec{mean, sd, &rng}),
               std::invalid_argument);
  const std::vector<double> bad(32, 0.0);
  EXPECT_THROW(infocons_loss(m, z, frozen_head(f.mp, mv, f.batch, 3), label, 0.1, NoiseSpec{mean, bad, &rng}),
               std::invalid_argument);
}

TEST(InfoConsLoss, ClosedFormKlMatchesSampling) {
  Rng rng(5);
  const std::size_t rows = 3, cols = 2;
  Tensor m(Shape{rows, cols}), z(Shape{rows, cols});
  for (auto& v : m.storage()) v = 0.1 + 0.8 * rng.uniform();
  for (auto& v : z.storage()) v = rng.normal();
  const std::vector<double> mu{0.2, -0.4}, sd{0.8, 1.3};
  ad::Graph g;
  const double closed = infocons_info(g.constant(m), g.constant(z), mu, sd).item();
  // log p(x) - log q(x) averaged over draws from p, entry by entry
  double mc = 0;
  const int draws = 20000;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double mp = m(r, c) * z(r, c) + (1 - m(r, c)) * mu[c], sp = (1 - m(r, c)) * sd[c];
      double acc = 0;
      for (int s = 0; s < draws; ++s) {
        const double x = mp + sp * rng.normal();
        const double lp = -std::log(sp) - 0.5 * ((x - mp) / sp) * ((x - mp) / sp);
        const double lq = -std::log(sd[c]) - 0.5 * ((x - mu[c]) / sd[c]) * ((x - mu[c]) / sd[c]);
        acc += lp - lq;
      }
      mc += acc / draws;
    }
  mc /= static_cast<double>(rows * cols);
  EXPECT_NEAR(mc, closed, 0.03 * closed);
}

TEST(SelectiveCpLoss, ZeroBetaAndIdentity) {
  HeadFixture f;
  ad::Graph g;
  const ModelVars mv = bind_model(g, f.mp, false);
  ad::Var z = g.constant(f.model.encode(f.pc, 3, true).z);
  Rng rng(3);
  const std::size_t label[] = {2};
  const LossTerms id =
      selective_cp_loss(identity_mask(g, z.shape()), z, frozen_head(f.mp, mv, f.batch, 3), label, 0.5, 0.7, 4, rng);
  EXPECT_NEAR(id.ce.item(), -std::log(f.model.classify(f.pc)[2]), 1e-9);
  EXPECT_EQ(id.info.item(), 0.0);
  const BottleneckParams p = init_bottleneck(32, small_config());
  const auto theta = bind_bottleneck(g, p, true);
  const LossTerms l =
      selective_cp_loss(attention_bottleneck(theta, z), z, frozen_head(f.mp, mv, f.batch, 3), label, 0.0, 0.7, 4, rng);
  EXPECT_EQ(l.total.item(), l.ce.item());
}

TEST(SelectiveCpLoss, InfoEstimateMatchesDirectSampling) {
  // Reference: E[log p(y)] for y ~ BinaryConcrete(alpha = 1, tau), sampled
  // by inverse transform and scored with the closed-form density.
  const double tau = 0.7;
  Rng ref_rng(9);
  double ref = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = ref_rng.uniform_open();
    const double y = 1.0 / (1.0 + std::exp(-(std::log(u) - std::log1p(-u)) / tau));
    const double logp = std::log(tau) - (tau + 1) * (std::log(y) + std::log1p(-y)) -
                        2 * std::log(std::pow(y, -tau) + std::pow(1 - y, -tau));
    ref += logp;
  }
  ref /= n;
  ad::Graph g;
  Rng rng(10);
  const double est = selective_info(g.constant(Tensor(Shape{64, 64}, 0.0)), tau, 16, rng).item();
  EXPECT_NEAR(est, ref, 0.02 * std::abs(ref));
}

TEST(Interpolation, AnchorsReproduceTheirOwnScores) {
  Rng rng(1);
  std::vector<Point3> anchors(10);
  std::vector<double> s(10);
  for (std::size_t i = 0; i < 10; ++i) {
    anchors[i] = {rng.normal(), rng.normal(), rng.normal()};
    s[i] = rng.uniform();
  }
  EXPECT_EQ(interpolate_scores(anchors, s, anchors), s);
}

TEST(Interpolation, ConstantAndEquidistantCases) {
  const std::vector<Point3> anchors{{-1, 0, 0}, {1, 0, 0}, {0, 50, 0}, {0, 60, 0}};
  const std::vector<Point3> targets{{0, 0, 0}, {0.3, 0.2, -0.1}};
  const std::vector<double> c(4, 0.37);
  for (double v : interpolate_scores(anchors, c, targets)) EXPECT_NEAR(v, 0.37, 1e-15);
  const std::vector<double> s{0.0, 1.0, 0.5, 0.5};
  EXPECT_NEAR(interpolate_scores(anchors, s, std::vector<Point3>{{0, 0, 0}})[0], 0.5, 0.05);
  // fewer anchors than k: reduced, not rejected
  const std::vector<Point3> two{{0, 0, 0}, {1, 0, 0}};
  const std::vector<double> ts{0.0, 1.0};
  EXPECT_NEAR(interpolate_scores(two, ts, std::vector<Point3>{{0.25, 0, 0}})[0], 0.25, 1e-12);
}

struct ExplainerFixture {
  PointModel model{init_model(ArchKind::flat, 3, 4, small_shape())};
  Explainer ex{init_bottleneck(32, small_config())};
};

TEST(ScoreMap, OneForwardAndChannelMean) {
  ExplainerFixture f;
  const PointCloud pc = sample_cloud(ShapeKind::torus, 50, 1);
  f.model.reset_counters();
  f.ex.reset_counters();
  const ScoreMap s = score_map(f.ex, f.model, pc);
  EXPECT_EQ(f.model.forwards(), 1u);
  EXPECT_EQ(f.model.backwards(), 0u);
  EXPECT_EQ(f.ex.forwards(), 1u);
  ASSERT_EQ(s.size(), pc.size());
  const Tensor m = f.ex.mask(f.model.encode(pc, 3, true).z);
  for (std::size_t r = 0; r < pc.size(); ++r) {
    double mean = 0;
    for (double v : m.row(r)) mean += v;
    EXPECT_DOUBLE_EQ(s.scores[r], mean / 32.0);
    EXPECT_GE(s.scores[r], 0.0);
    EXPECT_LE(s.scores[r], 1.0);
  }
}

TEST(ScoreMap, HierarchicalModelsAreInterpolatedToEveryPoint) {
  const PointModel model(init_model(ArchKind::hier, 3, 4, small_shape()));
  const Explainer ex(init_bottleneck(32, small_config()));
  const PointCloud pc = sample_cloud(ShapeKind::chair_like, 100, 2);
  const ScoreMap s = score_map(ex, model, pc);
  ASSERT_EQ(s.size(), 100u);
  const auto enc = model.encode(pc, 3, true);
  const Tensor m = ex.mask(enc.z);
  // anchors keep their own channel mean exactly
  for (std::size_t a = 0; a < enc.anchor_index.size(); ++a) {
    double mean = 0;
    for (double v : m.row(a)) mean += v;
    EXPECT_DOUBLE_EQ(s.scores[enc.anchor_index[a]], mean / 32.0);
  }
}

TEST(ScoreMap, MismatchedModelIsRejected) {
  const PointModel model(init_model(ArchKind::flat, 3, 4, small_shape()));
  const Explainer ex(init_bottleneck(24, small_config()));
  EXPECT_THROW(score_map(ex, model, sample_cloud(ShapeKind::cube, 20, 1)), DataError);
}

TEST(DynamicScoreMap, SingleIterationIsTheOnePassTop) {
  ExplainerFixture f;
  const PointCloud pc = sample_cloud(ShapeKind::cone, 60, 3);
  const DynamicScoreMap d = dynamic_score_map(f.ex, f.model, pc, 1, 10);
  const auto top = rank_by_score(score_map(f.ex, f.model, pc).scores);
  ASSERT_EQ(d.dropped.size(), 1u);
  EXPECT_EQ(d.dropped[0], std::vector<std::size_t>(top.begin(), top.begin() + 10));
}

TEST(DynamicScoreMap, TwentyByTenProtocol) {
  ExplainerFixture f;
  const PointCloud pc = sample_cloud(ShapeKind::pot_plant, 256, 4);
  f.model.reset_counters();
  const DynamicScoreMap d = dynamic_score_map(f.ex, f.model, pc, 20, 10);
  EXPECT_EQ(f.model.forwards(), 20u);
  std::set<std::size_t> all;
  for (const auto& it : d.dropped) all.insert(it.begin(), it.end());
  EXPECT_EQ(all.size(), 200u);
  for (auto i : d.dropped[0]) EXPECT_GT(d.map.scores[i], 0.95);
  for (double v : d.map.scores) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(dynamic_score_map(f.ex, f.model, pc, 26, 10), std::invalid_argument);
}

TEST(ExplainerCheckpoint, RoundTrip) {
  BottleneckParams p = init_bottleneck(32, small_config());
  p.prior_mean.assign(32, 0.5);
  p.prior_std.assign(32, 0.25);
  p.model_checksum = 1234;
  const auto dir = testing::temp_dir("explainer");
  save_explainer(dir / "e.bin", p);
  const BottleneckParams back = load_explainer(dir / "e.bin");
  EXPECT_EQ(back.config.reduced_dim, 8u);
  EXPECT_EQ(back.config.tap_layer, 3u);
  EXPECT_EQ(back.model_checksum, 1234u);
  EXPECT_EQ(back.prior_std, p.prior_std);
  for (std::size_t i = 0; i < p.w_v.size(); ++i)
    EXPECT_EQ(back.w_v[i], static_cast<double>(static_cast<float>(p.w_v[i])));
  std::filesystem::remove_all(dir);
}

TEST(ExplainerTraining, DeterministicAndBetaOrdered) {
  const LabeledDataset ds = testing::tiny_dataset(4, 48);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  const PointModel model(train_classifier(ds, ArchKind::flat, tc).params);
  ExplainerConfig ec;
  ec.reduced_dim = 8;
  ec.epochs = 6;
  ec.batch_size = 4;
  ec.train_limit = 0;
  ec.beta = 0.0;
  const std::uint64_t before = weights_checksum(model.params());
  const ExplainerResult a = train_explainer(model, ds, ec);
  const ExplainerResult b = train_explainer(model, ds, ec);
  EXPECT_EQ(weights_checksum(model.params()), before);
  ASSERT_EQ(a.history.size(), 6u);
  EXPECT_FALSE(a.diverged);
  EXPECT_EQ(a.params.w_q, b.params.w_q);
  EXPECT_EQ(a.params.model_checksum, weights_checksum(model.params()));
  EXPECT_EQ(a.params.prior_mean.size(), model.params().layer_dim(model.params().tap_layer));
  ec.beta = 10.0;
  const ExplainerResult c = train_explainer(model, ds, ec);
  EXPECT_LT(a.history.back().ce, c.history.back().ce);
  ec.beta = -1;
  EXPECT_THROW(train_explainer(model, ds, ec), std::invalid_argument);
}

}  // namespace
}  // namespace infocons
