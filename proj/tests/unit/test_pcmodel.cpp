#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "infocons/checkpoint.hpp"
#include "infocons/errors.hpp"
#include "infocons/pcmodel.hpp"
#include "test_support.hpp"

namespace infocons {
namespace {

using testing::sample_cloud;
using testing::small_shape;

TEST(PointModel, FlatClassifyIsPermutationInvariant) {
  const PointModel model(init_model(ArchKind::flat, 3, 5, small_shape()));
  const PointCloud pc = sample_cloud(ShapeKind::torus, 64, 2);
  std::vector<std::size_t> perm(pc.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(4);
  rng.shuffle(perm);
  EXPECT_EQ(model.classify(pc), model.classify(subset(pc, perm)));
}

TEST(PointModel, ProbabilitiesFormADistribution) {
  const PointModel model(init_model(ArchKind::flat, 4, 1, small_shape()));
  const auto p = model.classify(sample_cloud(ShapeKind::cube, 40, 1));
  ASSERT_EQ(p.size(), 4u);
  double sum = 0;
  for (double v : p) {
    EXPECT_GT(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(PointModel, MaxPoolArgmaxSetIsBoundedByWidth) {
  const PointModel model(init_model(ArchKind::flat, 3, 2, small_shape()));
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto enc = model.encode(sample_cloud(ShapeKind::chair_like, 100, s));
    ASSERT_EQ(enc.global_argmax.size(), model.params().global_dim());
    const std::set<std::size_t> distinct(enc.global_argmax.begin(), enc.global_argmax.end());
    EXPECT_LE(distinct.size(), model.params().global_dim());
    for (auto i : distinct) EXPECT_LT(i, 100u);
  }
}

TEST(PointModel, HierarchicalTapIsSubsampled) {
  const PointModel model(init_model(ArchKind::hier, 3, 2, small_shape()));
  const PointCloud pc = sample_cloud(ShapeKind::pot_plant, 96, 1);
  const auto enc = model.encode(pc, model.params().tap_layer, true);
  EXPECT_EQ(enc.z.rows(), model.params().anchors);
  EXPECT_LT(enc.z.rows(), pc.size());
  ASSERT_EQ(enc.anchors.size(), enc.z.rows());
  for (std::size_t i = 0; i < enc.anchors.size(); ++i) EXPECT_EQ(enc.anchors[i], pc.points[enc.anchor_index[i]]);
}

TEST(PointModel, CountersTrackForwardsAndBackwards) {
  const PointModel model(init_model(ArchKind::flat, 3, 2, small_shape()));
  const PointCloud pc = sample_cloud(ShapeKind::cone, 32, 1);
  model.reset_counters();
  model.classify(pc);
  model.encode(pc);
  EXPECT_EQ(model.forwards(), 2u);
  EXPECT_EQ(model.backwards(), 0u);
  model.input_gradient(pc, 1);
  EXPECT_EQ(model.forwards(), 3u);
  EXPECT_EQ(model.backwards(), 1u);
}

TEST(PointModel, InputGradientMatchesFiniteDifferences) {
  const PointModel model(init_model(ArchKind::flat, 3, 8, small_shape()));
  PointCloud pc = sample_cloud(ShapeKind::sphere, 24, 3);
  const auto g = model.input_gradient(pc, 2);
  auto loss = [&](const PointCloud& c) { return -std::log(model.classify(c)[2]); };
  EXPECT_NEAR(g.loss, loss(pc), 1e-10);
  const double h = 1e-5;
  for (std::size_t i : {0u, 7u, 23u})
    for (int k = 0; k < 3; ++k) {
      PointCloud up = pc, down = pc;
      up.points[i][k] += h;
      down.points[i][k] -= h;
      const double fd = (loss(up) - loss(down)) / (2 * h);
      EXPECT_NEAR(g.grad[i][k], fd, 1e-6 + 1e-4 * std::abs(fd));
    }
}

TEST(Sampling, FarthestPointSamplingIsGreedy) {
  const std::vector<Point3> pts{{0, 0, 0}, {1, 0, 0}, {5, 0, 0}, {2, 0, 0}};
  EXPECT_EQ(farthest_point_sampling(pts, 3, 0), (std::vector<std::size_t>{0, 2, 3}));
  const auto knn = knn_indices(pts, std::vector<Point3>{{1.5, 0, 0}}, 2);
  EXPECT_EQ(knn, (std::vector<std::size_t>{1, 3}));
}

TEST(Checkpoint, ModelRoundTripsThroughFloat32) {
  ModelParams p = init_model(ArchKind::hier, 3, 4, small_shape());
  p.prior_mean.assign(p.layer_dim(p.tap_layer), 0.25);
  p.prior_std.assign(p.layer_dim(p.tap_layer), 1.5);
  const auto dir = testing::temp_dir("ckpt");
  save_model(dir / "m.bin", p);
  const ModelParams back = load_model(dir / "m.bin");
  quantize_to_float32(p);
  EXPECT_EQ(back.encoder.size(), p.encoder.size());
  for (std::size_t l = 0; l < p.encoder.size(); ++l) EXPECT_EQ(back.encoder[l].weight, p.encoder[l].weight);
  EXPECT_EQ(weights_checksum(back), weights_checksum(p));
  EXPECT_EQ(back.arch, ArchKind::hier);
  EXPECT_EQ(back.prior_std, p.prior_std);

  // corrupt the magic
  std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.write("XXXX", 4);
  f.close();
  EXPECT_THROW(load_model(dir / "m.bin"), DataError);
  EXPECT_THROW(load_model(dir / "absent.bin"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, TensorEncodingIsStable) {
  NamedTensors t{{"a", Tensor::matrix(2, 2, {1, 2, 3, 4})}, {"b", Tensor::vector({0.5})}};
  const std::string bytes = encode_tensors(t);
  EXPECT_EQ(bytes.substr(0, 8), "INFOCKPT");
  const auto back = decode_tensors(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].second, t[0].second);
  EXPECT_THROW(decode_tensors(bytes.substr(0, bytes.size() - 2)), DataError);
}

TEST(Training, SingleClassReachesFullAccuracyInOneEpoch) {
  DatasetSpec spec;
  spec.kinds = {ShapeKind::cube};
  spec.train_per_class = 8;
  spec.test_per_class = 4;
  spec.points = 32;
  const LabeledDataset ds = generate_dataset(spec);
  TrainConfig cfg;
  cfg.epochs = 1;
  const TrainResult r = train_classifier(ds, ArchKind::flat, cfg);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].test_accuracy, 1.0);
}

TEST(Training, SameSeedGivesIdenticalWeights) {
  const LabeledDataset ds = testing::tiny_dataset(3, 32);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  const TrainResult a = train_classifier(ds, ArchKind::flat, cfg);
  const TrainResult b = train_classifier(ds, ArchKind::flat, cfg);
  EXPECT_EQ(a.params, b.params);
  cfg.seed = 2;
  const TrainResult c = train_classifier(ds, ArchKind::flat, cfg);
  EXPECT_NE(weights_checksum(a.params), weights_checksum(c.params));
}

}  // namespace
}  // namespace infocons
