#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "infocons/errors.hpp"
#include "infocons/shapes.hpp"

namespace infocons {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("infocons_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Shapes, EveryKindIsNormalizedToTheUnitSphere) {
  for (ShapeKind kind : all_shape_kinds()) {
    Rng rng(3);
    const PointCloud pc = generate_shape(kind, 300, rng, 0.01, 1.0);
    ASSERT_EQ(pc.size(), 300u) << to_string(kind);
    Point3 c{};
    double rmax = 0;
    for (const auto& p : pc.points)
      for (int k = 0; k < 3; ++k) c[k] += p[k] / 300.0;
    for (const auto& p : pc.points) rmax = std::max(rmax, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[k], 0.0, 1e-12) << to_string(kind);
    EXPECT_NEAR(rmax, 1.0, 1e-12) << to_string(kind);
    EXPECT_EQ(pc.part_ids.size(), pc.size());
  }
}

TEST(Shapes, GenerationIsDeterministic) {
  Rng a(11), b(11);
  const PointCloud x = generate_shape(ShapeKind::chair_like, 128, a, 0.01, 1.0);
  const PointCloud y = generate_shape(ShapeKind::chair_like, 128, b, 0.01, 1.0);
  EXPECT_EQ(x.points, y.points);
}

TEST(Shapes, NamesRoundTrip) {
  for (ShapeKind kind : all_shape_kinds()) EXPECT_EQ(parse_shape_kind(to_string(kind)), kind);
  EXPECT_FALSE(parse_shape_kind("dodecahedron"));
  Rng rng(1);
  EXPECT_THROW(generate_shape("dodecahedron", 10, rng, 0.0), std::invalid_argument);
  EXPECT_THROW(generate_shape(ShapeKind::cube, 10, rng, 0.0, 1.5), std::invalid_argument);
}

TEST(Shapes, DegenerateCloudsAreRejected) {
  PointCloud empty;
  EXPECT_THROW(normalize_unit_sphere(empty), DataError);
  PointCloud same;
  same.points.assign(4, Point3{1, 1, 1});
  EXPECT_THROW(normalize_unit_sphere(same), DataError);
}

TEST(Shapes, SubsetAndRemoveKeepLabelAndOrder) {
  PointCloud pc;
  for (int i = 0; i < 5; ++i) pc.points.push_back({double(i), 0, 0});
  pc.part_ids = {0, 1, 2, 3, 4};
  pc.label = 2;
  const std::size_t keep[] = {3, 1};
  const PointCloud s = subset(pc, keep);
  EXPECT_EQ(s.points[0][0], 3.0);
  EXPECT_EQ(s.part_ids[1], 1);
  EXPECT_EQ(s.label, 2u);
  const PointCloud r = remove_points(pc, keep);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r.points[1][0], 2.0);
}

TEST(Shapes, XyzRoundTripsWithScores) {
  PointCloud pc;
  pc.points = {{0.125, -0.5, 1.0}, {0.333333333, 0.25, -0.75}};
  const std::vector<double> scores{0.9, 0.1};
  const auto parsed = parse_xyz(format_xyz(pc, scores));
  ASSERT_EQ(parsed.cloud.size(), 2u);
  ASSERT_TRUE(parsed.scores);
  EXPECT_NEAR(parsed.cloud.points[1][0], 0.333333333, 1e-9);
  EXPECT_DOUBLE_EQ((*parsed.scores)[0], 0.9);
  EXPECT_THROW(parse_xyz("1 2\n"), DataError);
  EXPECT_THROW(parse_xyz("1 2 x\n"), DataError);
}

TEST(Shapes, DatasetIsInterleavedAndReproducible) {
  DatasetSpec spec;
  spec.train_per_class = 3;
  spec.test_per_class = 2;
  spec.points = 32;
  const LabeledDataset a = generate_dataset(spec), b = generate_dataset(spec);
  ASSERT_EQ(a.train.size(), 18u);
  ASSERT_EQ(a.test.size(), 12u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].label, i % 6);
    EXPECT_EQ(a.train[i].points, b.train[i].points);
  }
  EXPECT_NE(a.train[0].points, a.test[0].points);
}

TEST(Shapes, DatasetDirectoryRoundTrip) {
  DatasetSpec spec;
  spec.kinds = {ShapeKind::sphere, ShapeKind::torus};
  spec.train_per_class = 2;
  spec.test_per_class = 1;
  spec.points = 8;
  spec.seed = 9;
  const LabeledDataset ds = generate_dataset(spec);
  const fs::path dir = temp_dir("dataset");
  write_dataset(ds, dir);
  const LabeledDataset back = read_dataset(dir);
  EXPECT_EQ(back.class_names, ds.class_names);
  EXPECT_EQ(back.spec.seed, 9u);
  ASSERT_EQ(back.train.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(back.train[i].label, ds.train[i].label);
    for (std::size_t p = 0; p < ds.train[i].size(); ++p)
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(back.train[i].points[p][k], ds.train[i].points[p][k], 1e-8);
  }
  EXPECT_THROW(read_dataset(dir / "missing"), DataError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace infocons
