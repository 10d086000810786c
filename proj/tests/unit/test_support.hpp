#pragma once

// Small fixtures shared by the unit tests.

#include <filesystem>
#include <string>

#include "infocons/pcmodel.hpp"
#include "infocons/shapes.hpp"

namespace infocons::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  std::filesystem::path p = std::filesystem::temp_directory_path() / ("infocons_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline ModelShape small_shape() {
  ModelShape s;
  s.encoder_dims = {3, 16, 24, 32};
  s.head_dims = {16};
  return s;
}

inline PointCloud sample_cloud(ShapeKind kind, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud pc = generate_shape(kind, n, rng, 0.01, 1.0);
  pc.label = static_cast<std::size_t>(kind) % 3;
  return pc;
}

inline LabeledDataset tiny_dataset(std::size_t per_class = 4, std::size_t points = 64) {
  DatasetSpec spec;
  spec.kinds = {ShapeKind::sphere, ShapeKind::cube, ShapeKind::cone};
  spec.train_per_class = per_class;
  spec.test_per_class = 2;
  spec.points = points;
  return generate_dataset(spec);
}

}  // namespace infocons::testing
