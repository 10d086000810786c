#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "infocons/rng.hpp"
#include "infocons/tensor.hpp"

namespace infocons {

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;
  std::optional<std::size_t> label;
  // Which parametric part each point came from; metadata only.
  std::vector<int> part_ids;

  std::size_t size() const { return points.size(); }
};

// N x 3 tensor, one point per row.
Tensor to_tensor(const PointCloud& pc);
Tensor to_tensor(std::span<const Point3> points);

// Points at the given indices, in that order; label and part ids follow.
PointCloud subset(const PointCloud& pc, std::span<const std::size_t> keep);
// Everything except the given indices, original order preserved.
PointCloud remove_points(const PointCloud& pc, std::span<const std::size_t> drop);

enum class ShapeKind { sphere, cube, cylinder, cone, pot_plant, chair_like, torus, table_like };

const std::vector<ShapeKind>& all_shape_kinds();
std::string_view to_string(ShapeKind kind);
std::optional<ShapeKind> parse_shape_kind(std::string_view name);

// Samples n points uniformly by area from the parametric surface, applies
// Gaussian jitter of standard deviation `jitter`, then normalizes to the unit
// sphere. Multi-part kinds split n across parts in proportion to area.
// `variation` in [0, 1] scales how far per-instance proportions (aspect
// ratios, part sizes) may stray from the canonical shape.
PointCloud generate_shape(ShapeKind kind, std::size_t n, Rng& rng, double jitter, double variation = 0.0);
PointCloud generate_shape(std::string_view kind, std::size_t n, Rng& rng, double jitter,
                          double variation = 0.0);

// Centroid to the origin, farthest point at radius one. Throws DataError on
// an empty cloud or one whose points all coincide.
void normalize_unit_sphere(PointCloud& pc);
PointCloud normalized(PointCloud pc);

// ---- .xyz text format: "x y z [score]" per line, 9 significant digits ----

struct XyzContents {
  PointCloud cloud;
  std::optional<std::vector<double>> scores;
};

std::string format_xyz(const PointCloud& pc, std::span<const double> scores = {});
XyzContents parse_xyz(std::string_view text, std::string_view source = "<memory>");
void save_xyz(const std::filesystem::path& path, const PointCloud& pc,
              std::span<const double> scores = {});
XyzContents load_xyz(const std::filesystem::path& path);

// ---- labeled synthetic datasets ----

struct DatasetSpec {
  std::vector<ShapeKind> kinds{ShapeKind::sphere,   ShapeKind::cube,      ShapeKind::cylinder,
                               ShapeKind::cone,     ShapeKind::pot_plant, ShapeKind::chair_like};
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  std::size_t points = 256;
  double jitter = 0.01;
  double variation = 1.0;
  std::uint64_t seed = 1;
};

struct LabeledDataset {
  DatasetSpec spec;
  std::vector<std::string> class_names;
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;

  std::size_t num_classes() const { return class_names.size(); }
};

// Cloud i of class c in split s draws from an Rng forked on (s, c, i), so the
// splits never share a stream and regeneration is bit-identical.
LabeledDataset generate_dataset(const DatasetSpec& spec);

// Layout: dataset.txt (key = value), index.csv (split,file,label),
// train/NNNNN.xyz, test/NNNNN.xyz.
void write_dataset(const LabeledDataset& ds, const std::filesystem::path& dir);
LabeledDataset read_dataset(const std::filesystem::path& dir);

std::string dataset_manifest(const DatasetSpec& spec);

}  // namespace infocons
