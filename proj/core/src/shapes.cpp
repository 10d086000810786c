#include "infocons/shapes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "infocons/errors.hpp"

namespace infocons {
namespace fs = std::filesystem;

Tensor to_tensor(std::span<const Point3> points) {
  Tensor t(Shape{points.size(), 3});
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) t(i, c) = points[i][c];
  return t;
}

Tensor to_tensor(const PointCloud& pc) { return to_tensor(pc.points); }

PointCloud subset(const PointCloud& pc, std::span<const std::size_t> keep) {
  PointCloud out;
  out.label = pc.label;
  out.points.reserve(keep.size());
  for (auto i : keep) {
    out.points.push_back(pc.points.at(i));
    if (!pc.part_ids.empty()) out.part_ids.push_back(pc.part_ids.at(i));
  }
  return out;
}

PointCloud remove_points(const PointCloud& pc, std::span<const std::size_t> drop) {
  std::vector<char> dropped(pc.size(), 0);
  for (auto i : drop) dropped.at(i) = 1;
  std::vector<std::size_t> keep;
  keep.reserve(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i)
    if (!dropped[i]) keep.push_back(i);
  return subset(pc, keep);
}

// ---- shape kinds ----------------------------------------------------------

const std::vector<ShapeKind>& all_shape_kinds() {
  static const std::vector<ShapeKind> kinds{
      ShapeKind::sphere,    ShapeKind::cube,       ShapeKind::cylinder, ShapeKind::cone,
      ShapeKind::pot_plant, ShapeKind::chair_like, ShapeKind::torus,    ShapeKind::table_like};
  return kinds;
}

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::cone: return "cone";
    case ShapeKind::pot_plant: return "pot_plant";
    case ShapeKind::chair_like: return "chair_like";
    case ShapeKind::torus: return "torus";
    case ShapeKind::table_like: return "table_like";
  }
  return "?";
}

std::optional<ShapeKind> parse_shape_kind(std::string_view name) {
  for (auto k : all_shape_kinds())
    if (to_string(k) == name) return k;
  return std::nullopt;
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Part {
  double area;
  std::function<Point3(Rng&)> sample;
};

Point3 unit_direction(Rng& rng) {
  for (;;) {
    const double x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double n = std::sqrt(x * x + y * y + z * z);
    if (n > 1e-12) return {x / n, y / n, z / n};
  }
}

Part sphere_part(Point3 c, double r) {
  return {4 * kPi * r * r, [=](Rng& rng) {
            auto d = unit_direction(rng);
            return Point3{c[0] + r * d[0], c[1] + r * d[1], c[2] + r * d[2]};
          }};
}

// Lower hemisphere (z <= center) of an open bowl.
Part bowl_part(Point3 c, double r) {
  return {2 * kPi * r * r, [=](Rng& rng) {
            auto d = unit_direction(rng);
            return Point3{c[0] + r * d[0], c[1] + r * d[1], c[2] - r * std::abs(d[2])};
          }};
}

// Solid ball, sampled by volume; the allocation weight is its surface area.
Part ball_part(Point3 c, double r) {
  return {4 * kPi * r * r, [=](Rng& rng) {
            auto d = unit_direction(rng);
            const double s = r * std::cbrt(rng.uniform());
            return Point3{c[0] + s * d[0], c[1] + s * d[1], c[2] + s * d[2]};
          }};
}

// Rectangle spanned by two orthogonal full-length edge vectors about c.
Part plate_part(Point3 c, Point3 u, Point3 v) {
  const double lu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  const double lv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {lu * lv, [=](Rng& rng) {
            const double a = rng.uniform() - 0.5, b = rng.uniform() - 0.5;
            return Point3{c[0] + a * u[0] + b * v[0], c[1] + a * u[1] + b * v[1],
                          c[2] + a * u[2] + b * v[2]};
          }};
}

// Horizontal disk at height z.
Part disk_part(double x, double y, double z, double r) {
  return {kPi * r * r, [=](Rng& rng) {
            const double s = r * std::sqrt(rng.uniform());
            const double t = 2 * kPi * rng.uniform();
            return Point3{x + s * std::cos(t), y + s * std::sin(t), z};
          }};
}

// Vertical tube side between z0 and z1.
Part tube_part(double x, double y, double z0, double z1, double r) {
  return {2 * kPi * r * (z1 - z0), [=](Rng& rng) {
            const double t = 2 * kPi * rng.uniform();
            return Point3{x + r * std::cos(t), y + r * std::sin(t), z0 + (z1 - z0) * rng.uniform()};
          }};
}

// Cone side with base radius r at z0 and apex at z1.
Part cone_side_part(double z0, double z1, double r) {
  const double h = z1 - z0;
  const double slant = std::sqrt(h * h + r * r);
  return {kPi * r * slant, [=](Rng& rng) {
            const double f = std::sqrt(rng.uniform());  // distance from apex, area density ~ f
            const double t = 2 * kPi * rng.uniform();
            return Point3{f * r * std::cos(t), f * r * std::sin(t), z1 - f * h};
          }};
}

Part torus_part(double big_r, double small_r) {
  return {4 * kPi * kPi * big_r * small_r, [=](Rng& rng) {
            double phi;
            for (;;) {
              phi = 2 * kPi * rng.uniform();
              const double accept = (big_r + small_r * std::cos(phi)) / (big_r + small_r);
              if (rng.uniform() < accept) break;
            }
            const double t = 2 * kPi * rng.uniform();
            const double ring = big_r + small_r * std::cos(phi);
            return Point3{ring * std::cos(t), ring * std::sin(t), small_r * std::sin(phi)};
          }};
}

// Axis-aligned ellipsoid surface. Directions are drawn uniformly on the unit
// sphere and accepted with probability proportional to the local area
// stretch, which makes the accepted points uniform by area.
Part ellipsoid_part(double a, double b, double c) {
  const double p = 1.6075;  // Knud Thomsen's approximation, < 1.1% error
  const double area = 4 * kPi * std::pow((std::pow(a * b, p) + std::pow(a * c, p) + std::pow(b * c, p)) / 3, 1 / p);
  const double stretch_max = std::max({a * b, a * c, b * c});
  return {area, [=](Rng& rng) {
            for (;;) {
              auto d = unit_direction(rng);
              const double s = std::sqrt(b * c * d[0] * b * c * d[0] + a * c * d[1] * a * c * d[1] +
                                         a * b * d[2] * a * b * d[2]);
              if (rng.uniform() * stretch_max <= s) return Point3{a * d[0], b * d[1], c * d[2]};
            }
          }};
}

// Per-instance proportions. With variation 0 every kind has its canonical
// shape and no random numbers are consumed; with variation 1 each proportion
// is drawn uniformly from its full range.
std::vector<Part> parts_of(ShapeKind kind, Rng& rng, double variation) {
  auto vary = [&](double base, double lo, double hi) {
    if (variation == 0) return base;
    return base + variation * (lo + (hi - lo) * rng.uniform() - base);
  };
  switch (kind) {
    case ShapeKind::sphere: {
      const double a = vary(1, 0.75, 1.0), b = vary(1, 0.75, 1.0), c = vary(1, 0.75, 1.0);
      if (a == 1 && b == 1 && c == 1) return {sphere_part({0, 0, 0}, 1.0)};
      return {ellipsoid_part(a, b, c)};
    }
    case ShapeKind::cube: {
      const double len[3] = {vary(2, 1.5, 2.0), vary(2, 1.5, 2.0), vary(2, 1.5, 2.0)};
      std::vector<Part> faces;
      for (int axis = 0; axis < 3; ++axis) {
        for (double side : {-1.0, 1.0}) {
          Point3 c{0, 0, 0}, u{0, 0, 0}, v{0, 0, 0};
          c[axis] = side * len[axis] / 2;
          u[(axis + 1) % 3] = len[(axis + 1) % 3];
          v[(axis + 2) % 3] = len[(axis + 2) % 3];
          faces.push_back(plate_part(c, u, v));
        }
      }
      return faces;
    }
    case ShapeKind::cylinder: {
      const double r = vary(0.5, 0.4, 0.8), h = vary(1.0, 0.6, 1.1);
      return {tube_part(0, 0, -h, h, r), disk_part(0, 0, -h, r), disk_part(0, 0, h, r)};
    }
    case ShapeKind::cone: {
      const double r = vary(0.8, 0.6, 1.0), h = vary(0.8, 0.6, 1.0);
      return {cone_side_part(-h, h, r), disk_part(0, 0, -h, r)};
    }
    case ShapeKind::pot_plant: {
      const double bowl = vary(0.6, 0.5, 0.7), canopy = vary(0.55, 0.45, 0.65), lift = vary(0.95, 0.8, 1.1);
      return {bowl_part({0, 0, -0.4}, bowl), ball_part({0, 0, -0.4 + lift}, canopy)};
    }
    case ShapeKind::chair_like: {
      const double w = vary(1.0, 0.8, 1.2), back = vary(1.0, 0.7, 1.2), leg = vary(0.8, 0.6, 1.0);
      std::vector<Part> parts{plate_part({0, 0, 0}, {w, 0, 0}, {0, 1, 0}),
                              plate_part({0, -0.5, back / 2}, {w, 0, 0}, {0, 0, back})};
      for (double x : {-0.45 * w, 0.45 * w})
        for (double y : {-0.45, 0.45}) parts.push_back(tube_part(x, y, -leg, 0.0, 0.05));
      return parts;
    }
    case ShapeKind::torus:
      return {torus_part(vary(0.7, 0.6, 0.8), vary(0.25, 0.15, 0.35))};
    case ShapeKind::table_like: {
      const double w = vary(1.4, 1.2, 1.6), d = vary(0.9, 0.7, 1.1), leg = vary(1.0, 0.8, 1.2);
      std::vector<Part> parts{plate_part({0, 0, 0.4}, {w, 0, 0}, {0, d, 0})};
      for (double x : {-0.43 * w, 0.43 * w})
        for (double y : {-0.39 * d, 0.39 * d}) parts.push_back(tube_part(x, y, 0.4 - leg, 0.4, 0.05));
      return parts;
    }
  }
  throw std::invalid_argument("unknown shape kind");
}

// Part id reported per point: chairs and tables group their legs together.
int part_label(ShapeKind kind, std::size_t part) {
  switch (kind) {
    case ShapeKind::chair_like: return part < 2 ? static_cast<int>(part) : 2;
    case ShapeKind::table_like: return part == 0 ? 0 : 1;
    case ShapeKind::cube: return 0;
    default: return static_cast<int>(part);
  }
}

// Largest-remainder apportionment of n across areas; ties to lower index.
std::vector<std::size_t> allocate(const std::vector<Part>& parts, std::size_t n) {
  double total = 0;
  for (const auto& p : parts) total += p.area;
  std::vector<std::size_t> counts(parts.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double exact = static_cast<double>(n) * parts[i].area / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; used < n; ++j, ++used) ++counts[rem[j % rem.size()].second];
  return counts;
}

}  // namespace

PointCloud generate_shape(ShapeKind kind, std::size_t n, Rng& rng, double jitter, double variation) {
  if (n < 8) throw std::invalid_argument("generate_shape: need at least 8 points");
  if (!(jitter >= 0)) throw std::invalid_argument("generate_shape: jitter must be >= 0");
  if (!(variation >= 0 && variation <= 1)) throw std::invalid_argument("generate_shape: variation must be in [0, 1]");
  const auto parts = parts_of(kind, rng, variation);
  const auto counts = allocate(parts, n);
  PointCloud pc;
  pc.points.reserve(n);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (std::size_t i = 0; i < counts[p]; ++i) {
      Point3 x = parts[p].sample(rng);
      if (jitter > 0)
        for (auto& c : x) c += jitter * rng.normal();
      pc.points.push_back(x);
      pc.part_ids.push_back(part_label(kind, p));
    }
  }
  // interleave parts so index order carries no part structure
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  pc = subset(pc, order);
  normalize_unit_sphere(pc);
  return pc;
}

PointCloud generate_shape(std::string_view kind, std::size_t n, Rng& rng, double jitter, double variation) {
  auto k = parse_shape_kind(kind);
  if (!k) throw std::invalid_argument("unknown shape kind '" + std::string(kind) + "'");
  return generate_shape(*k, n, rng, jitter, variation);
}

void normalize_unit_sphere(PointCloud& pc) {
  if (pc.points.empty()) throw DataError("normalize_unit_sphere: empty cloud");
  Point3 c{0, 0, 0};
  for (const auto& p : pc.points)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (auto& v : c) v /= static_cast<double>(pc.size());
  double max_norm = 0;
  for (auto& p : pc.points) {
    for (int k = 0; k < 3; ++k) p[k] -= c[k];
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (!(max_norm > 0)) throw DataError("normalize_unit_sphere: all points coincide, scale undefined");
  for (auto& p : pc.points)
    for (auto& v : p) v /= max_norm;
}

PointCloud normalized(PointCloud pc) {
  normalize_unit_sphere(pc);
  return pc;
}

// ---- xyz ------------------------------------------------------------------

std::string format_xyz(const PointCloud& pc, std::span<const double> scores) {
  if (!scores.empty() && scores.size() != pc.size())
    throw std::invalid_argument("format_xyz: score count does not match point count");
  std::string out;
  out.reserve(pc.size() * 64);
  char buf[128];
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto& p = pc.points[i];
    int len = scores.empty()
                  ? std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p[0], p[1], p[2])
                  : std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g\n", p[0], p[1], p[2], scores[i]);
    out.append(buf, static_cast<std::size_t>(len));
  }
  return out;
}

XyzContents parse_xyz(std::string_view text, std::string_view source) {
  XyzContents out;
  std::vector<double> scores;
  std::size_t columns = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": " + why);
  };
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (pos < text.size()) fail("blank line");
      continue;
    }
    double vals[4];
    std::size_t count = 0;
    const char* p = line.data();
    const char* const e = line.data() + line.size();
    for (;;) {
      while (p < e && (*p == ' ' || *p == '\t')) ++p;
      if (p == e) break;
      if (count == 4) fail("more than 4 columns");
      auto [next, ec] = std::from_chars(p, e, vals[count]);
      if (ec != std::errc() || (next < e && *next != ' ' && *next != '\t')) fail("malformed number");
      if (!std::isfinite(vals[count])) fail("non-finite value");
      ++count;
      p = next;
    }
    if (count != 3 && count != 4) fail("expected 3 or 4 columns, got " + std::to_string(count));
    if (columns == 0) columns = count;
    if (count != columns) fail("column count changed from " + std::to_string(columns));
    out.cloud.points.push_back({vals[0], vals[1], vals[2]});
    if (count == 4) scores.push_back(vals[3]);
  }
  if (out.cloud.points.empty()) throw DataError(std::string(source) + ": no points");
  if (columns == 4) out.scores = std::move(scores);
  return out;
}

void save_xyz(const fs::path& path, const PointCloud& pc, std::span<const double> scores) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << format_xyz(pc, scores);
  if (!f) throw DataError("write failed: " + path.string());
}

namespace {
std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}
}  // namespace

XyzContents load_xyz(const fs::path& path) { return parse_xyz(read_file(path), path.string()); }

// ---- datasets -------------------------------------------------------------

LabeledDataset generate_dataset(const DatasetSpec& spec) {
  if (spec.kinds.empty()) throw std::invalid_argument("dataset needs at least one class");
  LabeledDataset ds;
  ds.spec = spec;
  for (auto k : spec.kinds) ds.class_names.emplace_back(to_string(k));
  const Rng root(spec.seed);
  auto fill = [&](std::vector<PointCloud>& out, std::uint64_t split, std::size_t per_class) {
    // interleave classes: index i holds class i % C
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < spec.kinds.size(); ++c) {
        Rng rng = root.fork((split << 56) ^ (static_cast<std::uint64_t>(c) << 40) ^ i);
        PointCloud pc = generate_shape(spec.kinds[c], spec.points, rng, spec.jitter, spec.variation);
        pc.label = c;
        out.push_back(std::move(pc));
      }
    }
  };
  fill(ds.train, 0, spec.train_per_class);
  fill(ds.test, 1, spec.test_per_class);
  return ds;
}

std::string dataset_manifest(const DatasetSpec& spec) {
  std::string kinds;
  for (std::size_t i = 0; i < spec.kinds.size(); ++i) {
    if (i) kinds += ",";
    kinds += to_string(spec.kinds[i]);
  }
  char jitter[64], variation[64];
  std::snprintf(jitter, sizeof jitter, "%.17g", spec.jitter);
  std::snprintf(variation, sizeof variation, "%.17g", spec.variation);
  std::string out;
  out += "format = infocons-dataset-1\n";
  out += "kinds = " + kinds + "\n";
  out += "classes = " + std::to_string(spec.kinds.size()) + "\n";
  out += "train_per_class = " + std::to_string(spec.train_per_class) + "\n";
  out += "test_per_class = " + std::to_string(spec.test_per_class) + "\n";
  out += "points = " + std::to_string(spec.points) + "\n";
  out += std::string("jitter = ") + jitter + "\n";
  out += std::string("variation = ") + variation + "\n";
  out += "seed = " + std::to_string(spec.seed) + "\n";
  return out;
}

void write_dataset(const LabeledDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  std::string index = "split,file,label\n";
  auto dump = [&](const std::vector<PointCloud>& split, const char* name) {
    char file[64];
    for (std::size_t i = 0; i < split.size(); ++i) {
      std::snprintf(file, sizeof file, "%s/%05zu.xyz", name, i);
      save_xyz(dir / file, split[i]);
      index += std::string(name) + "," + file + "," + std::to_string(*split[i].label) + "\n";
    }
  };
  dump(ds.train, "train");
  dump(ds.test, "test");
  std::ofstream(dir / "index.csv", std::ios::binary) << index;
  std::ofstream(dir / "dataset.txt", std::ios::binary) << dataset_manifest(ds.spec);
}

namespace {
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(source + ":" + std::to_string(n) + ": expected key = value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}
}  // namespace

LabeledDataset read_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "dataset.txt") || !fs::exists(dir / "index.csv"))
    throw DataError("not a dataset directory: " + dir.string());
  auto kv = parse_key_values(read_file(dir / "dataset.txt"), (dir / "dataset.txt").string());
  LabeledDataset ds;
  try {
    ds.spec.kinds.clear();
    std::istringstream kinds(kv.at("kinds"));
    std::string k;
    while (std::getline(kinds, k, ',')) {
      auto kind = parse_shape_kind(k);
      if (!kind) throw DataError("dataset.txt: unknown kind " + k);
      ds.spec.kinds.push_back(*kind);
      ds.class_names.push_back(k);
    }
    ds.spec.train_per_class = std::stoull(kv.at("train_per_class"));
    ds.spec.test_per_class = std::stoull(kv.at("test_per_class"));
    ds.spec.points = std::stoull(kv.at("points"));
    ds.spec.jitter = std::stod(kv.at("jitter"));
    if (kv.count("variation")) ds.spec.variation = std::stod(kv.at("variation"));
    ds.spec.seed = std::stoull(kv.at("seed"));
  } catch (const std::out_of_range&) {
    throw DataError("dataset.txt: missing key");
  } catch (const std::invalid_argument&) {
    throw DataError("dataset.txt: malformed value");
  }
  std::istringstream index(read_file(dir / "index.csv"));
  std::string line;
  std::getline(index, line);  // header
  std::size_t n = 1;
  while (std::getline(index, line)) {
    ++n;
    if (line.empty()) continue;
    auto c1 = line.find(','), c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) throw DataError("index.csv:" + std::to_string(n) + ": malformed");
    const std::string split = line.substr(0, c1);
    PointCloud pc = load_xyz(dir / line.substr(c1 + 1, c2 - c1 - 1)).cloud;
    pc.label = std::stoull(line.substr(c2 + 1));
    if (*pc.label >= ds.class_names.size()) throw DataError("index.csv:" + std::to_string(n) + ": label out of range");
    (split == "train" ? ds.train : ds.test).push_back(std::move(pc));
  }
  return ds;
}

}  // namespace infocons
