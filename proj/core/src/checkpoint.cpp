#include "infocons/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "infocons/errors.hpp"

namespace infocons {
namespace fs = std::filesystem;

fs::path sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".meta";
  return p;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : b_(bytes), src_(source) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& why) const {
    throw DataError(src_ + ": " + why + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated checkpoint");
  }
  const std::string& b_;
  std::string src_;
  std::size_t pos_ = 0;
};

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void dump(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << bytes;
  if (!f) throw DataError("write failed: " + path.string());
}

}  // namespace

std::string encode_tensors(const NamedTensors& tensors) {
  std::string out(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

NamedTensors decode_tensors(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) r.fail("bad magic");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));
  const auto count = r.uint(4);
  NamedTensors out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = r.uint(4);
    std::string name = r.bytes(len);
    const auto rank = r.uint(4);
    if (rank > 2) r.fail("tensor rank " + std::to_string(rank) + " unsupported");
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.uint(8));
    Tensor t(shape);
    for (auto& v : t.storage()) v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4))));
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) r.fail("trailing bytes");
  return out;
}

void write_tensors(const fs::path& path, const NamedTensors& tensors) { dump(path, encode_tensors(tensors)); }

NamedTensors read_tensors(const fs::path& path) { return decode_tensors(slurp(path), path.string()); }

std::string format_metadata(const Metadata& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + " = " + v + "\n";
  return out;
}

Metadata parse_metadata(const std::string& text, const std::string& source) {
  Metadata meta;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError(source + ":" + std::to_string(n) + ": expected 'key = value'");
    meta[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return meta;
}

void write_metadata(const fs::path& path, const Metadata& meta) { dump(path, format_metadata(meta)); }

Metadata read_metadata(const fs::path& path) { return parse_metadata(slurp(path), path.string()); }

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw DataError("malformed number '" + item + "'");
    }
  }
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw DataError("malformed integer '" + item + "'");
    }
  }
  return out;
}

const std::string& require(const Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint metadata missing '" + key + "'");
  return it->second;
}

void save_model(const fs::path& path, const ModelParams& p) {
  NamedTensors t;
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    t.emplace_back("encoder." + std::to_string(l + 1) + ".weight", p.encoder[l].weight);
    t.emplace_back("encoder." + std::to_string(l + 1) + ".bias", p.encoder[l].bias);
  }
  for (std::size_t l = 0; l < p.head.size(); ++l) {
    t.emplace_back("head." + std::to_string(l + 1) + ".weight", p.head[l].weight);
    t.emplace_back("head." + std::to_string(l + 1) + ".bias", p.head[l].bias);
  }
  write_tensors(path, t);

  std::vector<std::size_t> enc_dims{p.layer_dim(0)};
  for (std::size_t l = 1; l <= p.num_layers(); ++l) enc_dims.push_back(p.layer_dim(l));
  std::vector<std::size_t> head_dims;
  for (const auto& h : p.head) head_dims.push_back(h.weight.cols());
  Metadata m;
  m["kind"] = "model";
  m["format_version"] = std::to_string(kCheckpointVersion);
  m["arch"] = std::string(to_string(p.arch));
  m["num_classes"] = std::to_string(p.num_classes);
  m["encoder_dims"] = format_list(enc_dims);
  m["head_dims"] = format_list(head_dims);
  m["tap_layer"] = std::to_string(p.tap_layer);
  m["group_after"] = std::to_string(p.group_after);
  m["anchors"] = std::to_string(p.anchors);
  m["neighbors"] = std::to_string(p.neighbors);
  m["fps_seed"] = std::to_string(p.fps_seed);
  m["seed"] = std::to_string(p.seed);
  m["prior_mean"] = format_list(p.prior_mean);
  m["prior_std"] = format_list(p.prior_std);
  m["weights_checksum"] = std::to_string(weights_checksum(p));
  write_metadata(sidecar_path(path), m);
}

ModelParams load_model(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("model checkpoint not found: " + path.string());
  const Metadata m = read_metadata(sidecar_path(path));
  if (require(m, "kind") != "model") throw DataError(path.string() + " is not a model checkpoint");
  ModelParams p;
  auto arch = parse_arch_kind(require(m, "arch"));
  if (!arch) throw DataError("unknown arch in " + path.string());
  p.arch = *arch;
  try {
    p.num_classes = std::stoull(require(m, "num_classes"));
    p.tap_layer = std::stoull(require(m, "tap_layer"));
    p.group_after = std::stoull(require(m, "group_after"));
    p.anchors = std::stoull(require(m, "anchors"));
    p.neighbors = std::stoull(require(m, "neighbors"));
    p.fps_seed = std::stoull(require(m, "fps_seed"));
    p.seed = std::stoull(require(m, "seed"));
  } catch (const std::logic_error&) {
    throw DataError("malformed integer in " + sidecar_path(path).string());
  }
  p.prior_mean = parse_double_list(require(m, "prior_mean"));
  p.prior_std = parse_double_list(require(m, "prior_std"));
  auto enc_dims = parse_size_list(require(m, "encoder_dims"));
  auto head_dims = parse_size_list(require(m, "head_dims"));

  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : read_tensors(path)) by_name.emplace(name, std::move(t));
  auto take = [&](const std::string& name, Shape shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(path.string() + ": missing tensor " + name);
    if (it->second.shape() != shape)
      throw DataError(path.string() + ": tensor " + name + " has shape " + shape_string(it->second.shape()) +
                      ", expected " + shape_string(shape));
    return std::move(it->second);
  };
  for (std::size_t l = 1; l < enc_dims.size(); ++l) {
    const std::string base = "encoder." + std::to_string(l);
    p.encoder.push_back({take(base + ".weight", {enc_dims[l - 1], enc_dims[l]}), take(base + ".bias", {enc_dims[l]})});
  }
  std::size_t in = enc_dims.empty() ? 0 : enc_dims.back();
  for (std::size_t l = 0; l < head_dims.size(); ++l) {
    const std::string base = "head." + std::to_string(l + 1);
    p.head.push_back({take(base + ".weight", {in, head_dims[l]}), take(base + ".bias", {head_dims[l]})});
    in = head_dims[l];
  }
  if (p.head.empty() || p.head.back().weight.cols() != p.num_classes)
    throw DataError(path.string() + ": head output does not match num_classes");
  if (p.prior_mean.size() != p.prior_std.size())
    throw DataError(path.string() + ": prior mean/std length mismatch");
  auto it = m.find("weights_checksum");
  if (it != m.end() && it->second != std::to_string(weights_checksum(p)))
    throw DataError(path.string() + ": weights do not match the sidecar checksum");
  return p;
}

}  // namespace infocons
