#pragma once

// Versioned flat binary checkpoints with a key = value sidecar.
//
// Binary layout (all integers little-endian):
//   8 bytes   magic "INFOCKPT"
//   u32       format version (1)
//   u32       entry count
//   per entry:
//     u32       name length, then the name bytes
//     u32       rank, then rank x u64 dimensions
//     f32 x n   payload, n = product of dimensions
//
// The sidecar lives next to the binary as "<path>.meta".

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "infocons/pcmodel.hpp"
#include "infocons/tensor.hpp"

namespace infocons {

inline constexpr char kCheckpointMagic[9] = "INFOCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
using Metadata = std::map<std::string, std::string>;

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

std::string encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(const std::string& bytes, const std::string& source = "<memory>");

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

std::string format_metadata(const Metadata& meta);
Metadata parse_metadata(const std::string& text, const std::string& source = "<memory>");
void write_metadata(const std::filesystem::path& path, const Metadata& meta);
Metadata read_metadata(const std::filesystem::path& path);

// Helpers for metadata values.
std::string format_double(double v);  // %.17g, round-trips exactly
std::string format_list(const std::vector<double>& v);
std::string format_list(const std::vector<std::size_t>& v);
std::vector<double> parse_double_list(const std::string& s);
std::vector<std::size_t> parse_size_list(const std::string& s);
const std::string& require(const Metadata& meta, const std::string& key);

void save_model(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace infocons
