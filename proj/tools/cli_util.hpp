#pragma once

// Plumbing shared by the infocons subcommands: output directories, run
// manifests, list parsing and the mapping from exceptions to exit codes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace infocons::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

// Bad flag values or combinations that CLI11 cannot catch on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered key = value pairs echoing a fully resolved command configuration.
// Keys are the long flag names, so the file can be fed back with --config.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::size_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::size_t>(value)); }
  void set(const std::string& key, bool value);

  std::string str() const;
  void write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Creates `dir`; an existing non-empty directory is rejected unless force.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

void write_text(const std::filesystem::path& path, const std::string& text);

// INFOCONS_SEED wins over --seed when set.
std::uint64_t resolve_seed(std::uint64_t flag_seed);

std::vector<std::string> split_list(const std::string& s);
std::vector<double> parse_doubles(const std::string& s, const std::string& flag);
std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& flag);

// %.17g, so manifest values round-trip exactly.
std::string fmt(double v);
// Shortest %g form, for file names and labels.
std::string short_fmt(double v);

}  // namespace infocons::cli
