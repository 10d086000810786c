#include "cli_util.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "infocons/errors.hpp"

namespace fs = std::filesystem;

namespace infocons::cli {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void Manifest::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void Manifest::set(const std::string& key, double value) { set(key, fmt(value)); }
void Manifest::set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }
void Manifest::set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

std::string Manifest::str() const {
  std::string s = "# infocons " + command_ + " run manifest\n";
  s += "# re-run: infocons " + command_ + " --config <this file> --out <dir>\n";
  for (const auto& [k, v] : entries_) {
    // Quote anything that is not a plain number or boolean so commas and
    // paths survive the config reader.
    bool plain = !v.empty() && (v == "true" || v == "false");
    if (!plain && !v.empty()) {
      char* end = nullptr;
      std::strtod(v.c_str(), &end);
      plain = end && *end == '\0';
    }
    s += k + " = " + (plain ? v : "\"" + v + "\"") + "\n";
  }
  return s;
}

void Manifest::write(const fs::path& dir) const { write_text(dir / "manifest.ini", str()); }

void prepare_output_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw UsageError("--out is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError("output path exists and is not a directory: " + dir.string());
    if (!fs::is_empty(dir) && !force)
      throw UsageError("output directory " + dir.string() + " already exists; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::uint64_t resolve_seed(std::uint64_t flag_seed) {
  const char* env = std::getenv("INFOCONS_SEED");
  if (!env || !*env) return flag_seed;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (!end || *end != '\0') throw UsageError(std::string("INFOCONS_SEED is not an unsigned integer: ") + env);
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (!end || *end != '\0') throw UsageError(flag + ": not a number: " + item);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& flag) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    char* end = nullptr;
    if (item.front() == '-') throw UsageError(flag + ": negative value: " + item);
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    if (!end || *end != '\0') throw UsageError(flag + ": not a non-negative integer: " + item);
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

}  // namespace infocons::cli
