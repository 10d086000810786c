#include "infocons/scoremap.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace infocons {

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

std::vector<double> min_max_normalize(std::span<const double> v) {
  if (v.empty()) return {};
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.5);
  if (!(*hi > *lo)) return out;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / span;
  return out;
}

std::vector<double> iterative_drop_scores(std::size_t n, std::span<const std::size_t> drop_order,
                                          std::span<const double> last_raw) {
  if (last_raw.size() != n) throw std::invalid_argument("iterative_drop_scores: raw score length mismatch");
  std::vector<char> dropped(n, 0);
  for (auto i : drop_order) {
    if (i >= n || dropped[i]) throw std::invalid_argument("iterative_drop_scores: bad drop order");
    dropped[i] = 1;
  }
  std::vector<double> out(n, 0.0);
  const double m = static_cast<double>(drop_order.size());
  for (std::size_t r = 0; r < drop_order.size(); ++r)
    out[drop_order[r]] = 1.0 - 0.5 * static_cast<double>(r) / m;
  double lo = 0, hi = 0;
  bool first = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (dropped[i]) continue;
    if (first || last_raw[i] < lo) lo = last_raw[i];
    if (first || last_raw[i] > hi) hi = last_raw[i];
    first = false;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (dropped[i]) continue;
    out[i] = hi > lo ? 0.5 * (last_raw[i] - lo) / (hi - lo) : 0.25;
  }
  return out;
}

}  // namespace infocons
