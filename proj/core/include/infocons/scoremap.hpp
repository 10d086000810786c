#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace infocons {

// Per-point criticality, index-aligned with the explained cloud.
struct ScoreMap {
  std::vector<double> scores;
  std::string method;
  std::size_t iterations = 1;

  std::size_t size() const { return scores.size(); }
};

// Indices sorted by descending score; equal scores keep ascending index.
std::vector<std::size_t> rank_by_score(std::span<const double> scores);

// Score assignment for iterative drop-and-re-explain procedures. Dropped
// points get scores linearly spaced in (0.5, 1] by drop order (first dropped
// scores 1); every other point takes its last raw score min-max rescaled into
// [0, 0.5] (a constant set maps to 0.25).
std::vector<double> iterative_drop_scores(std::size_t n, std::span<const std::size_t> drop_order,
                                          std::span<const double> last_raw);

// Min-max normalization to [0, 1]; a constant input maps to all 0.5.
std::vector<double> min_max_normalize(std::span<const double> v);

}  // namespace infocons
