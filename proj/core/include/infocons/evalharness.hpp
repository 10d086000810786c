#pragma once

// Point-drop attacks, critical-subset hierarchy, score statistics and
// efficiency accounting.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "infocons/pcmodel.hpp"
#include "infocons/scoremap.hpp"

namespace infocons {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
// to per-index slots; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// Scorer for the i-th cloud of an evaluation set. Stochastic scorers should
// derive their randomness from the index so results do not depend on the
// worker count.
using Scorer = std::function<ScoreMap(const PointCloud& pc, std::size_t index)>;

std::vector<ScoreMap> compute_score_maps(std::span<const PointCloud> clouds, const Scorer& scorer,
                                         std::size_t jobs = 1);

enum class DropMode { mcd, lcd };

std::string_view to_string(DropMode m);
std::optional<DropMode> parse_drop_mode(std::string_view name);

struct DropAttackReport {
  std::string scorer;
  DropMode mode = DropMode::mcd;
  std::vector<std::size_t> budgets;
  std::vector<double> accuracy;  // per budget
  std::string dataset_id;
  std::uint64_t seed = 0;
};

// Drop order for a score map: descending score, ties to the lower index.
// MCD removes the first b entries, LCD the last b.
std::vector<std::size_t> points_to_drop(std::span<const double> scores, DropMode mode, std::size_t budget);

// Accuracy after removing the selected points from every cloud, for each
// budget. Budgets must be strictly increasing and below every cloud's size.
DropAttackReport drop_attack(const PointModel& model, std::span<const PointCloud> clouds,
                             std::span<const ScoreMap> maps, DropMode mode,
                             std::span<const std::size_t> budgets, std::size_t jobs = 1);

DropAttackReport drop_attack(const PointModel& model, std::span<const PointCloud> clouds, const Scorer& scorer,
                             DropMode mode, std::span<const std::size_t> budgets, std::size_t jobs = 1);

// ---- hierarchy and statistics ----

struct KMeans1D {
  std::vector<double> centroids;         // descending
  std::vector<std::size_t> assignment;   // group per value, 0 = highest centroid
  std::size_t iterations = 0;
};

// Deterministic 1-D K-Means: centroids start at evenly spaced quantiles of the
// distinct values, Lloyd iterations stop when no centroid moves by more than
// 1e-9 or after 100 rounds. K above the number of distinct values is reduced
// with a warning.
KMeans1D kmeans_1d(std::span<const double> values, std::size_t k);

// Point-index groups ordered by mean score, highest first; a partition of
// all indices.
std::vector<std::vector<std::size_t>> subset_hierarchy(const ScoreMap& map, std::size_t k = 4);

double score_variance(std::span<const double> scores);
double score_variance(std::span<const ScoreMap> maps);  // mean per-cloud variance

// ---- efficiency ----

struct EfficiencyReport {
  std::string scorer;
  std::uint64_t forwards = 0;   // model forwards per cloud
  std::uint64_t backwards = 0;  // model backwards per cloud
  std::size_t params = 0;       // learned explainer parameters, 0 if none
  double ms_per_cloud = 0;      // median wall time
  std::size_t clouds = 0;
};

// Runs the scorer sequentially over the clouds, resetting the model counters
// before each one. Throws std::logic_error if per-cloud counts differ.
EfficiencyReport efficiency_report(std::string scorer_name, const PointModel& model,
                                   std::span<const PointCloud> clouds, const Scorer& scorer,
                                   std::size_t explainer_params = 0);

// ---- serialization ----

std::string format_drop_reports(std::span<const DropAttackReport> reports);
std::string drop_reports_csv(std::span<const DropAttackReport> reports);
std::string efficiency_csv(std::span<const EfficiencyReport> reports, bool include_timing = true);
std::string format_efficiency(std::span<const EfficiencyReport> reports, bool include_timing = true);

}  // namespace infocons
