#include "infocons/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

#include "infocons/log.hpp"

namespace infocons {

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<ScoreMap> compute_score_maps(std::span<const PointCloud> clouds, const Scorer& scorer,
                                         std::size_t jobs) {
  std::vector<ScoreMap> maps(clouds.size());
  parallel_for(clouds.size(), jobs, [&](std::size_t i) {
    maps[i] = scorer(clouds[i], i);
    if (maps[i].size() != clouds[i].size())
      throw std::logic_error("scorer returned " + std::to_string(maps[i].size()) + " scores for " +
                             std::to_string(clouds[i].size()) + " points");
  });
  return maps;
}

std::string_view to_string(DropMode m) { return m == DropMode::mcd ? "mcd" : "lcd"; }

std::optional<DropMode> parse_drop_mode(std::string_view name) {
  if (name == "mcd" || name == "MCD") return DropMode::mcd;
  if (name == "lcd" || name == "LCD") return DropMode::lcd;
  return std::nullopt;
}

std::vector<std::size_t> points_to_drop(std::span<const double> scores, DropMode mode, std::size_t budget) {
  if (budget >= scores.size())
    throw std::invalid_argument("drop budget " + std::to_string(budget) + " must be below the point count " +
                                std::to_string(scores.size()));
  const auto ranked = rank_by_score(scores);
  if (mode == DropMode::mcd) return {ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(budget)};
  return {ranked.end() - static_cast<std::ptrdiff_t>(budget), ranked.end()};
}

DropAttackReport drop_attack(const PointModel& model, std::span<const PointCloud> clouds,
                             std::span<const ScoreMap> maps, DropMode mode, std::span<const std::size_t> budgets,
                             std::size_t jobs) {
  if (maps.size() != clouds.size()) throw std::invalid_argument("drop_attack: one score map per cloud required");
  if (budgets.empty()) throw std::invalid_argument("drop_attack: no budgets");
  for (std::size_t i = 1; i < budgets.size(); ++i)
    if (budgets[i] <= budgets[i - 1]) throw std::invalid_argument("drop_attack: budgets must be strictly increasing");
  for (std::size_t c = 0; c < clouds.size(); ++c) {
    if (budgets.back() >= clouds[c].size())
      throw std::invalid_argument("drop budget " + std::to_string(budgets.back()) +
                                  " must be below the point count " + std::to_string(clouds[c].size()));
    if (!clouds[c].label) throw std::invalid_argument("drop_attack: cloud " + std::to_string(c) + " has no label");
  }
  std::vector<std::vector<char>> hit(clouds.size(), std::vector<char>(budgets.size(), 0));
  parallel_for(clouds.size(), jobs, [&](std::size_t c) {
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      const auto drop = points_to_drop(maps[c].scores, mode, budgets[b]);
      const PointCloud reduced = budgets[b] == 0 ? clouds[c] : remove_points(clouds[c], drop);
      hit[c][b] = model.predict(reduced) == *clouds[c].label;
    }
  });
  DropAttackReport r;
  r.scorer = maps.empty() ? "" : maps.front().method;
  r.mode = mode;
  r.budgets.assign(budgets.begin(), budgets.end());
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    std::size_t n = 0;
    for (const auto& h : hit) n += h[b];
    r.accuracy.push_back(clouds.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(clouds.size()));
  }
  return r;
}

DropAttackReport drop_attack(const PointModel& model, std::span<const PointCloud> clouds, const Scorer& scorer,
                             DropMode mode, std::span<const std::size_t> budgets, std::size_t jobs) {
  const auto maps = compute_score_maps(clouds, scorer, jobs);
  return drop_attack(model, clouds, maps, mode, budgets, jobs);
}

// ---- hierarchy ------------------------------------------------------------

KMeans1D kmeans_1d(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw std::invalid_argument("kmeans_1d: no values");
  if (k == 0) throw std::invalid_argument("kmeans_1d: k must be positive");
  std::vector<double> distinct(values.begin(), values.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < k) {
    log_warn("kmeans_1d: " + std::to_string(distinct.size()) + " distinct values, reducing K from " +
             std::to_string(k) + " to " + std::to_string(distinct.size()));
    k = distinct.size();
  }
  std::vector<double> c(k);  // ascending during the iterations
  const std::size_t m = distinct.size();
  for (std::size_t j = 0; j < k; ++j)
    c[j] = k == 1 ? distinct[m / 2] : distinct[(j * (m - 1) + (k - 1) / 2) / (k - 1)];

  std::vector<std::size_t> assign(values.size(), 0);
  KMeans1D out;
  for (out.iterations = 1; out.iterations <= 100; ++out.iterations) {
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (std::abs(values[i] - c[j]) < std::abs(values[i] - c[best])) best = j;
      assign[i] = best;
      sum[best] += values[i];
      ++count[best];
    }
    double shift = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) continue;
      const double nc = sum[j] / static_cast<double>(count[j]);
      shift = std::max(shift, std::abs(nc - c[j]));
      c[j] = nc;
    }
    if (shift < 1e-9) break;
  }
  out.iterations = std::min<std::size_t>(out.iterations, 100);
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return c[a] > c[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) {
    rank[perm[r]] = r;
    out.centroids.push_back(c[perm[r]]);
  }
  out.assignment.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.assignment[i] = rank[assign[i]];
  return out;
}

std::vector<std::vector<std::size_t>> subset_hierarchy(const ScoreMap& map, std::size_t k) {
  const KMeans1D km = kmeans_1d(map.scores, k);
  std::vector<std::vector<std::size_t>> groups(km.centroids.size());
  for (std::size_t i = 0; i < km.assignment.size(); ++i) groups[km.assignment[i]].push_back(i);
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  return groups;
}

double score_variance(std::span<const double> s) {
  if (s.empty()) return 0.0;
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  double v = 0;
  for (double x : s) v += (x - mean) * (x - mean);
  return v / static_cast<double>(s.size());
}

double score_variance(std::span<const ScoreMap> maps) {
  if (maps.empty()) return 0.0;
  double total = 0;
  for (const auto& m : maps) total += score_variance(m.scores);
  return total / static_cast<double>(maps.size());
}

// ---- efficiency -----------------------------------------------------------

EfficiencyReport efficiency_report(std::string scorer_name, const PointModel& model,
                                   std::span<const PointCloud> clouds, const Scorer& scorer,
                                   std::size_t explainer_params) {
  if (clouds.empty()) throw std::invalid_argument("efficiency_report: no clouds");
  EfficiencyReport r;
  r.scorer = std::move(scorer_name);
  r.params = explainer_params;
  r.clouds = clouds.size();
  std::vector<double> ms;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    model.reset_counters();
    const auto t0 = std::chrono::steady_clock::now();
    scorer(clouds[i], i);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    const auto f = model.forwards(), b = model.backwards();
    if (i == 0) {
      r.forwards = f;
      r.backwards = b;
    } else if (f != r.forwards || b != r.backwards) {
      throw std::logic_error(r.scorer + ": cloud " + std::to_string(i) + " used " + std::to_string(f) + "F+" +
                             std::to_string(b) + "B, cloud 0 used " + std::to_string(r.forwards) + "F+" +
                             std::to_string(r.backwards) + "B");
    }
  }
  model.reset_counters();
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  r.ms_per_cloud = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  return r;
}

// ---- serialization --------------------------------------------------------

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace

std::string format_drop_reports(std::span<const DropAttackReport> reports) {
  std::string out;
  if (reports.empty()) return out;
  out += "dataset = " + reports.front().dataset_id + "\n";
  out += "seed = " + std::to_string(reports.front().seed) + "\n";
  out += "reports = " + std::to_string(reports.size()) + "\n\n";
  std::set<std::size_t> all_budgets;
  for (const auto& r : reports) all_budgets.insert(r.budgets.begin(), r.budgets.end());
  std::size_t w = 8;
  for (const auto& r : reports) w = std::max(w, r.scorer.size());
  out += std::string(w - 6, ' ') + "scorer  mode";
  for (auto b : all_budgets) out += pad("b=" + std::to_string(b), 9);
  out += "\n";
  for (const auto& r : reports) {
    out += pad(r.scorer, w) + "  " + std::string(to_string(r.mode)) + " ";
    for (auto b : all_budgets) {
      auto it = std::find(r.budgets.begin(), r.budgets.end(), b);
      out += it == r.budgets.end() ? pad("-", 9)
                                   : pad(fmt("%.4f", r.accuracy[static_cast<std::size_t>(it - r.budgets.begin())]), 9);
    }
    out += "\n";
  }
  return out;
}

std::string drop_reports_csv(std::span<const DropAttackReport> reports) {
  std::string out = "scorer,mode,budget,accuracy,dataset,seed\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.budgets.size(); ++i)
      out += r.scorer + "," + std::string(to_string(r.mode)) + "," + std::to_string(r.budgets[i]) + "," +
             fmt("%.6f", r.accuracy[i]) + "," + r.dataset_id + "," + std::to_string(r.seed) + "\n";
  return out;
}

std::string efficiency_csv(std::span<const EfficiencyReport> reports, bool include_timing) {
  std::string out = include_timing ? "scorer,forwards,backwards,params,ms_per_cloud\n"
                                   : "scorer,forwards,backwards,params\n";
  for (const auto& r : reports) {
    out += r.scorer + "," + std::to_string(r.forwards) + "," + std::to_string(r.backwards) + "," +
           std::to_string(r.params);
    if (include_timing) out += "," + fmt("%.3f", r.ms_per_cloud);
    out += "\n";
  }
  return out;
}

std::string format_efficiency(std::span<const EfficiencyReport> reports, bool include_timing) {
  std::size_t w = 6;
  for (const auto& r : reports) w = std::max(w, r.scorer.size());
  std::string out = pad("scorer", w) + "  forwards  backwards     params";
  if (include_timing) out += "  ms_per_cloud";
  out += "\n";
  for (const auto& r : reports) {
    out += pad(r.scorer, w) + pad(std::to_string(r.forwards), 10) + pad(std::to_string(r.backwards), 11) +
           pad(std::to_string(r.params), 11);
    if (include_timing) out += pad(fmt("%.3f", r.ms_per_cloud), 14);
    out += "\n";
  }
  return out;
}

}  // namespace infocons
