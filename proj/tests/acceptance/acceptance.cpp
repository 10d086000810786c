// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fd_catalog.hpp"
#include "infocons/baselines.hpp"
#include "infocons/evalharness.hpp"
#include "infocons/explainer.hpp"
#include "infocons/pcmodel.hpp"
#include "infocons/shapes.hpp"

namespace fs = std::filesystem;
using namespace infocons;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1: reverse-mode gradients against central differences ----

void gradient_check() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  std::string worst_op;
  std::size_t ops = 0;
  for (const auto& c : testing::fd_catalog()) {
    if (c.composite) continue;
    ++ops;
    for (int inst = 0; inst < 50; ++inst) {
      const auto r = testing::finite_difference_check(c, rng, 1e-3, 1e-8);
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_op = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  report(1, "gradient check", worst < 1e-4 && secs < 60,
         format("%zu primitives x 50 instances, max rel error %.3g (%s), %.1f s", ops, worst, worst_op.c_str(),
                secs));
}

// ---- 2: reference classifier ----

struct Trained {
  LabeledDataset data;
  std::optional<PointModel> model;
};

void train_reference(Trained& t) {
  const auto t0 = Clock::now();
  t.data = generate_dataset(DatasetSpec{});
  const TrainResult r = train_classifier(t.data, ArchKind::flat, TrainConfig{});
  t.model.emplace(r.params);
  const double acc = accuracy(*t.model, t.data.test);
  const double secs = seconds_since(t0);
  report(2, "classifier accuracy", acc >= 0.9 && secs <= 600,
         format("test accuracy %.4f on %zu clouds, %.0f s", acc, t.data.test.size(), secs));
}

// ---- 3, 4: drop attacks ----

Scorer random_scorer(std::uint64_t seed) {
  return [seed](const PointCloud& pc, std::size_t i) {
    Rng rng = Rng(seed).fork(i);
    return random_scores(pc, rng);
  };
}

std::vector<Explainer> drop_attacks(const Trained& t) {
  const auto t0 = Clock::now();
  const std::vector<std::size_t> budgets{4, 8, 16, 32, 64};
  std::vector<Explainer> explainers;
  std::vector<double> mcd(budgets.size(), 0), lcd(budgets.size(), 0);
  for (std::uint64_t seed : {1, 2, 3}) {
    ExplainerConfig cfg;
    cfg.seed = seed;
    const ExplainerResult r = train_explainer(*t.model, t.data, cfg);
    explainers.emplace_back(r.params);
    const Explainer& ex = explainers.back();
    const auto maps = compute_score_maps(
        t.data.test, [&](const PointCloud& pc, std::size_t) { return score_map(ex, *t.model, pc); });
    const auto m = drop_attack(*t.model, t.data.test, maps, DropMode::mcd, budgets);
    const auto l = drop_attack(*t.model, t.data.test, maps, DropMode::lcd, budgets);
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      mcd[b] += m.accuracy[b] / 3;
      lcd[b] += l.accuracy[b] / 3;
    }
    std::printf("  seed %llu: MCD@64 %.4f LCD@64 %.4f\n", static_cast<unsigned long long>(seed), m.accuracy.back(),
                l.accuracy.back());
  }
  const auto rnd_maps = compute_score_maps(t.data.test, random_scorer(7));
  const auto rm = drop_attack(*t.model, t.data.test, rnd_maps, DropMode::mcd, budgets);
  const auto rl = drop_attack(*t.model, t.data.test, rnd_maps, DropMode::lcd, budgets);
  double worst_random_gap = 0;
  for (std::size_t b = 0; b < budgets.size(); ++b)
    worst_random_gap = std::max(worst_random_gap, std::abs(rl.accuracy[b] - rm.accuracy[b]));
  const double gap = lcd.back() - mcd.back();
  const double secs = seconds_since(t0);
  report(3, "MCD/LCD separation", gap >= 0.15 && worst_random_gap < 0.03 && secs <= 900,
         format("LCD-MCD at b=64 %.4f (MCD %.4f, LCD %.4f, 3 seeds); random max |gap| %.4f; %.0f s", gap,
                mcd.back(), lcd.back(), worst_random_gap, secs));
  report(4, "beats random", mcd.back() <= rm.accuracy.back() - 0.10,
         format("InfoCons MCD@64 %.4f vs random MCD@64 %.4f", mcd.back(), rm.accuracy.back()));
  return explainers;
}

// ---- 5: identity mask and beta = 0 training ----

void identity_and_zero_beta(const Trained& t) {
  const PointModel& model = *t.model;
  const ModelParams& mp = model.params();
  double worst = 0, worst_info = 0;
  Rng rng(5);
  for (std::size_t i = 0; i < 20; ++i) {
    const PointCloud& pc = t.data.test[i * 29];
    ad::Graph g;
    const ModelVars mv = bind_model(g, mp, false);
    const Batch batch = make_batch(mp, pc);
    const Tensor z = model.encode(pc, mp.tap_layer, true).z;
    const std::size_t label[] = {*pc.label};
    const LossTerms l = infocons_loss(identity_mask(g, z.shape()), g.constant(z), frozen_head(mp, mv, batch, mp.tap_layer),
                                      label, 0.01, NoiseSpec{mp.prior_mean, mp.prior_std, &rng});
    worst = std::max(worst, std::abs(l.total.item() + std::log(model.classify(pc)[*pc.label])));
    worst_info = std::max(worst_info, std::abs(l.info.item()));
  }
  ExplainerConfig cfg;
  cfg.beta = 0;
  cfg.epochs = 10;
  const ExplainerResult r = train_explainer(model, t.data, cfg);
  std::string ces;
  std::size_t increases = 0;
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    ces += format("%s%.4f", e ? " " : "", r.history[e].ce);
    if (e > 0 && r.history[e].ce > r.history[e - 1].ce) ++increases;
  }
  report(5, "identity mask and beta=0 descent", worst < 1e-9 && worst_info == 0 && increases == 0,
         format("identity |total-CE| max %.3g, |info| max %.3g; beta=0 ce per epoch [%s], %zu increases", worst,
                worst_info, ces.c_str(), increases));
}

// ---- 6: information terms against Monte Carlo ----

void information_terms() {
  Rng rng(6);
  double worst_kl = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t rows = 8, cols = 4;
    Tensor m(Shape{rows, cols}), z(Shape{rows, cols});
    std::vector<double> mu(cols), sd(cols);
    for (auto& v : m.storage()) v = 0.1 + 0.8 * rng.uniform();
    for (auto& v : z.storage()) v = rng.normal();
    for (std::size_t c = 0; c < cols; ++c) {
      mu[c] = 0.5 * rng.normal();
      sd[c] = 0.5 + rng.uniform();
    }
    ad::Graph g;
    const double closed = infocons_info(g.constant(m), g.constant(z), mu, sd).item();
    double mc = 0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double mp = m(r, c) * z(r, c) + (1 - m(r, c)) * mu[c], sp = (1 - m(r, c)) * sd[c];
        double acc = 0;
        for (int s = 0; s < 100000; ++s) {
          const double x = mp + sp * rng.normal();
          const double a = (x - mp) / sp, b = (x - mu[c]) / sd[c];
          acc += std::log(sd[c] / sp) - 0.5 * a * a + 0.5 * b * b;
        }
        mc += acc / 100000;
      }
    mc /= static_cast<double>(rows * cols);
    worst_kl = std::max(worst_kl, std::abs(mc - closed) / closed);
  }

  // Binary Concrete with location 1 (mask 0.5): inverse-transform samples
  // scored with the closed-form log-density.
  const double tau = 0.7;
  Rng ref_rng(61);
  double ref = 0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double u = ref_rng.uniform_open();
    const double y = 1.0 / (1.0 + std::exp(-(std::log(u) - std::log1p(-u)) / tau));
    ref += std::log(tau) - (tau + 1) * (std::log(y) + std::log1p(-y)) -
           2 * std::log(std::pow(y, -tau) + std::pow(1 - y, -tau));
  }
  ref /= n;
  ad::Graph g;
  Rng est_rng(62);
  const double est = selective_info(g.constant(Tensor(Shape{256, 64}, 0.0)), tau, 32, est_rng).item();
  const double sel_err = std::abs(est - ref) / std::abs(ref);
  report(6, "information terms", worst_kl < 0.01 && sel_err < 0.02,
         format("Gaussian KL max rel error %.4f over 20 instances; selective estimate %.5f vs reference %.5f "
                "(rel %.4f)",
                worst_kl, est, ref, sel_err));
}

// ---- 7: interpolation ----

void interpolation() {
  Rng rng(7);
  bool exact = true, bounded = true;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t na = 3 + rng.index(30), nt = 1 + rng.index(50);
    std::vector<Point3> anchors(na), targets(nt);
    std::vector<double> s(na);
    for (std::size_t i = 0; i < na; ++i) {
      anchors[i] = {rng.normal(), rng.normal(), rng.normal()};
      s[i] = rng.normal();
    }
    for (auto& p : targets) p = {rng.normal(), rng.normal(), rng.normal()};
    if (interpolate_scores(anchors, s, anchors) != s) exact = false;
    const double lo = *std::min_element(s.begin(), s.end()), hi = *std::max_element(s.begin(), s.end());
    for (double v : interpolate_scores(anchors, s, targets))
      if (v < lo || v > hi) bounded = false;
  }
  report(7, "interpolation", exact && bounded,
         format("anchors reproduced exactly: %s; within anchor range: %s (1000 instances)", exact ? "yes" : "no",
                bounded ? "yes" : "no"));
}

// ---- 8: critical points ----

void critical_points(const Trained& t) {
  const PointModel& model = *t.model;
  const std::size_t layers = model.params().num_layers(), d = model.params().global_dim();
  std::size_t identical = 0, largest = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const PointCloud& pc = t.data.test[i * 6];
    const auto cp = cp_maxpool(model, pc);
    largest = std::max(largest, cp.size());
    if (model.encode(pc, layers).global == model.encode(subset(pc, cp), layers).global) ++identical;
  }
  report(8, "critical-point soundness", identical == 100 && largest <= d,
         format("%zu/100 global features bit-identical; largest |CP| %zu (D = %zu)", identical, largest, d));
}

// ---- 9: LIME surrogate ----

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[idx[i]] = static_cast<double>(i);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1 - 6 * d2 / (n * (n * n - 1));
}

void lime_recovery() {
  Rng rng(9);
  std::vector<double> w(32);
  for (auto& v : w) v = rng.normal();
  Lime3DConfig cfg;
  cfg.n_queries = 200;
  cfg.lambda = 1e-6;
  const LimeFit fit = lime3d_fit(
      32,
      [&](const std::vector<char>& keep) {
        double y = 0.1;
        for (std::size_t i = 0; i < 32; ++i) y += w[i] * keep[i];
        return y;
      },
      cfg);
  const double rho = spearman(fit.coefficients, w);
  report(9, "LIME recovery", rho >= 0.95, format("Spearman %.4f between fitted and true weights", rho));
}

// ---- 10: efficiency accounting ----

void efficiency(const Trained& t, const Explainer& ex) {
  const PointModel& model = *t.model;
  const std::span<const PointCloud> clouds(t.data.test.data(), 20);
  struct Expect {
    std::string name;
    Scorer scorer;
    std::uint64_t f, b;
  };
  const std::vector<Expect> cases{
      {"infocons", [&](const PointCloud& pc, std::size_t) { return score_map(ex, model, pc); }, 1, 0},
      {"infocons-dyn", [&](const PointCloud& pc, std::size_t) { return dynamic_score_map(ex, model, pc, 20, 10).map; },
       20, 0},
      {"pcsam", [&](const PointCloud& pc, std::size_t) { return pcsam(model, pc, *pc.label); }, 20, 20},
      {"lime3d", [&](const PointCloud& pc, std::size_t) { return lime3d(model, pc); }, 100, 0},
  };
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    std::string got;
    try {
      const EfficiencyReport r = efficiency_report(c.name, model, clouds, c.scorer);
      got = format("%lluF+%lluB", static_cast<unsigned long long>(r.forwards), static_cast<unsigned long long>(r.backwards));
      ok = ok && r.forwards == c.f && r.backwards == c.b && r.clouds == 20;
    } catch (const std::exception& e) {
      got = e.what();
      ok = false;
    }
    detail += (detail.empty() ? "" : ", ") + c.name + " " + got;
  }
  report(10, "efficiency counts", ok, detail + " per cloud over 20 clouds");
}

// ---- 11: CLI reproducibility from manifests ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Wall-clock timing is the only field allowed to differ between runs.
std::string strip_timing(const fs::path& p, const std::string& text) {
  const std::string name = p.filename().string();
  if (name != "efficiency.csv" && name != "efficiency.txt") return text;
  std::istringstream in(text);
  std::string line, out;
  std::optional<std::size_t> col;
  const char sep = name == "efficiency.csv" ? ',' : ' ';
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::string f;
    std::istringstream ls(line);
    if (sep == ',') {
      while (std::getline(ls, f, ',')) fields.push_back(f);
    } else {
      while (ls >> f) fields.push_back(f);
    }
    if (!col)
      for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i] == "ms_per_cloud") col = i;
    if (col && *col < fields.size()) fields.erase(fields.begin() + static_cast<std::ptrdiff_t>(*col));
    for (const auto& x : fields) out += x + '|';
    out += '\n';
  }
  return out;
}

// Lists every regular file under dir with its relative path.
std::map<std::string, fs::path> tree(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = e.path();
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(INFOCONS_CLI_PATH) + " -q " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

void cli_reproducibility() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "infocons_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string r = root.string() + "/";
  struct Step {
    std::string name, args;
  };
  const std::vector<Step> steps{
      {"gen-data", "--classes 3 --per-class 16 --test-per-class 4 --points 96"},
      {"train", "--data " + r + "gen-data_a --epochs 1"},
      {"train-explainer", "--data " + r + "gen-data_a --model " + r + "train_a/model.bin --epochs 2 --train-limit 12"},
      {"explain", "--data " + r + "gen-data_a --model " + r + "train_a/model.bin --explainer " + r +
                      "train-explainer_a/explainer.bin --split test --index 0 --count 2 --method infocons-dyn --iters 3"},
      {"eval", "--data " + r + "gen-data_a --model " + r + "train_a/model.bin --explainer " + r +
                   "train-explainer_a/explainer.bin --methods infocons,infocons-dyn,cp,cp++,pcsam,lime3d,random "
                   "--budgets 4,8 --limit 6 --efficiency-clouds 3 --queries 20 --iters 3"},
  };
  bool ok = true;
  std::string detail;
  std::size_t files = 0;
  for (const auto& s : steps) {
    const std::string a = r + s.name + "_a", b = r + s.name + "_b";
    if (run_cli(s.name + " " + s.args + " --out " + a) != 0 ||
        run_cli(s.name + " --config " + a + "/manifest.ini --out " + b) != 0) {
      ok = false;
      detail += " " + s.name + ": command failed;";
      continue;
    }
    const auto ta = tree(a), tb = tree(b);
    bool same = ta.size() == tb.size() && !ta.empty();
    for (const auto& [rel, path] : ta) {
      const auto it = tb.find(rel);
      if (it == tb.end() || strip_timing(path, slurp(path)) != strip_timing(it->second, slurp(it->second))) {
        same = false;
        detail += " " + s.name + ": " + rel + " differs;";
      }
    }
    files += ta.size();
    ok = ok && same;
  }
  fs::remove_all(root);
  report(11, "CLI reproducibility", ok,
         format("%zu files across 5 commands compared byte for byte (timing column excluded), %.0f s;", files,
                seconds_since(t0)) +
             detail);
}

}  // namespace

int main() {
  std::printf("infocons acceptance\n");
  gradient_check();
  information_terms();
  interpolation();
  lime_recovery();
  cli_reproducibility();
  Trained t;
  train_reference(t);
  critical_points(t);
  identity_and_zero_beta(t);
  const auto explainers = drop_attacks(t);
  efficiency(t, explainers.front());
  std::printf("%d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
