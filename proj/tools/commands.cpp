#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cli_util.hpp"
#include "infocons/baselines.hpp"
#include "infocons/checkpoint.hpp"
#include "infocons/errors.hpp"
#include "infocons/evalharness.hpp"
#include "infocons/explainer.hpp"
#include "infocons/log.hpp"
#include "infocons/pcmodel.hpp"
#include "infocons/shapes.hpp"
#include "infocons/svg.hpp"

namespace fs = std::filesystem;

namespace infocons::cli {

namespace {

const std::vector<std::string> kMethods{"infocons", "infocons-dyn", "cp", "cp++", "pcsam", "lime3d", "random"};

bool needs_explainer(const std::string& method) { return method == "infocons" || method == "infocons-dyn"; }

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Short, stable identifier of a dataset: FNV-1a over its generation manifest.
std::string dataset_id(const LabeledDataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dataset_manifest(ds.spec)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return hex64(h);
}

PointModel open_model(const std::string& path) {
  if (path.empty()) throw UsageError("--model is required");
  if (!fs::exists(path)) throw DataError("model checkpoint not found: " + path);
  return PointModel(load_model(path));
}

Explainer open_explainer(const std::string& path, const PointModel& model) {
  if (!fs::exists(path)) throw DataError("explainer checkpoint not found: " + path);
  Explainer ex(load_explainer(path));
  if (ex.params().model_checksum != weights_checksum(model.params()))
    log_warn("explainer " + path + " was trained against a different model checkpoint");
  return ex;
}

// Everything a scorer may need; explainer is only read by the infocons methods.
struct ScorerContext {
  const PointModel* model = nullptr;
  const Explainer* explainer = nullptr;
  std::size_t iters = 20;
  std::size_t drop_per_iter = 10;
  double alpha = 1.0;
  std::size_t queries = 100;
  double drop_prob = 0.2;
  double lambda = 1.0;
  std::uint64_t seed = 1;
};

// Stochastic scorers seed from (seed, cloud index) so maps do not depend on
// how clouds are spread over workers.
Scorer make_scorer(const std::string& method, const ScorerContext& ctx) {
  const PointModel& model = *ctx.model;
  if (method == "infocons") {
    return [&model, ex = ctx.explainer](const PointCloud& pc, std::size_t) { return score_map(*ex, model, pc); };
  }
  if (method == "infocons-dyn") {
    return [&model, ex = ctx.explainer, ctx](const PointCloud& pc, std::size_t) {
      return dynamic_score_map(*ex, model, pc, ctx.iters, ctx.drop_per_iter).map;
    };
  }
  if (method == "cp") return [&model](const PointCloud& pc, std::size_t) { return cp_scores(model, pc); };
  if (method == "cp++") return [&model](const PointCloud& pc, std::size_t) { return cppp_meanpool(model, pc); };
  if (method == "pcsam") {
    const PcsamConfig cfg{ctx.alpha, ctx.iters, ctx.drop_per_iter};
    return [&model, cfg](const PointCloud& pc, std::size_t) {
      const std::size_t label = pc.label ? *pc.label : model.predict(pc);
      return pcsam(model, pc, label, cfg);
    };
  }
  if (method == "lime3d") {
    return [&model, ctx](const PointCloud& pc, std::size_t index) {
      Lime3DConfig cfg{ctx.queries, ctx.drop_prob, ctx.lambda, Rng(ctx.seed).fork(index).seed()};
      return lime3d(model, pc, cfg);
    };
  }
  if (method == "random") {
    return [seed = ctx.seed](const PointCloud& pc, std::size_t index) {
      Rng rng = Rng(seed).fork(index);
      return random_scores(pc, rng);
    };
  }
  throw UsageError("unknown method " + method);
}

void check_methods(const std::vector<std::string>& methods) {
  for (const auto& m : methods)
    if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end()) {
      std::string valid;
      for (const auto& v : kMethods) valid += (valid.empty() ? "" : ", ") + v;
      throw UsageError("unknown method '" + m + "'; valid methods: " + valid);
    }
}

// Options every command shares.
struct Common {
  std::string out;
  bool force = false;
  std::uint64_t seed = 1;
};

void add_common(CLI::App* sub, Common& c) {
  // Expanded by expand_config() before parsing; registered for --help.
  sub->add_option("--config", "Read options from a key = value file (flags win)");
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_flag("--force", c.force, "Write into an existing non-empty output directory");
  sub->add_option("--seed", c.seed, "Random seed (INFOCONS_SEED overrides)")->capture_default_str();
}

using Runner = std::function<void()>;

// ---- gen-data ---------------------------------------------------------------

struct GenDataOptions {
  Common common;
  std::size_t classes = 6;
  std::size_t per_class = 500;
  std::size_t test_per_class = 100;
  std::size_t points = 256;
  double jitter = 0.01;
  double variation = 1.0;
};

Runner add_gen_data(CLI::App& app) {
  auto o = std::make_shared<GenDataOptions>();
  auto* sub = app.add_subcommand("gen-data", "Generate a labeled synthetic point-cloud dataset");
  add_common(sub, o->common);
  const auto kinds = all_shape_kinds().size();
  sub->add_option("--classes", o->classes, "Number of shape classes")
      ->check(CLI::Range(std::size_t{1}, kinds))
      ->capture_default_str();
  sub->add_option("--per-class", o->per_class, "Training clouds per class")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--test-per-class", o->test_per_class, "Test clouds per class")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--points", o->points, "Points per cloud")
      ->check(CLI::Range(std::size_t{8}, std::size_t{1} << 20))
      ->capture_default_str();
  sub->add_option("--jitter", o->jitter, "Gaussian jitter before normalization")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--variation", o->variation, "Per-instance shape variation in [0, 1]")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  return [o, sub] {
    if (!sub->parsed()) return;
    const std::uint64_t seed = resolve_seed(o->common.seed);
    prepare_output_dir(o->common.out, o->common.force);
    DatasetSpec spec;
    spec.kinds.assign(all_shape_kinds().begin(), all_shape_kinds().begin() + o->classes);
    spec.train_per_class = o->per_class;
    spec.test_per_class = o->test_per_class;
    spec.points = o->points;
    spec.jitter = o->jitter;
    spec.variation = o->variation;
    spec.seed = seed;
    const LabeledDataset ds = generate_dataset(spec);
    write_dataset(ds, o->common.out);

    Manifest m("gen-data");
    m.set("classes", o->classes);
    m.set("per-class", o->per_class);
    m.set("test-per-class", o->test_per_class);
    m.set("points", o->points);
    m.set("jitter", o->jitter);
    m.set("variation", o->variation);
    m.set("seed", seed);
    m.set("dataset-id", dataset_id(ds));
    m.write(o->common.out);
    log_info("wrote " + std::to_string(ds.train.size()) + " train and " + std::to_string(ds.test.size()) +
             " test clouds to " + o->common.out);
  };
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  Common common;
  std::string data;
  std::string arch = "flat";
  std::size_t epochs = TrainConfig{}.epochs;
  std::size_t batch_size = TrainConfig{}.batch_size;
  double lr = TrainConfig{}.learning_rate;
  std::string optimizer = "adam";
};

Runner add_train(CLI::App& app) {
  auto o = std::make_shared<TrainOptions>();
  auto* sub = app.add_subcommand("train", "Train a point-cloud classifier");
  add_common(sub, o->common);
  sub->add_option("--data", o->data, "Dataset directory")->required();
  sub->add_option("--arch", o->arch, "Architecture")
      ->check(CLI::IsMember({"flat", "hier", "pointnet-lite", "hier-lite"}))
      ->capture_default_str();
  sub->add_option("--epochs", o->epochs)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--batch-size", o->batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--lr", o->lr, "Learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--optimizer", o->optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();

  return [o, sub] {
    if (!sub->parsed()) return;
    const std::uint64_t seed = resolve_seed(o->common.seed);
    const LabeledDataset ds = read_dataset(o->data);
    prepare_output_dir(o->common.out, o->common.force);
    TrainConfig cfg;
    cfg.epochs = o->epochs;
    cfg.batch_size = o->batch_size;
    cfg.learning_rate = o->lr;
    cfg.optimizer = *parse_optimizer_kind(o->optimizer);
    cfg.seed = seed;
    const ArchKind arch = *parse_arch_kind(o->arch);

    std::string csv = "epoch,train_loss,train_accuracy,test_accuracy\n";
    Curve train_acc{"train accuracy", {}, {}}, test_acc{"test accuracy", {}, {}};
    const TrainResult result = train_classifier(ds, arch, cfg, [&](const EpochMetrics& e) {
      char line[160];
      std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss, e.train_accuracy,
                    e.test_accuracy);
      csv += line;
      train_acc.x.push_back(static_cast<double>(e.epoch));
      train_acc.y.push_back(e.train_accuracy);
      test_acc.x.push_back(static_cast<double>(e.epoch));
      test_acc.y.push_back(e.test_accuracy);
      std::snprintf(line, sizeof line, "epoch %zu  loss %.4f  train %.3f  test %.3f", e.epoch, e.train_loss,
                    e.train_accuracy, e.test_accuracy);
      log_info(line);
    });
    save_model(fs::path(o->common.out) / "model.bin", result.params);
    write_text(fs::path(o->common.out) / "history.csv", csv);
    const Curve curves[] = {train_acc, test_acc};
    write_text(fs::path(o->common.out) / "training.svg",
               line_plot_svg("classifier training", "epoch", "accuracy", curves));

    Manifest m("train");
    m.set("data", o->data);
    m.set("arch", std::string(to_string(arch)));
    m.set("epochs", o->epochs);
    m.set("batch-size", o->batch_size);
    m.set("lr", o->lr);
    m.set("optimizer", o->optimizer);
    m.set("seed", seed);
    m.set("dataset-id", dataset_id(ds));
    m.set("model-checksum", hex64(weights_checksum(result.params)));
    m.write(o->common.out);
  };
}

// ---- train-explainer -------------------------------------------------------

struct TrainExplainerOptions {
  Common common;
  std::string data;
  std::string model;
  std::string objective = "infocons";
  std::string beta = short_fmt(ExplainerConfig{}.beta);
  std::size_t dr = ExplainerConfig{}.reduced_dim;
  double tau = ExplainerConfig{}.tau;
  std::size_t k = ExplainerConfig{}.samples;
  std::size_t tap_layer = 0;
  std::size_t epochs = ExplainerConfig{}.epochs;
  std::size_t batch_size = ExplainerConfig{}.batch_size;
  double lr = ExplainerConfig{}.learning_rate;
  std::size_t train_limit = ExplainerConfig{}.train_limit;
  double init_bias = ExplainerConfig{}.init_bias;
  double sigma_floor = ExplainerConfig{}.sigma_floor;
};

Runner add_train_explainer(CLI::App& app) {
  auto o = std::make_shared<TrainExplainerOptions>();
  auto* sub = app.add_subcommand("train-explainer", "Train an attention bottleneck against a frozen classifier");
  add_common(sub, o->common);
  sub->add_option("--data", o->data, "Dataset directory")->required();
  sub->add_option("--model", o->model, "Classifier checkpoint (required)")->required();
  sub->add_option("--objective", o->objective)
      ->check(CLI::IsMember({"infocons", "selective-cp", "selective_cp"}))
      ->capture_default_str();
  sub->add_option("--beta", o->beta, "Information weight; a comma list trains one explainer per value")
      ->capture_default_str();
  sub->add_option("--dr", o->dr, "Reduced attention dimension")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--tau", o->tau, "Concrete temperature (selective-cp)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--k", o->k, "Monte Carlo samples (selective-cp)")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--tap-layer", o->tap_layer, "Encoder layer to explain; 0 uses the model's tap")
      ->capture_default_str();
  sub->add_option("--epochs", o->epochs)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--batch-size", o->batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--lr", o->lr)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--train-limit", o->train_limit, "Class-balanced training subset size; 0 uses every cloud")
      ->capture_default_str();
  sub->add_option("--init-bias", o->init_bias, "Initial mask logit")->capture_default_str();
  sub->add_option("--sigma-floor", o->sigma_floor)->check(CLI::PositiveNumber)->capture_default_str();

  return [o, sub] {
    if (!sub->parsed()) return;
    const std::uint64_t seed = resolve_seed(o->common.seed);
    const std::vector<double> betas = parse_doubles(o->beta, "--beta");
    for (double b : betas)
      if (!(b >= 0)) throw UsageError("--beta values must be non-negative");
    const PointModel model = open_model(o->model);
    const LabeledDataset ds = read_dataset(o->data);
    prepare_output_dir(o->common.out, o->common.force);

    ExplainerConfig cfg;
    cfg.objective = *parse_objective(o->objective);
    cfg.reduced_dim = o->dr;
    cfg.tau = o->tau;
    cfg.samples = o->k;
    cfg.tap_layer = o->tap_layer;
    cfg.epochs = o->epochs;
    cfg.batch_size = o->batch_size;
    cfg.learning_rate = o->lr;
    cfg.train_limit = o->train_limit;
    cfg.init_bias = o->init_bias;
    cfg.sigma_floor = o->sigma_floor;
    cfg.seed = seed;

    std::string csv = "beta,epoch,total,ce,info\n";
    std::vector<Curve> ce_curves;
    std::string failure;
    for (double beta : betas) {
      cfg.beta = beta;
      const fs::path dir = betas.size() == 1 ? fs::path(o->common.out)
                                              : fs::path(o->common.out) / ("beta-" + short_fmt(beta));
      fs::create_directories(dir);
      Curve curve{"beta " + short_fmt(beta), {}, {}};
      const ExplainerResult r = train_explainer(model, ds, cfg, [&](const ExplainerEpoch& e) {
        char line[200];
        std::snprintf(line, sizeof line, "%s,%zu,%.9g,%.9g,%.9g\n", fmt(beta).c_str(), e.epoch, e.total, e.ce,
                      e.info);
        csv += line;
        curve.x.push_back(static_cast<double>(e.epoch));
        curve.y.push_back(e.ce);
        std::snprintf(line, sizeof line, "beta %g  epoch %zu  total %.4f  ce %.4f  info %.4f", beta, e.epoch,
                      e.total, e.ce, e.info);
        log_info(line);
      });
      save_explainer(dir / "explainer.bin", r.params);
      ce_curves.push_back(std::move(curve));
      if (r.diverged && failure.empty()) failure = "beta " + short_fmt(beta) + ": " + r.diagnostic;
    }
    write_text(fs::path(o->common.out) / "losses.csv", csv);
    write_text(fs::path(o->common.out) / "losses.svg",
               line_plot_svg("explainer training", "epoch", "cross-entropy", ce_curves));

    Manifest m("train-explainer");
    m.set("data", o->data);
    m.set("model", o->model);
    m.set("objective", std::string(to_string(cfg.objective)));
    m.set("beta", o->beta);
    m.set("dr", o->dr);
    m.set("tau", o->tau);
    m.set("k", o->k);
    m.set("tap-layer", o->tap_layer);
    m.set("epochs", o->epochs);
    m.set("batch-size", o->batch_size);
    m.set("lr", o->lr);
    m.set("train-limit", o->train_limit);
    m.set("init-bias", o->init_bias);
    m.set("sigma-floor", o->sigma_floor);
    m.set("seed", seed);
    m.set("dataset-id", dataset_id(ds));
    m.write(o->common.out);
    if (!failure.empty()) throw NumericError(failure + " (last good parameters saved)");
  };
}

// ---- explain ---------------------------------------------------------------

struct ExplainOptions {
  Common common;
  std::string data;
  std::string input;
  std::string split = "test";
  std::size_t index = 0;
  std::size_t count = 1;
  std::string model;
  std::string explainer;
  std::string method = "infocons";
  std::size_t iters = 20;
  std::size_t drop_per_iter = 10;
  std::size_t top_b = 32;
  double alpha = PcsamConfig{}.alpha;
  std::size_t queries = Lime3DConfig{}.n_queries;
  double drop_prob = Lime3DConfig{}.drop_prob;
  double lambda = Lime3DConfig{}.lambda;
};

void add_scorer_options(CLI::App* sub, std::size_t& iters, std::size_t& drop, double& alpha, std::size_t& queries,
                        double& drop_prob, double& lambda) {
  sub->add_option("--iters", iters, "Iterations for infocons-dyn and pcsam")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--drop-per-iter", drop, "Points dropped per iteration")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--alpha", alpha, "PCSAM radius exponent offset")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--queries", queries, "LIME3D surrogate queries")->capture_default_str();
  sub->add_option("--drop-prob", drop_prob, "LIME3D per-point drop probability")->capture_default_str();
  sub->add_option("--lambda", lambda, "LIME3D ridge strength")->capture_default_str();
}

Runner add_explain(CLI::App& app) {
  auto o = std::make_shared<ExplainOptions>();
  auto* sub = app.add_subcommand("explain", "Write score maps and SVG projections for individual clouds");
  add_common(sub, o->common);
  auto* data = sub->add_option("--data", o->data, "Dataset directory");
  auto* input = sub->add_option("--input", o->input, "Single .xyz cloud instead of a dataset");
  data->excludes(input);
  sub->add_option("--split", o->split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  sub->add_option("--index", o->index, "First cloud of the split")->capture_default_str();
  sub->add_option("--count", o->count, "Number of clouds")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--model", o->model, "Classifier checkpoint")->required();
  sub->add_option("--explainer", o->explainer, "Explainer checkpoint (infocons methods)");
  sub->add_option("--method", o->method, "Attribution method")->check(CLI::IsMember(kMethods))->capture_default_str();
  sub->add_option("--top-b", o->top_b, "Critical points circled in the SVG")->capture_default_str();
  add_scorer_options(sub, o->iters, o->drop_per_iter, o->alpha, o->queries, o->drop_prob, o->lambda);

  return [o, sub] {
    if (!sub->parsed()) return;
    const std::uint64_t seed = resolve_seed(o->common.seed);
    if (o->data.empty() == o->input.empty()) throw UsageError("give exactly one of --data or --input");
    if (needs_explainer(o->method) && o->explainer.empty())
      throw UsageError("--method " + o->method + " needs --explainer");
    const PointModel model = open_model(o->model);
    std::optional<Explainer> ex;
    if (needs_explainer(o->method)) ex.emplace(open_explainer(o->explainer, model));

    std::vector<PointCloud> clouds;
    std::vector<std::string> stems;
    if (!o->input.empty()) {
      clouds.push_back(load_xyz(o->input).cloud);
      stems.push_back(fs::path(o->input).stem().string());
    } else {
      const LabeledDataset ds = read_dataset(o->data);
      const auto& split = o->split == "train" ? ds.train : ds.test;
      if (o->index + o->count > split.size())
        throw UsageError("--index/--count select clouds past the end of the " + o->split + " split (" +
                         std::to_string(split.size()) + " clouds)");
      for (std::size_t i = o->index; i < o->index + o->count; ++i) {
        clouds.push_back(split[i]);
        char stem[64];
        std::snprintf(stem, sizeof stem, "%s_%05zu", o->split.c_str(), i);
        stems.emplace_back(stem);
      }
    }
    prepare_output_dir(o->common.out, o->common.force);

    ScorerContext ctx{&model, ex ? &*ex : nullptr, o->iters, o->drop_per_iter, o->alpha,
                      o->queries, o->drop_prob, o->lambda, seed};
    const Scorer scorer = make_scorer(o->method, ctx);
    const fs::path out(o->common.out);
    for (std::size_t c = 0; c < clouds.size(); ++c) {
      const PointCloud& pc = clouds[c];
      const std::size_t index = o->input.empty() ? o->index + c : 0;
      const std::string title = stems[c] + " - " + o->method;
      if (o->method == "cp") {
        const auto cp = cp_maxpool(model, pc);
        std::string list;
        for (auto i : cp) list += std::to_string(i) + "\n";
        write_text(out / (stems[c] + "_cp.txt"), list);
        std::vector<double> s(pc.size(), 0.0);
        for (auto i : cp) s[i] = 1.0;
        write_text(out / (stems[c] + ".svg"), score_map_svg(pc, s, cp.size(), title));
        continue;
      }
      ScoreMap map;
      if (o->method == "infocons-dyn") {
        const DynamicScoreMap dyn = dynamic_score_map(*ex, model, pc, o->iters, o->drop_per_iter);
        std::string csv = "iteration,index\n";
        for (std::size_t it = 0; it < dyn.dropped.size(); ++it)
          for (auto i : dyn.dropped[it]) csv += std::to_string(it + 1) + "," + std::to_string(i) + "\n";
        write_text(out / (stems[c] + "_dropped.csv"), csv);
        map = dyn.map;
      } else {
        map = scorer(pc, index);
      }
      save_xyz(out / (stems[c] + ".xyz"), pc, map.scores);
      write_text(out / (stems[c] + ".svg"), score_map_svg(pc, map.scores, o->top_b, title));
    }

    Manifest m("explain");
    if (!o->data.empty()) {
      m.set("data", o->data);
      m.set("split", o->split);
      m.set("index", o->index);
      m.set("count", o->count);
    } else {
      m.set("input", o->input);
    }
    m.set("model", o->model);
    if (!o->explainer.empty()) m.set("explainer", o->explainer);
    m.set("method", o->method);
    m.set("iters", o->iters);
    m.set("drop-per-iter", o->drop_per_iter);
    m.set("top-b", o->top_b);
    m.set("alpha", o->alpha);
    m.set("queries", o->queries);
    m.set("drop-prob", o->drop_prob);
    m.set("lambda", o->lambda);
    m.set("seed", seed);
    m.write(o->common.out);
  };
}

// ---- eval ------------------------------------------------------------------

struct EvalOptions {
  Common common;
  std::string data;
  std::string model;
  std::string explainers;
  std::string methods = "infocons,cp,cp++,pcsam,random";
  std::string modes = "mcd,lcd";
  std::string budgets = "4,8,16,32,64";
  std::size_t limit = 0;
  std::size_t k = 4;
  std::size_t jobs = 1;
  std::size_t efficiency_clouds = 20;
  std::size_t iters = 20;
  std::size_t drop_per_iter = 10;
  double alpha = PcsamConfig{}.alpha;
  std::size_t queries = Lime3DConfig{}.n_queries;
  double drop_prob = Lime3DConfig{}.drop_prob;
  double lambda = Lime3DConfig{}.lambda;
};

struct NamedScorer {
  std::string name;
  std::string method;
  Scorer scorer;
  std::size_t params = 0;
  std::optional<double> beta;
};

Runner add_eval(CLI::App& app) {
  auto o = std::make_shared<EvalOptions>();
  auto* sub = app.add_subcommand("eval", "Point-drop attacks, subset hierarchy, score variance and efficiency");
  add_common(sub, o->common);
  sub->add_option("--data", o->data, "Dataset directory")->required();
  sub->add_option("--model", o->model, "Classifier checkpoint")->required();
  sub->add_option("--explainer", o->explainers, "Explainer checkpoint(s), comma separated");
  sub->add_option("--methods", o->methods, "Comma list of methods")->capture_default_str();
  sub->add_option("--modes", o->modes, "Comma list of drop modes (mcd, lcd)")->capture_default_str();
  sub->add_option("--budgets", o->budgets, "Strictly increasing drop budgets")->capture_default_str();
  sub->add_option("--limit", o->limit, "Evaluate the first N test clouds; 0 uses all")->capture_default_str();
  sub->add_option("--k", o->k, "Groups in the subset hierarchy")->check(CLI::Range(2, 64))->capture_default_str();
  sub->add_option("--jobs", o->jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--efficiency-clouds", o->efficiency_clouds, "Clouds timed per method")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  add_scorer_options(sub, o->iters, o->drop_per_iter, o->alpha, o->queries, o->drop_prob, o->lambda);

  return [o, sub] {
    if (!sub->parsed()) return;
    const std::uint64_t seed = resolve_seed(o->common.seed);
    const auto methods = split_list(o->methods);
    if (methods.empty()) throw UsageError("--methods: empty list");
    check_methods(methods);
    std::vector<DropMode> modes;
    for (const auto& s : split_list(o->modes)) {
      auto m = parse_drop_mode(s);
      if (!m) throw UsageError("--modes: unknown mode '" + s + "' (valid: mcd, lcd)");
      modes.push_back(*m);
    }
    if (modes.empty()) throw UsageError("--modes: empty list");
    const auto budgets = parse_sizes(o->budgets, "--budgets");
    for (std::size_t i = 1; i < budgets.size(); ++i)
      if (budgets[i] <= budgets[i - 1]) throw UsageError("--budgets must be strictly increasing");
    const auto explainer_paths = split_list(o->explainers);
    const bool any_infocons = std::any_of(methods.begin(), methods.end(), needs_explainer);
    if (any_infocons && explainer_paths.empty()) throw UsageError("infocons methods need --explainer");

    const PointModel model = open_model(o->model);
    std::vector<std::unique_ptr<Explainer>> explainers;
    for (const auto& p : explainer_paths) explainers.push_back(std::make_unique<Explainer>(open_explainer(p, model)));
    const LabeledDataset ds = read_dataset(o->data);
    std::vector<PointCloud> clouds = ds.test;
    if (o->limit > 0 && o->limit < clouds.size()) clouds.resize(o->limit);
    if (clouds.empty()) throw DataError("the test split is empty");
    for (const auto& pc : clouds)
      if (budgets.back() >= pc.size())
        throw UsageError("drop budget " + std::to_string(budgets.back()) + " must be below the point count " +
                         std::to_string(pc.size()));
    prepare_output_dir(o->common.out, o->common.force);
    const std::string id = dataset_id(ds);

    std::vector<NamedScorer> scorers;
    std::set<std::string> names;
    for (const auto& method : methods) {
      if (!needs_explainer(method)) {
        ScorerContext ctx{&model, nullptr, o->iters, o->drop_per_iter, o->alpha,
                          o->queries, o->drop_prob, o->lambda, seed};
        scorers.push_back({method, method, make_scorer(method, ctx), 0, std::nullopt});
        continue;
      }
      for (std::size_t e = 0; e < explainers.size(); ++e) {
        const Explainer& ex = *explainers[e];
        const double beta = ex.params().config.beta;
        std::string name = method;
        if (explainers.size() > 1) {
          name += "[beta=" + short_fmt(beta) + "]";
          if (names.count(name)) name += "#" + std::to_string(e + 1);
        }
        ScorerContext ctx{&model, &ex, o->iters, o->drop_per_iter, o->alpha,
                          o->queries, o->drop_prob, o->lambda, seed};
        scorers.push_back({name, method, make_scorer(method, ctx), ex.params().parameter_count(), beta});
      }
      for (const auto& s : scorers) names.insert(s.name);
    }

    const fs::path out(o->common.out);
    std::vector<DropAttackReport> reports;
    std::vector<Curve> curves;
    std::string hierarchy = "scorer,k,group,mean_size,mean_score\n";
    std::string variance = "scorer,beta,variance\n";
    Curve sweep{"score variance", {}, {}};
    for (const auto& s : scorers) {
      log_info("scoring " + std::to_string(clouds.size()) + " clouds with " + s.name);
      const std::vector<ScoreMap> maps = compute_score_maps(clouds, s.scorer, o->jobs);
      for (DropMode mode : modes) {
        DropAttackReport r = drop_attack(model, clouds, maps, mode, budgets, o->jobs);
        r.scorer = s.name;
        r.dataset_id = id;
        r.seed = seed;
        Curve c{s.name + " " + std::string(to_string(mode)), {}, r.accuracy};
        for (auto b : budgets) c.x.push_back(static_cast<double>(b));
        curves.push_back(std::move(c));
        reports.push_back(std::move(r));
      }

      // Hierarchy: K is capped per cloud at the number of distinct scores.
      std::vector<double> size_sum(o->k, 0.0), score_sum(o->k, 0.0);
      std::vector<std::size_t> seen(o->k, 0);
      std::size_t k_used = o->k;
      for (const auto& map : maps) {
        const std::set<double> distinct(map.scores.begin(), map.scores.end());
        const std::size_t k = std::min(o->k, distinct.size());
        k_used = std::min(k_used, k);
        const auto groups = subset_hierarchy(map, k);
        for (std::size_t g = 0; g < groups.size(); ++g) {
          double mean = 0;
          for (auto i : groups[g]) mean += map.scores[i];
          mean /= static_cast<double>(groups[g].size());
          size_sum[g] += static_cast<double>(groups[g].size());
          score_sum[g] += mean;
          ++seen[g];
        }
      }
      for (std::size_t g = 0; g < o->k; ++g) {
        if (!seen[g]) continue;
        char line[256];
        std::snprintf(line, sizeof line, "%s,%zu,%zu,%.6f,%.6f\n", s.name.c_str(), k_used, g + 1,
                      size_sum[g] / static_cast<double>(seen[g]), score_sum[g] / static_cast<double>(seen[g]));
        hierarchy += line;
      }
      const double var = score_variance(std::span<const ScoreMap>(maps));
      variance += s.name + "," + (s.beta ? fmt(*s.beta) : std::string()) + "," + fmt(var) + "\n";
      if (s.method == "infocons" && s.beta && explainers.size() > 1) {
        sweep.x.push_back(*s.beta);
        sweep.y.push_back(var);
      }
    }
    write_text(out / "drop_attack.csv", drop_reports_csv(reports));
    write_text(out / "drop_attack.txt", format_drop_reports(reports));
    write_text(out / "accuracy.svg", line_plot_svg("accuracy after point dropping", "points dropped", "accuracy", curves));
    write_text(out / "hierarchy.csv", hierarchy);
    write_text(out / "variance.csv", variance);
    if (sweep.x.size() > 1) {
      std::vector<std::size_t> order(sweep.x.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return sweep.x[a] < sweep.x[b]; });
      Curve sorted{sweep.label, {}, {}};
      for (auto i : order) {
        sorted.x.push_back(sweep.x[i]);
        sorted.y.push_back(sweep.y[i]);
      }
      const Curve cs[] = {sorted};
      write_text(out / "variance.svg", line_plot_svg("score variance vs beta", "beta", "variance", cs));
    }

    std::vector<EfficiencyReport> eff;
    const std::size_t n_eff = std::min(o->efficiency_clouds, clouds.size());
    const std::span<const PointCloud> eff_clouds(clouds.data(), n_eff);
    for (const auto& s : scorers) eff.push_back(efficiency_report(s.name, model, eff_clouds, s.scorer, s.params));
    write_text(out / "efficiency.csv", efficiency_csv(eff));
    write_text(out / "efficiency.txt", format_efficiency(eff));

    Manifest m("eval");
    m.set("data", o->data);
    m.set("model", o->model);
    if (!o->explainers.empty()) m.set("explainer", o->explainers);
    m.set("methods", o->methods);
    m.set("modes", o->modes);
    m.set("budgets", o->budgets);
    m.set("limit", o->limit);
    m.set("k", o->k);
    m.set("jobs", o->jobs);
    m.set("efficiency-clouds", o->efficiency_clouds);
    m.set("iters", o->iters);
    m.set("drop-per-iter", o->drop_per_iter);
    m.set("alpha", o->alpha);
    m.set("queries", o->queries);
    m.set("drop-prob", o->drop_prob);
    m.set("lambda", o->lambda);
    m.set("seed", seed);
    m.set("dataset-id", id);
    m.write(out);
  };
}

// Splices the key = value pairs of a subcommand's --config file in front of
// its command-line flags. Keys are long option names; unknown keys (such as
// the informational ones in run manifests) are ignored, and since later
// flags win, explicit flags override the file.
std::vector<std::string> expand_config(const CLI::App& app, const std::vector<std::string>& args) {
  std::size_t sub_pos = args.size();
  const CLI::App* sub = nullptr;
  for (std::size_t i = 1; i < args.size() && !sub; ++i)
    for (const CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; }))
      if (s->get_name() == args[i]) {
        sub = s;
        sub_pos = i;
      }
  if (!sub) return args;
  std::string config;
  std::vector<std::string> rest;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config.empty()) return args;
  std::ifstream in(config);
  if (!in) throw DataError("cannot read config file " + config);
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1);
  std::string line;
  auto trim = [](std::string v) {
    v.erase(0, v.find_first_not_of(" \t"));
    v.erase(v.find_last_not_of(" \t\r") + 1);
    return v;
  };
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(config + ": expected key = value, got: " + line);
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt || key == "config") continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1") out.push_back("--" + key);
      continue;
    }
    out.push_back("--" + key);
    out.push_back(value);
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app("InfoCons point-cloud attribution toolkit", "infocons");
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", "infocons 0.1.0");
  bool quiet = false, verbose = false;
  app.add_flag("-q,--quiet", quiet, "Only print errors");
  app.add_flag("-v,--verbose", verbose, "Print progress (default)");

  std::vector<Runner> runners{add_gen_data(app), add_train(app), add_train_explainer(app), add_explain(app),
                              add_eval(app)};
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(app, args);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  set_log_level(quiet ? LogLevel::quiet : LogLevel::info);
  (void)verbose;
  try {
    for (auto& r : runners) r();
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace infocons::cli
