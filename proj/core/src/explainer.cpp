#include "infocons/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "infocons/checkpoint.hpp"
#include "infocons/errors.hpp"
#include "infocons/log.hpp"
#include "infocons/optim.hpp"

namespace infocons {

std::string_view to_string(Objective o) {
  return o == Objective::infocons ? "infocons" : "selective_cp";
}

std::optional<Objective> parse_objective(std::string_view name) {
  if (name == "infocons") return Objective::infocons;
  if (name == "selective_cp" || name == "selective-cp") return Objective::selective_cp;
  return std::nullopt;
}

BottleneckParams init_bottleneck(std::size_t feature_dim, const ExplainerConfig& config) {
  if (feature_dim == 0 || config.reduced_dim == 0)
    throw std::invalid_argument("init_bottleneck: dimensions must be positive");
  const std::size_t d = feature_dim, r = config.reduced_dim;
  BottleneckParams p;
  p.config = config;
  p.feature_dim = d;
  Rng rng = Rng(config.seed).fork(11);
  auto fill = [&](Shape shape, double sd) {
    Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = sd * rng.normal();
    return t;
  };
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  // q^T z sums over every point, so queries start small to keep the channel
  // softmax away from saturation.
  p.w_q = fill({d, r}, 0.1 * sd);
  p.w_v = fill({d, d}, sd);
  p.w_e = fill({r, d}, 1.0 / std::sqrt(static_cast<double>(r)));
  p.b_e = Tensor(Shape{d}, config.init_bias);
  return p;
}

BottleneckVars bind_bottleneck(ad::Graph& g, const BottleneckParams& p, bool trainable) {
  return {g.leaf(p.w_q, trainable), g.leaf(p.w_v, trainable), g.leaf(p.w_e, trainable),
          g.leaf(p.b_e, trainable)};
}

MaskOutput attention_bottleneck(const BottleneckVars& theta, ad::Var z) {
  const auto& zs = z.shape();
  const auto& qs = theta.w_q.shape();
  if (zs.size() != 2 || qs.size() != 2 || zs[1] != qs[0])
    throw ShapeError("attention_bottleneck: features " + shape_string(zs) +
                     " do not match W_q " + shape_string(qs));
  const double d = static_cast<double>(zs[1]);
  ad::Var q = ad::matmul(z, theta.w_q);                        // [N', D_r]
  ad::Var v = ad::elu(ad::matmul(z, theta.w_v));               // [N', D]
  ad::Var a = ad::scale(ad::matmul(ad::transpose(q), z), 1.0 / std::sqrt(d));  // [D_r, D]
  ad::Var attn = ad::softmax(a, 1);
  ad::Var mixed = ad::matmul(v, ad::transpose(attn));          // [N', D_r]
  MaskOutput out;
  out.logits = ad::add_row(ad::matmul(mixed, theta.w_e), theta.b_e);
  out.mask = ad::sigmoid(out.logits);
  return out;
}

MaskOutput identity_mask(ad::Graph& g, const Shape& shape) {
  MaskOutput out;
  out.mask = g.constant(Tensor(shape, 1.0));
  out.identity = true;
  return out;
}

HeadFn frozen_head(const ModelParams& model, const ModelVars& vars, const Batch& batch,
                   std::size_t tap_layer) {
  return [&model, &vars, &batch, tap_layer](ad::Var zhat) {
    return run_head(model, vars, batch, zhat, tap_layer).logits;
  };
}

namespace {

Tensor broadcast_rows(std::span<const double> row, std::size_t rows) {
  Tensor t(Shape{rows, row.size()});
  for (std::size_t r = 0; r < rows; ++r) std::copy(row.begin(), row.end(), t.row(r).begin());
  return t;
}

void check_noise(const NoiseSpec& noise, std::size_t d) {
  if (noise.mean.size() != d || noise.stddev.size() != d)
    throw ShapeError("noise prior has " + std::to_string(noise.mean.size()) + " channels, features have " +
                     std::to_string(d));
  for (double s : noise.stddev)
    if (!(s > 0)) throw std::invalid_argument("noise prior: standard deviations must be positive");
}

LossTerms combine(ad::Var ce, ad::Var info, double beta) {
  return {ad::add(ce, ad::scale(info, beta)), ce, info};
}

}  // namespace

ad::Var infocons_info(ad::Var mask, ad::Var z, std::span<const double> mean,
                      std::span<const double> stddev) {
  ad::Graph& g = mask.graph();
  const std::size_t rows = mask.shape().at(0);
  ad::Var mu = g.constant(broadcast_rows(mean, rows));
  ad::Var sigma = g.constant(broadcast_rows(stddev, rows));
  ad::Var keep = ad::add_scalar(ad::scale(mask, -1.0), 1.0);  // 1 - m
  ad::Var mu_p = ad::add(ad::mul(mask, z), ad::mul(keep, mu));
  ad::Var sigma_p = ad::mul(ad::clamp_min(keep, 1e-12), sigma);
  return ad::mean_all(ad::gaussian_kl(mu_p, sigma_p, mu, sigma));
}

LossTerms infocons_loss(const MaskOutput& mask, ad::Var z, const HeadFn& head,
                        std::span<const std::size_t> labels, double beta, const NoiseSpec& noise) {
  if (beta < 0) throw std::invalid_argument("infocons_loss: beta must be non-negative");
  if (mask.mask.shape() != z.shape())
    throw ShapeError("infocons_loss: mask " + shape_string(mask.mask.shape()) + " vs features " +
                     shape_string(z.shape()));
  if (!noise.rng) throw std::invalid_argument("infocons_loss: noise needs an rng");
  const std::size_t rows = z.shape()[0], d = z.shape()[1];
  check_noise(noise, d);
  ad::Graph& g = z.graph();

  Tensor eps(Shape{rows, d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) eps(r, c) = noise.rng->normal(noise.mean[c], noise.stddev[c]);

  ad::Var keep = ad::stop_gradient(ad::add_scalar(ad::scale(mask.mask, -1.0), 1.0));
  ad::Var zhat = ad::add(ad::mul(mask.mask, z), ad::mul(keep, g.constant(std::move(eps))));
  ad::Var ce = ad::cross_entropy(head(zhat), labels);
  ad::Var info = mask.identity ? g.constant(Tensor::scalar(0.0))
                               : infocons_info(mask.mask, z, noise.mean, noise.stddev);
  return combine(ce, info, beta);
}

ad::Var selective_info(ad::Var logits, double tau, std::size_t samples, Rng& rng) {
  if (!(tau > 0)) throw std::invalid_argument("selective_info: tau must be positive");
  if (samples == 0) throw std::invalid_argument("selective_info: need at least one sample");
  ad::Graph& g = logits.graph();
  const Shape shape = logits.shape();
  const double log_tau = std::log(tau);
  ad::Var total;
  for (std::size_t s = 0; s < samples; ++s) {
    Tensor noise(shape);
    for (auto& v : noise.storage()) {
      const double u = rng.uniform_open();
      v = std::log(u) - std::log1p(-u);  // logistic = difference of two Gumbels
    }
    ad::Var x = ad::scale(ad::add(logits, g.constant(std::move(noise))), 1.0 / tau);
    ad::Var sp_neg = ad::softplus(ad::scale(x, -1.0));  // -log y
    ad::Var sp_pos = ad::softplus(x);                   // -log (1 - y)
    // log density of the relaxed Bernoulli at y = sigmoid(x)
    ad::Var logp = ad::add(
        ad::add_scalar(ad::add(logits, ad::scale(ad::add(sp_neg, sp_pos), tau + 1.0)), log_tau),
        ad::scale(ad::logaddexp(ad::add(logits, ad::scale(sp_neg, tau)), ad::scale(sp_pos, tau)), -2.0));
    ad::Var m = ad::mean_all(logp);
    total = total.valid() ? ad::add(total, m) : m;
  }
  return ad::scale(total, 1.0 / static_cast<double>(samples));
}

LossTerms selective_cp_loss(const MaskOutput& mask, ad::Var z, const HeadFn& head,
                            std::span<const std::size_t> labels, double beta, double tau,
                            std::size_t samples, Rng& rng) {
  if (beta < 0) throw std::invalid_argument("selective_cp_loss: beta must be non-negative");
  if (mask.mask.shape() != z.shape())
    throw ShapeError("selective_cp_loss: mask " + shape_string(mask.mask.shape()) + " vs features " +
                     shape_string(z.shape()));
  ad::Var zhat = ad::mul(mask.mask, z);
  ad::Var ce = ad::cross_entropy(head(zhat), labels);
  ad::Var info = mask.identity ? z.graph().constant(Tensor::scalar(0.0))
                               : selective_info(mask.logits, tau, samples, rng);
  return combine(ce, info, beta);
}

// ---- Explainer ------------------------------------------------------------

Explainer::Explainer(BottleneckParams params) : params_(std::move(params)) {
  if (params_.w_q.rank() != 2 || params_.w_q.rows() != params_.feature_dim)
    throw DataError("explainer: W_q does not match feature dimension " + std::to_string(params_.feature_dim));
  if (params_.config.tap_layer == 0) throw DataError("explainer: tap layer is unset");
}

Tensor Explainer::mask(const Tensor& z) const {
  ++forwards_;
  ad::Graph g;
  const BottleneckVars theta = bind_bottleneck(g, params_, false);
  return attention_bottleneck(theta, g.constant(z)).mask.value();
}

std::vector<double> interpolate_scores(std::span<const Point3> anchors, std::span<const double> anchor_scores,
                                       std::span<const Point3> targets, std::size_t k) {
  if (anchors.size() != anchor_scores.size())
    throw std::invalid_argument("interpolate_scores: anchors and scores differ in length");
  if (anchors.empty()) throw std::invalid_argument("interpolate_scores: no anchors");
  if (k == 0) throw std::invalid_argument("interpolate_scores: k must be positive");
  if (anchors.size() < k) {
    log_warn("interpolate_scores: only " + std::to_string(anchors.size()) + " anchors, using k=" +
             std::to_string(anchors.size()));
    k = anchors.size();
  }
  std::vector<double> out(targets.size());
  std::vector<std::pair<double, std::size_t>> d(anchors.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      double s = 0;
      for (int c = 0; c < 3; ++c) {
        const double diff = targets[t][c] - anchors[a][c];
        s += diff * diff;
      }
      d[a] = {std::sqrt(s), a};
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    if (d[0].first == 0.0) {
      out[t] = anchor_scores[d[0].second];
      continue;
    }
    double num = 0, den = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double w = 1.0 / d[j].first;
      num += w * anchor_scores[d[j].second];
      den += w;
    }
    out[t] = num / den;
  }
  return out;
}

namespace {

void check_pair(const Explainer& explainer, const PointModel& model) {
  const auto tap = explainer.tap_layer();
  if (tap > model.params().num_layers())
    throw DataError("explainer taps layer " + std::to_string(tap) + " but the model has " +
                    std::to_string(model.params().num_layers()));
  if (model.params().layer_dim(tap) != explainer.params().feature_dim)
    throw DataError("explainer expects " + std::to_string(explainer.params().feature_dim) +
                    " channels, model layer " + std::to_string(tap) + " has " +
                    std::to_string(model.params().layer_dim(tap)));
}

}  // namespace

ScoreMap score_map(const Explainer& explainer, const PointModel& model, const PointCloud& pc) {
  check_pair(explainer, model);
  const EncoderOutput enc = model.encode(pc, explainer.tap_layer(), true);
  const Tensor m = explainer.mask(enc.z);
  std::vector<double> s(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    s[r] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  }
  ScoreMap out;
  out.method = "infocons";
  if (s.size() == pc.size())
    out.scores = std::move(s);
  else
    out.scores = interpolate_scores(enc.anchors, s, pc.points);
  for (auto& v : out.scores) v = std::clamp(v, 0.0, 1.0);
  return out;
}

DynamicScoreMap dynamic_score_map(const Explainer& explainer, const PointModel& model, const PointCloud& pc,
                                  std::size_t iters, std::size_t drop_per_iter) {
  if (iters == 0 || drop_per_iter == 0)
    throw std::invalid_argument("dynamic_score_map: iters and drop_per_iter must be positive");
  if (iters * drop_per_iter >= pc.size())
    throw std::invalid_argument("dynamic_score_map: " + std::to_string(iters) + " x " +
                                std::to_string(drop_per_iter) + " drops need more than " +
                                std::to_string(pc.size()) + " points");
  DynamicScoreMap out;
  std::vector<std::size_t> alive(pc.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::vector<std::size_t> order;
  std::vector<double> last_raw(pc.size(), 0.0);
  for (std::size_t it = 0; it < iters; ++it) {
    const PointCloud cur = subset(pc, alive);
    const ScoreMap sm = score_map(explainer, model, cur);
    for (std::size_t i = 0; i < alive.size(); ++i) last_raw[alive[i]] = sm.scores[i];
    const auto ranked = rank_by_score(sm.scores);
    std::vector<std::size_t> now;
    std::vector<char> drop(alive.size(), 0);
    for (std::size_t j = 0; j < drop_per_iter; ++j) {
      now.push_back(alive[ranked[j]]);
      drop[ranked[j]] = 1;
    }
    order.insert(order.end(), now.begin(), now.end());
    out.dropped.push_back(std::move(now));
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < alive.size(); ++i)
      if (!drop[i]) next.push_back(alive[i]);
    alive = std::move(next);
  }
  out.map.scores = iterative_drop_scores(pc.size(), order, last_raw);
  out.map.method = "infocons-dyn";
  out.map.iterations = iters;
  return out;
}

// ---- training -------------------------------------------------------------

namespace {

struct CachedCloud {
  Batch batch;
  Tensor z;
  std::size_t label = 0;
};

std::vector<std::size_t> balanced_subset(const std::vector<PointCloud>& clouds, std::size_t limit,
                                         std::uint64_t seed) {
  std::vector<std::size_t> all(clouds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (limit == 0 || limit >= clouds.size()) return all;
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (auto i : all) by_class[clouds[i].label.value()].push_back(i);
  Rng rng = Rng(seed).fork(12);
  for (auto& [c, v] : by_class) rng.shuffle(v);
  std::vector<std::size_t> out;
  for (std::size_t round = 0; out.size() < limit; ++round)
    for (auto& [c, v] : by_class)
      if (round < v.size() && out.size() < limit) out.push_back(v[round]);
  std::sort(out.begin(), out.end());
  return out;
}

FeatureStats row_statistics(std::span<const Tensor* const> zs, double floor) {
  const std::size_t d = zs.front()->cols();
  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  std::size_t rows = 0;
  for (const Tensor* z : zs) {
    for (std::size_t r = 0; r < z->rows(); ++r) {
      auto row = z->row(r);
      for (std::size_t c = 0; c < d; ++c) {
        sum[c] += row[c];
        sq[c] += row[c] * row[c];
      }
    }
    rows += z->rows();
  }
  FeatureStats st{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t c = 0; c < d; ++c) {
    st.mean[c] = sum[c] / static_cast<double>(rows);
    const double var = std::max(0.0, sq[c] / static_cast<double>(rows) - st.mean[c] * st.mean[c]);
    st.stddev[c] = std::max(std::sqrt(var), floor);
  }
  return st;
}

void quantize(BottleneckParams& p) {
  for (Tensor* t : {&p.w_q, &p.w_v, &p.w_e, &p.b_e})
    for (auto& v : t->storage()) v = static_cast<double>(static_cast<float>(v));
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

ExplainerResult train_explainer(const PointModel& model, const LabeledDataset& data, ExplainerConfig config,
                                const ExplainerEpochCallback& on_epoch) {
  const ModelParams& mp = model.params();
  if (config.tap_layer == 0) config.tap_layer = mp.tap_layer;
  if (config.tap_layer > mp.num_layers())
    throw std::invalid_argument("train_explainer: tap layer " + std::to_string(config.tap_layer) +
                                " exceeds model depth " + std::to_string(mp.num_layers()));
  if (config.beta < 0) throw std::invalid_argument("train_explainer: beta must be non-negative");
  if (config.epochs == 0 || config.batch_size == 0)
    throw std::invalid_argument("train_explainer: epochs and batch size must be positive");
  if (!(config.sigma_floor > 0)) throw std::invalid_argument("train_explainer: sigma floor must be positive");
  if (data.train.empty()) throw std::invalid_argument("train_explainer: empty training split");

  const std::size_t tap = config.tap_layer;
  const std::size_t d = mp.layer_dim(tap);
  const std::uint64_t checksum = weights_checksum(mp);

  // The model is frozen, so tap features are computed once per cloud.
  std::vector<CachedCloud> cache;
  for (auto i : balanced_subset(data.train, config.train_limit, config.seed)) {
    const PointCloud& pc = data.train[i];
    CachedCloud c{make_batch(mp, pc), {}, pc.label.value()};
    c.z = model.encode(pc, tap, true).z;
    cache.push_back(std::move(c));
  }
  std::vector<const Tensor*> all_z;
  for (const auto& c : cache) all_z.push_back(&c.z);
  const FeatureStats dataset_stats = row_statistics(all_z, config.sigma_floor);

  ExplainerResult result;
  BottleneckParams params = init_bottleneck(d, config);
  params.prior_mean = dataset_stats.mean;
  params.prior_std = dataset_stats.stddev;
  params.model_checksum = checksum;

  Optimizer opt(OptimizerKind::adam, config.learning_rate);
  Rng order_rng = Rng(config.seed).fork(13);
  Rng noise_rng = Rng(config.seed).fork(14);
  std::vector<std::size_t> order(cache.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs && !result.diverged; ++epoch) {
    order_rng.shuffle(order);
    ExplainerEpoch em;
    em.epoch = epoch;
    for (std::size_t start = 0; start < order.size() && !result.diverged; start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      std::vector<const Tensor*> batch_z;
      for (std::size_t i = start; i < end; ++i) batch_z.push_back(&cache[order[i]].z);
      const FeatureStats batch_stats = row_statistics(batch_z, config.sigma_floor);

      std::vector<Tensor> grads{Tensor(params.w_q.shape()), Tensor(params.w_v.shape()),
                                Tensor(params.w_e.shape()), Tensor(params.b_e.shape())};
      double total = 0, ce = 0, info = 0;
      for (std::size_t i = start; i < end; ++i) {
        const CachedCloud& c = cache[order[i]];
        ad::Graph g;
        const ModelVars mv = bind_model(g, mp, false);
        const BottleneckVars theta = bind_bottleneck(g, params, true);
        ad::Var z = g.constant(c.z);
        const MaskOutput mask = attention_bottleneck(theta, z);
        const HeadFn head = frozen_head(mp, mv, c.batch, tap);
        const std::size_t labels[] = {c.label};
        const LossTerms loss =
            config.objective == Objective::infocons
                ? infocons_loss(mask, z, head, labels, config.beta,
                                NoiseSpec{batch_stats.mean, batch_stats.stddev, &noise_rng})
                : selective_cp_loss(mask, z, head, labels, config.beta, config.tau, config.samples,
                                    noise_rng);
        if (!std::isfinite(loss.total.item())) {
          result.diverged = true;
          result.diagnostic = "explainer loss became non-finite at epoch " + std::to_string(epoch) +
                              " (ce " + std::to_string(loss.ce.item()) + ", info " +
                              std::to_string(loss.info.item()) + "); keeping the last good parameters";
          break;
        }
        g.backward(loss.total);
        const ad::Var vs[] = {theta.w_q, theta.w_v, theta.w_e, theta.b_e};
        for (std::size_t k = 0; k < 4; ++k) {
          auto src = vs[k].grad_data();
          auto dst = grads[k].data();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += inv_b * src[j];
        }
        total += loss.total.item();
        ce += loss.ce.item();
        info += loss.info.item();
      }
      if (result.diverged) break;
      if (!std::all_of(grads.begin(), grads.end(), [](const Tensor& t) { return all_finite(t.data()); })) {
        result.diverged = true;
        result.diagnostic = "explainer gradient became non-finite at epoch " + std::to_string(epoch) +
                            "; keeping the last good parameters";
        break;
      }
      Tensor* ps[] = {&params.w_q, &params.w_v, &params.w_e, &params.b_e};
      opt.step(ps, grads);
      em.total += total;
      em.ce += ce;
      em.info += info;
    }
    if (result.diverged) break;
    const double n = static_cast<double>(order.size());
    em.total /= n;
    em.ce /= n;
    em.info /= n;
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  if (result.diverged) log_warn(result.diagnostic);
  quantize(params);
  result.params = std::move(params);
  return result;
}

double bottleneck_accuracy(const Explainer& explainer, const PointModel& model,
                           std::span<const PointCloud> clouds, std::uint64_t seed) {
  check_pair(explainer, model);
  if (clouds.empty()) return 0.0;
  const auto& bp = explainer.params();
  const ModelParams& mp = model.params();
  Rng rng = Rng(seed).fork(15);
  std::size_t hit = 0;
  for (const auto& pc : clouds) {
    const Tensor z = model.encode(pc, explainer.tap_layer(), true).z;
    ad::Graph g;
    const Batch batch = make_batch(mp, pc);
    const ModelVars mv = bind_model(g, mp, false);
    const BottleneckVars theta = bind_bottleneck(g, bp, false);
    ad::Var zv = g.constant(z);
    const MaskOutput mask = attention_bottleneck(theta, zv);
    const std::size_t labels[] = {pc.label.value()};
    ad::Var logits;
    const HeadFn head = [&](ad::Var zhat) {
      logits = run_head(mp, mv, batch, zhat, explainer.tap_layer()).logits;
      return logits;
    };
    infocons_loss(mask, zv, head, labels, 0.0, NoiseSpec{bp.prior_mean, bp.prior_std, &rng});
    auto row = logits.data();
    if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[0])
      ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(clouds.size());
}

// ---- persistence ----------------------------------------------------------

void save_explainer(const std::filesystem::path& path, const BottleneckParams& p) {
  write_tensors(path, {{"bottleneck.w_q", p.w_q}, {"bottleneck.w_v", p.w_v}, {"bottleneck.w_e", p.w_e},
                       {"bottleneck.b_e", p.b_e}});
  const auto& c = p.config;
  Metadata m;
  m["kind"] = "explainer";
  m["format_version"] = std::to_string(kCheckpointVersion);
  m["objective"] = std::string(to_string(c.objective));
  m["beta"] = format_double(c.beta);
  m["reduced_dim"] = std::to_string(c.reduced_dim);
  m["tau"] = format_double(c.tau);
  m["samples"] = std::to_string(c.samples);
  m["tap_layer"] = std::to_string(c.tap_layer);
  m["feature_dim"] = std::to_string(p.feature_dim);
  m["epochs"] = std::to_string(c.epochs);
  m["batch_size"] = std::to_string(c.batch_size);
  m["learning_rate"] = format_double(c.learning_rate);
  m["train_limit"] = std::to_string(c.train_limit);
  m["sigma_floor"] = format_double(c.sigma_floor);
  m["init_bias"] = format_double(c.init_bias);
  m["seed"] = std::to_string(c.seed);
  m["prior_mean"] = format_list(p.prior_mean);
  m["prior_std"] = format_list(p.prior_std);
  m["model_checksum"] = std::to_string(p.model_checksum);
  write_metadata(sidecar_path(path), m);
}

BottleneckParams load_explainer(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("explainer checkpoint not found: " + path.string());
  const Metadata m = read_metadata(sidecar_path(path));
  if (require(m, "kind") != "explainer") throw DataError(path.string() + " is not an explainer checkpoint");
  BottleneckParams p;
  auto& c = p.config;
  auto obj = parse_objective(require(m, "objective"));
  if (!obj) throw DataError("unknown objective in " + path.string());
  c.objective = *obj;
  try {
    c.beta = std::stod(require(m, "beta"));
    c.reduced_dim = std::stoull(require(m, "reduced_dim"));
    c.tau = std::stod(require(m, "tau"));
    c.samples = std::stoull(require(m, "samples"));
    c.tap_layer = std::stoull(require(m, "tap_layer"));
    p.feature_dim = std::stoull(require(m, "feature_dim"));
    c.epochs = std::stoull(require(m, "epochs"));
    c.batch_size = std::stoull(require(m, "batch_size"));
    c.learning_rate = std::stod(require(m, "learning_rate"));
    c.train_limit = std::stoull(require(m, "train_limit"));
    c.sigma_floor = std::stod(require(m, "sigma_floor"));
    if (auto it = m.find("init_bias"); it != m.end()) c.init_bias = std::stod(it->second);
    c.seed = std::stoull(require(m, "seed"));
    p.model_checksum = std::stoull(require(m, "model_checksum"));
  } catch (const std::logic_error&) {
    throw DataError("malformed number in " + sidecar_path(path).string());
  }
  p.prior_mean = parse_double_list(require(m, "prior_mean"));
  p.prior_std = parse_double_list(require(m, "prior_std"));
  const std::size_t d = p.feature_dim, r = c.reduced_dim;
  if (p.prior_mean.size() != d || p.prior_std.size() != d)
    throw DataError(path.string() + ": prior statistics do not match feature dimension");

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
  p.w_q = take("bottleneck.w_q", {d, r});
  p.w_v = take("bottleneck.w_v", {d, d});
  p.w_e = take("bottleneck.w_e", {r, d});
  p.b_e = take("bottleneck.b_e", {d});
  return p;
}

}  // namespace infocons
