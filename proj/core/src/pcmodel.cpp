#include "infocons/pcmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "infocons/errors.hpp"

namespace infocons {

std::string_view to_string(ArchKind kind) { return kind == ArchKind::flat ? "flat" : "hier"; }

std::optional<ArchKind> parse_arch_kind(std::string_view name) {
  if (name == "flat" || name == "pointnet-lite") return ArchKind::flat;
  if (name == "hier" || name == "hier-lite") return ArchKind::hier;
  return std::nullopt;
}

std::size_t ModelParams::layer_dim(std::size_t layer) const {
  if (layer == 0) return encoder.empty() ? 3 : encoder[0].weight.rows();
  return encoder.at(layer - 1).weight.cols();
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : encoder) n += l.weight.size() + l.bias.size();
  for (const auto& l : head) n += l.weight.size() + l.bias.size();
  return n;
}

ModelParams init_model(ArchKind arch, std::size_t num_classes, std::uint64_t seed,
                       const ModelShape& shape, bool zero_head) {
  if (num_classes == 0) throw std::invalid_argument("init_model: need at least one class");
  if (shape.encoder_dims.size() < 2) throw std::invalid_argument("init_model: encoder needs a layer");
  ModelParams p;
  p.arch = arch;
  p.num_classes = num_classes;
  p.seed = seed;
  p.tap_layer = shape.encoder_dims.size() - 1;
  p.group_after = std::min<std::size_t>(2, p.tap_layer - 1);
  p.fps_seed = splitmix64(seed ^ 0x5f5);
  Rng rng = Rng(seed).fork(1);
  auto dense = [&](std::size_t in, std::size_t out, double gain, bool zero) {
    Dense d{Tensor(Shape{in, out}), Tensor(Shape{out})};
    if (!zero) {
      const double s = std::sqrt(gain / static_cast<double>(in));
      for (auto& w : d.weight.storage()) w = s * rng.normal();
    }
    return d;
  };
  for (std::size_t l = 1; l < shape.encoder_dims.size(); ++l)
    p.encoder.push_back(dense(shape.encoder_dims[l - 1], shape.encoder_dims[l], 2.0, false));
  std::size_t in = shape.encoder_dims.back();
  for (auto h : shape.head_dims) {
    p.head.push_back(dense(in, h, 2.0, zero_head));
    in = h;
  }
  p.head.push_back(dense(in, num_classes, 1.0, zero_head));
  return p;
}

void quantize_to_float32(ModelParams& params) {
  auto q = [](Tensor& t) {
    for (auto& v : t.storage()) v = static_cast<double>(static_cast<float>(v));
  };
  for (auto& l : params.encoder) {
    q(l.weight);
    q(l.bias);
  }
  for (auto& l : params.head) {
    q(l.weight);
    q(l.bias);
  }
}

std::uint64_t weights_checksum(const ModelParams& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const Tensor& t) {
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& l : params.encoder) {
    mix(l.weight);
    mix(l.bias);
  }
  for (const auto& l : params.head) {
    mix(l.weight);
    mix(l.bias);
  }
  return h;
}

// ---- sampling -------------------------------------------------------------

namespace {
double dist2(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}
}  // namespace

std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t m,
                                                 std::size_t start) {
  const std::size_t n = points.size();
  if (m > n) throw std::invalid_argument("fps: requested " + std::to_string(m) + " of " + std::to_string(n) + " points");
  if (m == 0) return {};
  if (start >= n) throw std::out_of_range("fps: start index out of range");
  std::vector<std::size_t> chosen{start};
  chosen.reserve(m);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  taken[start] = 1;
  std::size_t last = start;
  while (chosen.size() < m) {
    std::size_t pick = n;
    double pick_d = -1;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], dist2(points[i], points[last]));
      if (!taken[i] && best[i] > pick_d) {
        pick_d = best[i];
        pick = i;
      }
    }
    taken[pick] = 1;
    chosen.push_back(pick);
    last = pick;
  }
  return chosen;
}

std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t m,
                                                 Rng& rng) {
  if (m > points.size()) throw std::invalid_argument("fps: requested " + std::to_string(m) + " of " + std::to_string(points.size()) + " points");
  if (points.empty()) return {};
  return farthest_point_sampling(points, m, rng.index(points.size()));
}

std::vector<std::size_t> knn_indices(std::span<const Point3> points, std::span<const Point3> queries,
                                     std::size_t k) {
  if (k > points.size()) throw std::invalid_argument("knn: k exceeds point count");
  std::vector<std::size_t> out;
  out.reserve(queries.size() * k);
  std::vector<std::pair<double, std::size_t>> d(points.size());
  for (const auto& q : queries) {
    for (std::size_t i = 0; i < points.size(); ++i) d[i] = {dist2(points[i], q), i};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    for (std::size_t j = 0; j < k; ++j) out.push_back(d[j].second);
  }
  return out;
}

// ---- batches and graphs ---------------------------------------------------

std::size_t Batch::rows_per_cloud_after(const ModelParams& p, std::size_t layer) const {
  return p.grouped_before(layer) ? p.anchors : points;
}

std::size_t Batch::rows_after(const ModelParams& p, std::size_t layer) const {
  return clouds * rows_per_cloud_after(p, layer);
}

Batch make_batch(const ModelParams& params, std::span<const PointCloud* const> clouds) {
  if (clouds.empty()) throw std::invalid_argument("make_batch: no clouds");
  Batch b;
  b.clouds = clouds.size();
  b.points = clouds[0]->size();
  b.coords = Tensor(Shape{b.clouds * b.points, 3});
  for (std::size_t c = 0; c < clouds.size(); ++c) {
    const auto& pc = *clouds[c];
    if (pc.size() != b.points)
      throw DataError("make_batch: clouds in a batch must share a point count");
    for (std::size_t i = 0; i < b.points; ++i)
      for (std::size_t k = 0; k < 3; ++k) b.coords(c * b.points + i, k) = pc.points[i][k];
    if (params.arch == ArchKind::hier) {
      if (b.points < params.anchors)
        throw DataError("hierarchical model needs at least " + std::to_string(params.anchors) +
                        " points, got " + std::to_string(b.points));
      Rng rng(params.fps_seed);
      auto picks = farthest_point_sampling(pc.points, params.anchors, rng);
      std::vector<Point3> anchors;
      for (auto i : picks) {
        anchors.push_back(pc.points[i]);
        b.anchor_points.push_back(pc.points[i]);
        b.anchor_rows.push_back(c * b.points + i);
      }
      for (auto r : knn_indices(pc.points, anchors, params.neighbors))
        b.group_rows.push_back(c * b.points + r);
    }
  }
  return b;
}

Batch make_batch(const ModelParams& params, const PointCloud& cloud) {
  const PointCloud* one[] = {&cloud};
  return make_batch(params, one);
}

ModelVars bind_model(ad::Graph& g, const ModelParams& params, bool trainable) {
  ModelVars v;
  for (const auto& l : params.encoder) {
    v.enc_w.push_back(g.leaf(l.weight, trainable));
    v.enc_b.push_back(g.leaf(l.bias, trainable));
  }
  for (const auto& l : params.head) {
    v.head_w.push_back(g.leaf(l.weight, trainable));
    v.head_b.push_back(g.leaf(l.bias, trainable));
  }
  return v;
}

ad::Var run_encoder(const ModelParams& params, const ModelVars& vars, const Batch& batch, ad::Var h,
                    std::size_t from, std::size_t to) {
  if (to > params.num_layers() || from > to) throw std::invalid_argument("run_encoder: bad layer range");
  for (std::size_t l = from + 1; l <= to; ++l) {
    if (params.arch == ArchKind::hier && l == params.group_after + 1)
      h = ad::group_max(h, batch.group_rows, params.neighbors);
    h = ad::elu(ad::affine(h, vars.enc_w[l - 1], vars.enc_b[l - 1]));
  }
  return h;
}

HeadOutput run_head(const ModelParams& params, const ModelVars& vars, const Batch& batch, ad::Var h,
                    std::size_t from) {
  const std::size_t last = params.num_layers();
  h = run_encoder(params, vars, batch, h, from, last);
  const std::size_t per_cloud = batch.rows_per_cloud_after(params, last);
  std::vector<std::size_t> groups(batch.clouds * per_cloud);
  std::iota(groups.begin(), groups.end(), std::size_t{0});
  HeadOutput out;
  out.pooled = ad::group_max(h, groups, per_cloud);
  ad::Var x = out.pooled;
  for (std::size_t i = 0; i < params.head.size(); ++i) {
    x = ad::affine(x, vars.head_w[i], vars.head_b[i]);
    if (i + 1 < params.head.size()) x = ad::elu(x);
  }
  out.logits = x;
  return out;
}

// ---- PointModel -----------------------------------------------------------

PointModel::PointModel(ModelParams params) : params_(std::move(params)) {
  if (params_.encoder.empty() || params_.head.empty()) throw DataError("model has no layers");
  if (params_.tap_layer < 1 || params_.tap_layer > params_.num_layers())
    throw DataError("tap layer " + std::to_string(params_.tap_layer) + " outside 1.." +
                    std::to_string(params_.num_layers()));
}

EncoderOutput PointModel::encode(const PointCloud& pc, std::size_t tap_layer, bool stop_at_tap) const {
  if (tap_layer < 1 || tap_layer > params_.num_layers())
    throw std::invalid_argument("tap layer " + std::to_string(tap_layer) + " out of range");
  count_forward();
  ad::Graph g;
  const Batch batch = make_batch(params_, pc);
  const ModelVars vars = bind_model(g, params_, false);
  ad::Var z = run_encoder(params_, vars, batch, g.constant(batch.coords), 0, tap_layer);
  EncoderOutput out;
  out.z = z.value();
  if (params_.grouped_before(tap_layer)) {
    out.anchors = batch.anchor_points;
    out.anchor_index = batch.anchor_rows;
  } else {
    out.anchors = pc.points;
    out.anchor_index.resize(pc.size());
    std::iota(out.anchor_index.begin(), out.anchor_index.end(), std::size_t{0});
  }
  if (!stop_at_tap) {
    auto head = run_head(params_, vars, batch, z, tap_layer);
    out.global = Tensor::vector(std::vector<double>(head.pooled.data().begin(), head.pooled.data().end()));
    const bool anchored = params_.grouped_before(params_.num_layers());
    for (auto row : ad::argmax_of(head.pooled))
      out.global_argmax.push_back(anchored ? batch.anchor_rows[row] : row);
  }
  return out;
}

std::vector<double> PointModel::classify(const PointCloud& pc) const {
  count_forward();
  ad::Graph g;
  const Batch batch = make_batch(params_, pc);
  const ModelVars vars = bind_model(g, params_, false);
  auto logits = run_head(params_, vars, batch, g.constant(batch.coords), 0).logits.data();
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (auto& v : p) v /= s;
  return p;
}

std::size_t PointModel::predict(const PointCloud& pc) const {
  auto p = classify(pc);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

InputGradient PointModel::input_gradient(const PointCloud& pc, std::size_t label) const {
  count_forward();
  count_backward();
  ad::Graph g;
  const Batch batch = make_batch(params_, pc);
  const ModelVars vars = bind_model(g, params_, false);
  ad::Var x = g.leaf(batch.coords, true);
  auto head = run_head(params_, vars, batch, x, 0);
  const std::size_t labels[] = {label};
  ad::Var loss = ad::cross_entropy(head.logits, labels);
  g.backward(loss);
  InputGradient out;
  out.loss = loss.item();
  auto gx = x.grad_data();
  out.grad.resize(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) out.grad[i] = {gx[3 * i], gx[3 * i + 1], gx[3 * i + 2]};
  return out;
}

// ---- training -------------------------------------------------------------

double accuracy(const PointModel& model, std::span<const PointCloud> clouds) {
  if (clouds.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& pc : clouds)
    if (model.predict(pc) == pc.label.value()) ++hit;
  return static_cast<double>(hit) / static_cast<double>(clouds.size());
}

FeatureStats tap_statistics(const ModelParams& params, std::size_t tap_layer,
                            std::span<const PointCloud> clouds, double floor) {
  const PointModel model(params);
  const std::size_t d = params.layer_dim(tap_layer);
  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  std::size_t rows = 0;
  for (const auto& pc : clouds) {
    auto enc = model.encode(pc, tap_layer, true);
    for (std::size_t r = 0; r < enc.z.rows(); ++r) {
      auto row = enc.z.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        sum[c] += row[c];
        sq[c] += row[c] * row[c];
      }
    }
    rows += enc.z.rows();
  }
  if (rows == 0) throw std::invalid_argument("tap_statistics: no clouds");
  FeatureStats st{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t c = 0; c < d; ++c) {
    st.mean[c] = sum[c] / static_cast<double>(rows);
    const double var = std::max(0.0, sq[c] / static_cast<double>(rows) - st.mean[c] * st.mean[c]);
    st.stddev[c] = std::max(std::sqrt(var), floor);
  }
  return st;
}

TrainResult train_classifier(const LabeledDataset& data, ArchKind arch, const TrainConfig& config,
                             const EpochCallback& on_epoch) {
  if (data.train.empty()) throw std::invalid_argument("train_classifier: empty training split");
  if (config.epochs == 0 || config.batch_size == 0)
    throw std::invalid_argument("train_classifier: epochs and batch size must be positive");
  TrainResult result;
  ModelParams params = init_model(arch, data.num_classes(), config.seed);
  Optimizer opt(config.optimizer, config.learning_rate);
  Rng rng = Rng(config.seed).fork(2);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const PointCloud*> clouds;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        clouds.push_back(&data.train[order[i]]);
        labels.push_back(data.train[order[i]].label.value());
      }
      ad::Graph g;
      const Batch batch = make_batch(params, clouds);
      const ModelVars vars = bind_model(g, params, true);
      auto head = run_head(params, vars, batch, g.constant(batch.coords), 0);
      ad::Var loss = ad::cross_entropy(head.logits, labels);
      if (!std::isfinite(loss.item()))
        throw NumericError("classifier loss became non-finite at epoch " + std::to_string(epoch) +
                           ", step starting at sample " + std::to_string(start));
      g.backward(loss);
      loss_sum += loss.item() * static_cast<double>(clouds.size());
      auto logits = head.logits.data();
      const std::size_t c = params.num_classes;
      for (std::size_t b = 0; b < clouds.size(); ++b) {
        auto row = logits.subspan(b * c, c);
        if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[b]) ++hits;
      }
      std::vector<Tensor*> ps;
      std::vector<Tensor> gs;
      for (std::size_t l = 0; l < params.encoder.size(); ++l) {
        ps.push_back(&params.encoder[l].weight);
        gs.push_back(vars.enc_w[l].grad());
        ps.push_back(&params.encoder[l].bias);
        gs.push_back(vars.enc_b[l].grad());
      }
      for (std::size_t l = 0; l < params.head.size(); ++l) {
        ps.push_back(&params.head[l].weight);
        gs.push_back(vars.head_w[l].grad());
        ps.push_back(&params.head[l].bias);
        gs.push_back(vars.head_b[l].grad());
      }
      opt.step(ps, gs);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_accuracy = static_cast<double>(hits) / static_cast<double>(order.size());
    m.test_accuracy = accuracy(PointModel(params), data.test);
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  quantize_to_float32(params);
  auto stats = tap_statistics(params, params.tap_layer, data.train);
  params.prior_mean = std::move(stats.mean);
  params.prior_std = std::move(stats.stddev);
  result.params = std::move(params);
  return result;
}

}  // namespace infocons
