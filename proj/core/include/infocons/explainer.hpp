#pragma once

// Information-bottleneck explainer over the point features of a frozen
// classifier.
//
// An attention bottleneck maps tap features z (N' x D, one point per row) to
// a soft mask in (0,1)^{N' x D}:
//
//   q      = z W_q                      N' x D_r
//   v      = ELU(z W_v)                 N' x D
//   attn   = softmax_channels(q^T z / sqrt(D))      D_r x D, rows sum to 1
//   mixed  = v attn^T                   N' x D_r
//   mask   = sigmoid(mixed W_e + b_e)   N' x D
//
// The channel attention is computed per cloud, so permuting the points of a
// cloud permutes the mask rows and nothing else. Two objectives train it:
//
//   selective_cp: zhat = mask * z, info = KL(mask || U(0,1)) estimated by
//                 Monte Carlo over relaxed (binary Concrete) samples.
//   infocons:     zhat = mask * z + sg(1 - mask) * eps, eps ~ N(mu, sigma^2),
//                 info = closed-form KL of the induced per-entry Gaussian
//                 N(mask z + (1-mask) mu, (1-mask)^2 sigma^2) against the
//                 prior N(mu, sigma^2).
//
// Both average the info term over points and channels and return
// total = ce + beta * info.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "infocons/diffcore.hpp"
#include "infocons/pcmodel.hpp"
#include "infocons/scoremap.hpp"

namespace infocons {

enum class Objective { selective_cp, infocons };

std::string_view to_string(Objective o);
std::optional<Objective> parse_objective(std::string_view name);

struct ExplainerConfig {
  Objective objective = Objective::infocons;
  double beta = 0.01;
  std::size_t reduced_dim = 64;
  double tau = 0.7;
  std::size_t samples = 32;
  std::size_t tap_layer = 0;  // 0 selects the model's own tap layer
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::size_t train_limit = 96;  // class-balanced subset of the training split; 0 uses all of it
  double sigma_floor = 1e-4;
  double init_bias = -2.0;  // initial mask logit; sigmoid(-2) ~ 0.12 starts mostly closed
  std::uint64_t seed = 1;
};

struct BottleneckParams {
  Tensor w_q;  // [D, D_r]
  Tensor w_v;  // [D, D]
  Tensor w_e;  // [D_r, D]
  Tensor b_e;  // [D]
  ExplainerConfig config;
  std::size_t feature_dim = 0;
  std::vector<double> prior_mean;
  std::vector<double> prior_std;
  std::uint64_t model_checksum = 0;

  std::size_t parameter_count() const { return w_q.size() + w_v.size() + w_e.size() + b_e.size(); }
};

BottleneckParams init_bottleneck(std::size_t feature_dim, const ExplainerConfig& config);

void save_explainer(const std::filesystem::path& path, const BottleneckParams& params);
BottleneckParams load_explainer(const std::filesystem::path& path);

struct BottleneckVars {
  ad::Var w_q, w_v, w_e, b_e;
};

BottleneckVars bind_bottleneck(ad::Graph& g, const BottleneckParams& params, bool trainable);

struct MaskOutput {
  ad::Var logits;  // pre-sigmoid; empty for the identity mask
  ad::Var mask;
  bool identity = false;
};

// z holds one cloud's features, [N', D].
MaskOutput attention_bottleneck(const BottleneckVars& theta, ad::Var z);

// All-ones mask that bypasses the bottleneck. Losses treat it as carrying
// no information penalty (see infocons_loss).
MaskOutput identity_mask(ad::Graph& g, const Shape& shape);

// Maps masked tap features of one cloud to logits [1, C].
using HeadFn = std::function<ad::Var(ad::Var)>;

// The frozen remainder of `model` after `tap_layer` for the cloud in batch.
HeadFn frozen_head(const ModelParams& model, const ModelVars& vars, const Batch& batch,
                   std::size_t tap_layer);

struct LossTerms {
  ad::Var total;
  ad::Var ce;
  ad::Var info;
};

struct NoiseSpec {
  std::span<const double> mean;    // D
  std::span<const double> stddev;  // D, all > 0
  Rng* rng = nullptr;
};

// With the identity mask, zhat equals z exactly (the noise term is
// multiplied by zero) and info is 0: the closed form diverges as the mask
// approaches one, so the bypass is defined rather than evaluated.
LossTerms infocons_loss(const MaskOutput& mask, ad::Var z, const HeadFn& head,
                        std::span<const std::size_t> labels, double beta, const NoiseSpec& noise);

LossTerms selective_cp_loss(const MaskOutput& mask, ad::Var z, const HeadFn& head,
                            std::span<const std::size_t> labels, double beta, double tau,
                            std::size_t samples, Rng& rng);

// Mean over entries and samples of log p(y) for y ~ BinaryConcrete(mask, tau)
// drawn from logits, i.e. a Monte Carlo estimate of KL(p || U(0,1)).
ad::Var selective_info(ad::Var mask_logits, double tau, std::size_t samples, Rng& rng);

// Mean per-entry KL of the induced Gaussian against the prior.
ad::Var infocons_info(ad::Var mask, ad::Var z, std::span<const double> mean,
                      std::span<const double> stddev);

// ---- trained explainer ----

class Explainer {
 public:
  explicit Explainer(BottleneckParams params);
  Explainer(const Explainer& other) : Explainer(other.params_) {}

  const BottleneckParams& params() const { return params_; }
  std::size_t tap_layer() const { return params_.config.tap_layer; }

  // One bottleneck forward; returns the [N', D] mask.
  Tensor mask(const Tensor& z) const;

  std::uint64_t forwards() const { return forwards_.load(); }
  void reset_counters() const { forwards_ = 0; }

 private:
  BottleneckParams params_;
  mutable std::atomic<std::uint64_t> forwards_{0};
};

// Channel mean of the mask: one model forward (to the tap layer) plus one
// bottleneck forward, interpolated to every input point when N' < N.
ScoreMap score_map(const Explainer& explainer, const PointModel& model, const PointCloud& pc);

struct DynamicScoreMap {
  ScoreMap map;
  std::vector<std::vector<std::size_t>> dropped;  // per iteration, input indices
};

// Explain, drop the top drop_per_iter survivors, re-explain the reduced
// cloud; iters model forwards in total.
DynamicScoreMap dynamic_score_map(const Explainer& explainer, const PointModel& model,
                                  const PointCloud& pc, std::size_t iters,
                                  std::size_t drop_per_iter);

// Inverse-distance weighting over the k nearest anchors; a target that
// coincides with an anchor takes that anchor's score.
std::vector<double> interpolate_scores(std::span<const Point3> anchors,
                                       std::span<const double> anchor_scores,
                                       std::span<const Point3> targets, std::size_t k = 3);

// ---- training ----

struct ExplainerEpoch {
  std::size_t epoch = 0;
  double total = 0;
  double ce = 0;
  double info = 0;
};

struct ExplainerResult {
  BottleneckParams params;  // last good parameters
  std::vector<ExplainerEpoch> history;
  bool diverged = false;
  std::string diagnostic;
};

using ExplainerEpochCallback = std::function<void(const ExplainerEpoch&)>;

// Optimizes the bottleneck only; the model is read through a const
// reference and bound as constants. Per-batch feature statistics set the
// noise prior during training; dataset-level statistics over the training
// subset are stored in the result.
ExplainerResult train_explainer(const PointModel& model, const LabeledDataset& data,
                                ExplainerConfig config, const ExplainerEpochCallback& on_epoch = {});

// Accuracy of the head on noisy bottlenecked features (InfoCons zhat).
double bottleneck_accuracy(const Explainer& explainer, const PointModel& model,
                           std::span<const PointCloud> clouds, std::uint64_t seed);

}  // namespace infocons
