#pragma once

// Toy point-cloud classifiers factored into a per-point encoder and a head on
// the max-pooled global feature.
//
//   flat ("pointnet-lite"): 3 -> 64 -> 128 -> 256 per point, max-pool,
//                           head 256 -> 64 -> C.
//   hier ("hier-lite"):     3 -> 64 -> 128 per point, farthest-point sample
//                           64 anchors, max over each anchor's 8 nearest
//                           neighbours, 128 -> 256 per anchor, max-pool,
//                           same head.
//
// Encoder layer l (1-based) is affine + ELU. Features are stored one point
// per row: the tap feature z is an N' x D tensor.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "infocons/diffcore.hpp"
#include "infocons/optim.hpp"
#include "infocons/shapes.hpp"

namespace infocons {

enum class ArchKind { flat, hier };

std::string_view to_string(ArchKind kind);
std::optional<ArchKind> parse_arch_kind(std::string_view name);

struct Dense {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct ModelParams {
  ArchKind arch = ArchKind::flat;
  std::size_t num_classes = 0;
  std::vector<Dense> encoder;
  std::vector<Dense> head;  // ELU between head layers, none after the last
  std::size_t tap_layer = 3;
  // hierarchical variant: grouping sits between encoder layers
  // group_after and group_after + 1
  std::size_t group_after = 2;
  std::size_t anchors = 64;
  std::size_t neighbors = 8;
  std::uint64_t fps_seed = 0;
  std::uint64_t seed = 0;
  // Dataset-level per-channel statistics of z at tap_layer.
  std::vector<double> prior_mean;
  std::vector<double> prior_std;

  std::size_t num_layers() const { return encoder.size(); }
  std::size_t layer_dim(std::size_t layer) const;  // output width of layer (0 = input, 3)
  std::size_t global_dim() const { return layer_dim(num_layers()); }
  std::size_t parameter_count() const;
  bool grouped_before(std::size_t layer) const {
    return arch == ArchKind::hier && layer > group_after;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct ModelShape {
  std::vector<std::size_t> encoder_dims{3, 64, 128, 256};
  std::vector<std::size_t> head_dims{64};  // hidden widths; C is appended
};

ModelParams init_model(ArchKind arch, std::size_t num_classes, std::uint64_t seed,
                       const ModelShape& shape = {}, bool zero_head = false);

// Round every weight through float32, matching what a checkpoint stores.
void quantize_to_float32(ModelParams& params);

// FNV-1a over the float32 image of all weights.
std::uint64_t weights_checksum(const ModelParams& params);

// ---- sampling and grouping ----

// Greedy farthest-point sampling from an explicit start index; each next
// pick maximizes the distance to the chosen set, ties to the lowest index.
std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t m,
                                                 std::size_t start);
// Start index drawn from rng.
std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t m,
                                                 Rng& rng);

// k nearest points to each query (self included), ties to the lowest index.
std::vector<std::size_t> knn_indices(std::span<const Point3> points,
                                     std::span<const Point3> queries, std::size_t k);

// ---- graph construction ----

// Several equally sized clouds stacked along the point axis.
struct Batch {
  std::size_t clouds = 0;
  std::size_t points = 0;                // per cloud
  Tensor coords;                         // [clouds * points, 3]
  std::vector<std::size_t> group_rows;   // hier: neighbour rows, offset per cloud
  std::vector<std::size_t> anchor_rows;  // hier: FPS picks, offset per cloud
  std::vector<Point3> anchor_points;     // hier: coordinates of the picks

  // rows of the feature map after `layer` for the given model
  std::size_t rows_after(const ModelParams& p, std::size_t layer) const;
  std::size_t rows_per_cloud_after(const ModelParams& p, std::size_t layer) const;
};

Batch make_batch(const ModelParams& params, std::span<const PointCloud* const> clouds);
Batch make_batch(const ModelParams& params, const PointCloud& cloud);

struct ModelVars {
  std::vector<ad::Var> enc_w, enc_b, head_w, head_b;
};

// Weights as graph leaves; frozen weights are constants (no adjoint).
ModelVars bind_model(ad::Graph& g, const ModelParams& params, bool trainable);

// Encoder layers from+1 .. to applied to h (the output of layer `from`).
ad::Var run_encoder(const ModelParams& params, const ModelVars& vars, const Batch& batch,
                    ad::Var h, std::size_t from, std::size_t to);

struct HeadOutput {
  ad::Var pooled;  // [clouds, D]
  ad::Var logits;  // [clouds, C]
};

// Remaining encoder layers after `from`, max-pool per cloud, head.
HeadOutput run_head(const ModelParams& params, const ModelVars& vars, const Batch& batch,
                    ad::Var h, std::size_t from);

// ---- instrumented model ----

struct EncoderOutput {
  Tensor z;                    // [N', D] at the tap layer
  std::vector<Point3> anchors; // N' positions of the z rows
  std::vector<std::size_t> anchor_index;  // input index of each z row
  Tensor global;               // [D_global]; empty if stopped at the tap
  std::vector<std::size_t> global_argmax;  // input point index per channel
};

struct InputGradient {
  double loss = 0;
  std::vector<Point3> grad;  // dL/dx per input point
};

// Immutable parameters plus forward/backward counters that are safe to bump
// from parallel workers.
class PointModel {
 public:
  explicit PointModel(ModelParams params);
  PointModel(const PointModel& other) : PointModel(other.params_) {}

  const ModelParams& params() const { return params_; }

  // Each of these counts as one model forward.
  EncoderOutput encode(const PointCloud& pc, std::size_t tap_layer, bool stop_at_tap = false) const;
  EncoderOutput encode(const PointCloud& pc) const { return encode(pc, params_.tap_layer); }
  std::vector<double> classify(const PointCloud& pc) const;
  std::size_t predict(const PointCloud& pc) const;

  // Cross-entropy gradient w.r.t. input coordinates: one forward, one backward.
  InputGradient input_gradient(const PointCloud& pc, std::size_t label) const;

  std::uint64_t forwards() const { return forwards_.load(); }
  std::uint64_t backwards() const { return backwards_.load(); }
  void reset_counters() const {
    forwards_ = 0;
    backwards_ = 0;
  }
  void count_forward() const { ++forwards_; }
  void count_backward() const { ++backwards_; }

 private:
  ModelParams params_;
  mutable std::atomic<std::uint64_t> forwards_{0};
  mutable std::atomic<std::uint64_t> backwards_{0};
};

// ---- training ----

struct TrainConfig {
  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 1;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Minimizes mean cross-entropy. The returned weights are float32-rounded and
// carry dataset-level prior statistics at their tap layer. Throws
// NumericError if the loss becomes non-finite.
TrainResult train_classifier(const LabeledDataset& data, ArchKind arch, const TrainConfig& config,
                             const EpochCallback& on_epoch = {});

double accuracy(const PointModel& model, std::span<const PointCloud> clouds);

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored
};

// Per-channel mean and standard deviation of tap features over all points
// of the given clouds.
FeatureStats tap_statistics(const ModelParams& params, std::size_t tap_layer,
                            std::span<const PointCloud> clouds, double floor = 1e-4);

}  // namespace infocons
