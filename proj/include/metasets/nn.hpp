#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metasets/geometry.hpp"
#include "metasets/rng.hpp"

namespace metasets::nn {

// Layer widths of the classifier: a shared per-point MLP 3->64->128->256
// (ReLU after each layer), max-pooling over points, then a head
// 256->128 (ReLU) -> class_count.
struct ModelShape {
  static constexpr std::size_t kLayerCount = 5;
  static constexpr std::size_t kPointLayers = 3;
  static constexpr std::array<std::size_t, 5> kHiddenWidths{3, 64, 128, 256, 128};

  std::size_t class_count = 0;

  std::size_t in_dim(std::size_t layer) const { return kHiddenWidths[layer]; }
  std::size_t out_dim(std::size_t layer) const {
    return layer + 1 < kLayerCount ? kHiddenWidths[layer + 1] : class_count;
  }
  // Row-major in_dim x out_dim weight block, followed by out_dim biases.
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + in_dim(layer) * out_dim(layer);
  }
  std::size_t size() const { return weight_offset(kLayerCount); }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Flat parameter-shaped storage. The tag keeps parameters, gradients and
// optimizer moments from being mixed up.
template <class Tag>
class ParamArray {
 public:
  ParamArray() = default;
  explicit ParamArray(ModelShape shape) : shape_(shape), values_(shape.size(), 0.0) {}

  const ModelShape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> weight(std::size_t layer) {
    return {values_.data() + shape_.weight_offset(layer), shape_.in_dim(layer) * shape_.out_dim(layer)};
  }
  std::span<const double> weight(std::size_t layer) const {
    return {values_.data() + shape_.weight_offset(layer), shape_.in_dim(layer) * shape_.out_dim(layer)};
  }
  std::span<double> bias(std::size_t layer) {
    return {values_.data() + shape_.bias_offset(layer), shape_.out_dim(layer)};
  }
  std::span<const double> bias(std::size_t layer) const {
    return {values_.data() + shape_.bias_offset(layer), shape_.out_dim(layer)};
  }

  friend bool operator==(const ParamArray&, const ParamArray&) = default;

 private:
  ModelShape shape_;
  std::vector<double> values_;
};

struct ParamsTag {};
struct GradientsTag {};
struct MomentsTag {};

using ModelParams = ParamArray<ParamsTag>;
using Gradients = ParamArray<GradientsTag>;
using Moments = ParamArray<MomentsTag>;

bool all_finite(std::span<const double> values);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
ModelParams init_params(std::size_t class_count, Rng& rng);
ModelParams init_params(std::size_t class_count, std::uint64_t seed);

std::vector<double> forward(const ModelParams& params, const PointCloud& cloud);

// The 256-wide max-pooled feature of a cloud (input to the head).
std::vector<double> pooled_feature(const ModelParams& params, const PointCloud& cloud);

// Per-point MLP output for a single point (post-ReLU, 256 wide).
std::vector<double> point_feature(const ModelParams& params, const Point3& point);

// Softmax cross-entropy of one logit vector against a label.
double cross_entropy(std::span<const double> logits, int label);

// Mean cross-entropy over the batch, using each cloud's own label.
double loss_batch(const ModelParams& params, std::span<const PointCloud> batch);

struct LossAndGrad {
  double loss = 0.0;
  Gradients grad;
};

LossAndGrad loss_and_grad(const ModelParams& params, std::span<const PointCloud> batch);

struct BatchEval {
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::vector<int> predictions;

  double accuracy() const {
    return predictions.empty() ? 0.0 : static_cast<double>(correct) / predictions.size();
  }
};

// Loss and argmax predictions; ties go to the lower class index.
BatchEval evaluate(const ModelParams& params, std::span<const PointCloud> batch);

// params - lr * grads.
ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr);

struct AdamState {
  Moments first;
  Moments second;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(const ModelShape& shape);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamResult {
  AdamState state;
  ModelParams params;
};

// Bias-corrected Adam update with learning rate `lr`.
AdamResult adam_step(const AdamState& state, const ModelParams& params, const Gradients& grads,
                     double lr);

}  // namespace metasets::nn
