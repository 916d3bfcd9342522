#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "metasets/geometry.hpp"
#include "metasets/nn.hpp"
#include "metasets/rng.hpp"

namespace metasets::meta {

// The N transformation functions and their current sampling probabilities.
class TaskSet {
 public:
  // Uniform probabilities 1/N.
  explicit TaskSet(std::vector<TransformSpec> transforms);
  TaskSet(std::vector<TransformSpec> transforms, std::vector<double> probabilities);

  std::size_t size() const { return transforms_.size(); }
  const std::vector<TransformSpec>& transforms() const { return transforms_; }
  const std::vector<double>& probabilities() const { return probabilities_; }
  const TransformSpec& operator[](std::size_t n) const { return transforms_[n]; }

  void set_probabilities(std::vector<double> probabilities);

 private:
  std::vector<TransformSpec> transforms_;
  std::vector<double> probabilities_;
};

struct ValueRange {
  double lo = 0.0;
  double hi = 0.0;
};

// Valid parameter ranges (t1, t2) per transformation kind.
struct TaskValueRanges {
  ValueRange occlusion{0.015, 0.040};
  ValueRange density{1.2, 1.8};
  ValueRange dropping{20.0, 50.0};
};

enum class TaskSetMode { kPaperFixed, kStratified };

std::string to_string(TaskSetMode mode);
TaskSetMode parse_task_set_mode(const std::string& name);

inline constexpr std::size_t kTasksPerKind = 3;

// kPaperFixed: W in {0.035, 0.022, 0.017}, g in {1.3, 1.4, 1.6},
// x in {24, 36, 45}. kStratified: each range split into three equal
// sub-ranges with one uniform draw per sub-range. Order is occlusion,
// density, dropping; probabilities start at 1/N.
TaskSet build_task_set(const TaskValueRanges& ranges, TaskSetMode mode, Rng& rng);

// K categorical draws with replacement.
std::vector<std::size_t> sample_task_indices(std::span<const double> probabilities, std::size_t k,
                                             Rng& rng);

// Softmax of the validation losses (max-shifted).
std::vector<double> update_probabilities(std::span<const double> losses);

struct MetaStep {
  nn::Gradients outer_grad;  // sum over k of the gradient at the adapted parameters
  double loss = 0.0;  // sum over k of the post-adaptation batch loss
  std::vector<std::size_t> tasks;
  std::vector<double> task_losses;
};

// Returns the transformed copy of the current minibatch for task n.
using TaskBatchFn = std::function<std::vector<PointCloud>(std::size_t task)>;

// One meta-training step on an already-sampled minibatch: draws K tasks,
// adapts theta'_k = theta - inner_lr * grad L_k on each transformed copy,
// and accumulates first-order outer gradients at theta'_k in task order.
MetaStep meta_train_step(const nn::ModelParams& params, std::span<const double> probabilities,
                         const TaskBatchFn& batch_for_task, std::size_t k, double inner_lr,
                         Rng& task_rng);

// Convenience form that transforms `batch` with fresh dynamic parameters
// for every cloud.
MetaStep meta_train_step(const nn::ModelParams& params, const TaskSet& tasks,
                         std::span<const PointCloud> batch, std::size_t k, double inner_lr,
                         Rng& task_rng, Rng& transform_rng);

struct Validation {
  std::vector<double> losses;
  std::vector<double> accuracies;
};

// Loss and accuracy of every task on the validation set; each cloud gets a
// fresh transform per task.
Validation meta_validate(const nn::ModelParams& params, const TaskSet& tasks,
                         std::span<const PointCloud> validation, Rng& transform_rng);

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t tasks_per_step = 4;
  double inner_lr = 0.0003;
  double outer_lr = 0.001;
  double epsilon = 0.001;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 0;

  // Throws InvalidInput unless 1 <= K <= task_count, B >= 1, inner_lr >= 0,
  // outer_lr > 0, epsilon > 0 and max_epochs >= 1.
  void validate(std::size_t task_count) const;
};

enum class TrainMode {
  kMetaSets,
  kNone,  // plain supervised training on the raw source clouds
  kAugment,  // one uniformly drawn task transforms each minibatch, no inner loop
  kNoSoftSampling,  // meta loop with probabilities frozen at 1/N
  kStaticTransform,  // meta loop on transforms drawn once per cloud up front
};

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<double> val_losses;
  std::vector<double> val_accuracies;
  std::vector<double> probabilities;  // after this epoch's update
  std::vector<double> train_losses;  // one entry per step
  double seconds = 0.0;  // wall time of training + validation (not reproducible)

  double mean_train_loss() const;
};

struct SourceSplit {
  std::vector<PointCloud> train;
  std::vector<PointCloud> val;
  std::size_t class_count = 0;
};

struct TrainResult {
  nn::ModelParams params;
  nn::AdamState adam;
  std::vector<EpochRecord> history;
  bool converged = false;
  std::size_t steps = 0;
};

// Called after every outer update with the step index (0-based) and the new parameters.
using StepObserver = std::function<void(std::size_t step, const nn::ModelParams&)>;

// Runs one of the training modes. Random streams are forked from
// config.seed by purpose: "init", "data", "tasks", "transforms",
// "validation", "static".
TrainResult train(const TrainConfig& config, TrainMode mode, const SourceSplit& data,
                  TaskSet tasks, const StepObserver& observer = {});

inline TrainResult train_metasets(const TrainConfig& config, const SourceSplit& data,
                                  TaskSet tasks, const StepObserver& observer = {}) {
  return train(config, TrainMode::kMetaSets, data, std::move(tasks), observer);
}

// kNone, kAugment, kNoSoftSampling or kStaticTransform.
TrainResult train_baseline(const TrainConfig& config, TrainMode mode, const SourceSplit& data,
                           TaskSet tasks, const StepObserver& observer = {});

}  // namespace metasets::meta
