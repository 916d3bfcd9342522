#include "metasets/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <utility>

#include "metasets/error.hpp"

namespace metasets::meta {
namespace {

void check_distribution(std::span<const double> p) {
  if (p.empty()) throw InvalidInput("probability vector is empty");
  double sum = 0.0;
  for (double v : p) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidInput("probabilities must be positive");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("probabilities must sum to 1");
}

std::vector<PointCloud> gather(std::span<const PointCloud> source,
                               std::span<const std::size_t> indices) {
  std::vector<PointCloud> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(source[i]);
  return out;
}

std::vector<double> uniform_probabilities(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

}  // namespace

TaskSet::TaskSet(std::vector<TransformSpec> transforms)
    : TaskSet(transforms, uniform_probabilities(transforms.size())) {}

TaskSet::TaskSet(std::vector<TransformSpec> transforms, std::vector<double> probabilities)
    : transforms_(std::move(transforms)) {
  if (transforms_.empty()) throw InvalidInput("a task set needs at least one transform");
  set_probabilities(std::move(probabilities));
}

void TaskSet::set_probabilities(std::vector<double> probabilities) {
  if (probabilities.size() != transforms_.size()) {
    throw InvalidInput("one probability per task is required");
  }
  check_distribution(probabilities);
  probabilities_ = std::move(probabilities);
}

std::string to_string(TaskSetMode mode) {
  return mode == TaskSetMode::kPaperFixed ? "paper" : "stratified";
}

TaskSetMode parse_task_set_mode(const std::string& name) {
  if (name == "paper" || name == "paper-fixed") return TaskSetMode::kPaperFixed;
  if (name == "stratified") return TaskSetMode::kStratified;
  throw InvalidInput("unknown task-set mode '" + name + "'");
}

TaskSet build_task_set(const TaskValueRanges& ranges, TaskSetMode mode, Rng& rng) {
  std::vector<TransformSpec> specs;
  if (mode == TaskSetMode::kPaperFixed) {
    for (double w : {0.035, 0.022, 0.017}) specs.push_back(TransformSpec::occlusion(w));
    for (double g : {1.3, 1.4, 1.6}) specs.push_back(TransformSpec::density(g));
    for (double x : {24.0, 36.0, 45.0}) specs.push_back(TransformSpec::dropping(x));
    return TaskSet(std::move(specs));
  }

  auto stratify = [&](TransformKind kind, const ValueRange& range) {
    if (!(range.lo < range.hi)) throw InvalidInput("range for " + to_string(kind) + " is empty");
    // Validates the endpoints against the kind's parameter domain.
    TransformSpec::make(kind, range.hi);
    TransformSpec::make(kind, range.lo);
    const double width = (range.hi - range.lo) / static_cast<double>(kTasksPerKind);
    for (std::size_t s = 0; s < kTasksPerKind; ++s) {
      const double lo = range.lo + width * static_cast<double>(s);
      specs.push_back(TransformSpec::make(kind, rng.uniform(lo, lo + width)));
    }
  };
  stratify(TransformKind::kOcclusion, ranges.occlusion);
  stratify(TransformKind::kDensity, ranges.density);
  stratify(TransformKind::kDropping, ranges.dropping);
  return TaskSet(std::move(specs));
}

std::vector<std::size_t> sample_task_indices(std::span<const double> probabilities, std::size_t k,
                                             Rng& rng) {
  check_distribution(probabilities);
  if (k == 0) throw InvalidInput("must sample at least one task");
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t draw = 0; draw < k; ++draw) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t chosen = probabilities.size() - 1;
    for (std::size_t n = 0; n < probabilities.size(); ++n) {
      cumulative += probabilities[n];
      if (u < cumulative) {
        chosen = n;
        break;
      }
    }
    out.push_back(chosen);
  }
  return out;
}

std::vector<double> update_probabilities(std::span<const double> losses) {
  if (losses.size() < 2) throw InvalidInput("soft-sampling needs at least two tasks");
  for (double l : losses) {
    if (!std::isfinite(l)) throw InvalidInput("validation losses must be finite");
  }
  const double top = *std::max_element(losses.begin(), losses.end());
  std::vector<double> p(losses.size());
  double sum = 0.0;
  for (std::size_t n = 0; n < losses.size(); ++n) {
    p[n] = std::exp(losses[n] - top);
    sum += p[n];
  }
  for (double& v : p) v /= sum;
  return p;
}

MetaStep meta_train_step(const nn::ModelParams& params, std::span<const double> probabilities,
                         const TaskBatchFn& batch_for_task, std::size_t k, double inner_lr,
                         Rng& task_rng) {
  MetaStep step;
  step.tasks = sample_task_indices(probabilities, k, task_rng);
  step.task_losses.reserve(k);
  for (std::size_t i = 0; i < step.tasks.size(); ++i) {
    const std::vector<PointCloud> batch = batch_for_task(step.tasks[i]);
    const auto inner = nn::loss_and_grad(params, batch);
    const nn::ModelParams adapted = nn::sgd_step(params, inner.grad, inner_lr);
    // First-order: d(theta'_k)/d(theta) is taken as the identity.
    auto outer = nn::loss_and_grad(adapted, batch);
    step.task_losses.push_back(outer.loss);
    step.loss += outer.loss;
    if (i == 0) {
      step.outer_grad = std::move(outer.grad);
    } else {
      auto acc = step.outer_grad.values();
      auto g = outer.grad.values();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
  }
  return step;
}

MetaStep meta_train_step(const nn::ModelParams& params, const TaskSet& tasks,
                         std::span<const PointCloud> batch, std::size_t k, double inner_lr,
                         Rng& task_rng, Rng& transform_rng) {
  if (batch.empty()) throw InvalidInput("meta step needs a non-empty batch");
  auto transform_batch = [&](std::size_t n) {
    std::vector<PointCloud> out;
    out.reserve(batch.size());
    for (const auto& cloud : batch) out.push_back(apply_transform(tasks[n], cloud, transform_rng));
    return out;
  };
  return meta_train_step(params, tasks.probabilities(), transform_batch, k, inner_lr, task_rng);
}

Validation meta_validate(const nn::ModelParams& params, const TaskSet& tasks,
                         std::span<const PointCloud> validation, Rng& transform_rng) {
  if (validation.empty()) throw InvalidInput("validation set is empty");
  Validation out;
  std::vector<PointCloud> transformed;
  for (std::size_t n = 0; n < tasks.size(); ++n) {
    transformed.clear();
    for (const auto& cloud : validation) {
      transformed.push_back(apply_transform(tasks[n], cloud, transform_rng));
    }
    const auto eval = nn::evaluate(params, transformed);
    out.losses.push_back(eval.mean_loss);
    out.accuracies.push_back(eval.accuracy());
  }
  return out;
}

void TrainConfig::validate(std::size_t task_count) const {
  if (batch_size < 1) throw InvalidInput("batch size must be >= 1");
  if (tasks_per_step < 1 || tasks_per_step > task_count) {
    throw InvalidInput("tasks per step must lie in [1, N]");
  }
  if (!(inner_lr >= 0.0)) throw InvalidInput("inner learning rate must be >= 0");
  if (!(outer_lr > 0.0)) throw InvalidInput("outer learning rate must be > 0");
  if (!(epsilon > 0.0)) throw InvalidInput("epsilon must be > 0");
  if (max_epochs < 1) throw InvalidInput("epoch cap must be >= 1");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kMetaSets:
      return "metasets";
    case TrainMode::kNone:
      return "none";
    case TrainMode::kAugment:
      return "augment";
    case TrainMode::kNoSoftSampling:
      return "no-soft-sampling";
    case TrainMode::kStaticTransform:
      return "static-transform";
  }
  return "unknown";
}

TrainMode parse_train_mode(const std::string& name) {
  for (auto mode : {TrainMode::kMetaSets, TrainMode::kNone, TrainMode::kAugment,
                    TrainMode::kNoSoftSampling, TrainMode::kStaticTransform}) {
    if (to_string(mode) == name) return mode;
  }
  throw InvalidInput("unknown training mode '" + name + "'");
}

double EpochRecord::mean_train_loss() const {
  if (train_losses.empty()) return 0.0;
  return std::accumulate(train_losses.begin(), train_losses.end(), 0.0) /
         static_cast<double>(train_losses.size());
}

TrainResult train(const TrainConfig& config, TrainMode mode, const SourceSplit& data,
                  TaskSet tasks, const StepObserver& observer) {
  config.validate(tasks.size());
  if (data.train.empty() || data.val.empty()) {
    throw InvalidInput("training needs non-empty train and validation splits");
  }
  const std::size_t n_tasks = tasks.size();
  const bool soft_sampling = mode == TrainMode::kMetaSets || mode == TrainMode::kStaticTransform;
  if (soft_sampling && n_tasks < 2) throw InvalidInput("soft-sampling needs at least two tasks");
  if (mode != TrainMode::kMetaSets) tasks.set_probabilities(uniform_probabilities(n_tasks));

  const Rng root(config.seed);
  Rng init_rng = root.fork("init");
  Rng data_rng = root.fork("data");
  Rng task_rng = root.fork("tasks");
  Rng transform_rng = root.fork("transforms");
  Rng validation_rng = root.fork("validation");
  Rng static_rng = root.fork("static");

  TrainResult result{.params = nn::init_params(data.class_count, init_rng),
                     .adam = {},
                     .history = {},
                     .converged = false,
                     .steps = 0};
  result.adam = nn::AdamState::zeros(result.params.shape());

  // Static mode: one transformed copy per (task, cloud), drawn once.
  std::vector<std::vector<PointCloud>> static_train, static_val;
  if (mode == TrainMode::kStaticTransform) {
    static_train.resize(n_tasks);
    static_val.resize(n_tasks);
    for (std::size_t n = 0; n < n_tasks; ++n) {
      for (const auto& c : data.train) static_train[n].push_back(apply_transform(tasks[n], c, static_rng));
      for (const auto& c : data.val) static_val[n].push_back(apply_transform(tasks[n], c, static_rng));
    }
  }

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord record;
    record.epoch = epoch;

    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[data_rng.uniform_index(i)]);
    }
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> indices(order.data() + begin, end - begin);
      const std::vector<PointCloud> batch = gather(data.train, indices);

      nn::Gradients grad;
      double loss = 0.0;
      switch (mode) {
        case TrainMode::kNone: {
          auto lg = nn::loss_and_grad(result.params, batch);
          grad = std::move(lg.grad);
          loss = lg.loss;
          break;
        }
        case TrainMode::kAugment: {
          const std::size_t n = task_rng.uniform_index(n_tasks);
          std::vector<PointCloud> transformed;
          transformed.reserve(batch.size());
          for (const auto& c : batch) transformed.push_back(apply_transform(tasks[n], c, transform_rng));
          auto lg = nn::loss_and_grad(result.params, transformed);
          grad = std::move(lg.grad);
          loss = lg.loss;
          break;
        }
        case TrainMode::kStaticTransform: {
          auto lookup = [&](std::size_t n) { return gather(static_train[n], indices); };
          auto step = meta_train_step(result.params, tasks.probabilities(), lookup,
                                      config.tasks_per_step, config.inner_lr, task_rng);
          grad = std::move(step.outer_grad);
          loss = step.loss;
          break;
        }
        case TrainMode::kMetaSets:
        case TrainMode::kNoSoftSampling: {
          auto step = meta_train_step(result.params, tasks, batch, config.tasks_per_step,
                                      config.inner_lr, task_rng, transform_rng);
          grad = std::move(step.outer_grad);
          loss = step.loss;
          break;
        }
      }
      auto updated = nn::adam_step(result.adam, result.params, grad, config.outer_lr);
      result.adam = std::move(updated.state);
      result.params = std::move(updated.params);
      record.train_losses.push_back(loss);
      if (observer) observer(result.steps, result.params);
      ++result.steps;
    }

    Validation val;
    if (mode == TrainMode::kStaticTransform) {
      for (std::size_t n = 0; n < n_tasks; ++n) {
        const auto eval = nn::evaluate(result.params, static_val[n]);
        val.losses.push_back(eval.mean_loss);
        val.accuracies.push_back(eval.accuracy());
      }
    } else {
      val = meta_validate(result.params, tasks, data.val, validation_rng);
    }
    if (soft_sampling) tasks.set_probabilities(update_probabilities(val.losses));

    record.val_losses = val.losses;
    record.val_accuracies = val.accuracies;
    record.probabilities = tasks.probabilities();
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(std::move(record));

    const auto& losses = result.history.back().val_losses;
    if (std::all_of(losses.begin(), losses.end(), [&](double l) { return l < config.epsilon; })) {
      result.converged = true;
      break;
    }
  }
  return result;
}

TrainResult train_baseline(const TrainConfig& config, TrainMode mode, const SourceSplit& data,
                           TaskSet tasks, const StepObserver& observer) {
  if (mode == TrainMode::kMetaSets) throw InvalidInput("use train_metasets for the full method");
  return train(config, mode, data, std::move(tasks), observer);
}

}  // namespace metasets::meta
