#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "metasets/data.hpp"
#include "metasets/meta.hpp"
#include "metasets/nn.hpp"

namespace metasets::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitParse = 3,
  kExitRuntime = 4,
};

// Everything a training run needs besides the data.
struct ExperimentConfig {
  meta::TrainConfig train;
  meta::TrainMode mode = meta::TrainMode::kMetaSets;
  meta::TaskSetMode task_mode = meta::TaskSetMode::kPaperFixed;
  meta::TaskValueRanges ranges;
};

// Flat "key = value" text (also "key value"); '#' starts a comment.
// Keys: B|batch_size, K|tasks_per_step, eta, beta, epsilon, epochs, seed,
// mode, task_params, {occlusion,density,dropping}_{min,max}.
ExperimentConfig parse_config(const std::string& text, const std::string& source);
ExperimentConfig load_config(const std::filesystem::path& path);

// One row per epoch: epoch, N validation losses, N accuracies,
// N probabilities, mean meta-training loss.
std::string format_history_csv(const std::vector<meta::EpochRecord>& history,
                               std::size_t task_count);

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  double mean_loss = 0.0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> class_total;
  std::vector<std::size_t> class_correct;

  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
  double class_accuracy(std::size_t c) const {
    return class_total[c] ? static_cast<double>(class_correct[c]) / class_total[c] : 0.0;
  }
};

EvalReport evaluate_dataset(const nn::ModelParams& params, const data::Dataset& dataset);
std::string format_eval_report(const EvalReport& report);

// Entry point shared by the executable and the tests. `args` excludes the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace metasets::cli
