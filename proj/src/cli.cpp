#include "metasets/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "metasets/checkpoint.hpp"
#include "metasets/error.hpp"
#include "metasets/io.hpp"

namespace metasets::cli {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string number(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& value, const std::string& source, std::size_t line) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ParseError(source, line, "bad numeric value '" + value + "'");
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<PointCloud> clouds_of(const data::Dataset& d) { return d.items; }

json task_json(const meta::TaskSet& tasks) {
  json out = json::array();
  for (std::size_t n = 0; n < tasks.size(); ++n) {
    out.push_back({{"kind", to_string(tasks[n].kind())}, {"value", tasks[n].value()}});
  }
  return out;
}

struct GenerateArgs {
  std::size_t classes = 5;
  std::vector<std::string> families;
  std::size_t per_class = 200;
  std::size_t points = 1024;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  std::vector<data::ShapeFamily> families;
  if (!a.families.empty()) {
    for (const auto& name : a.families) {
      families.push_back(data::ShapeFamily::defaults(data::parse_shape_kind(name)));
    }
  } else {
    const auto all = data::default_families();
    if (a.classes < 2 || a.classes > all.size()) {
      throw InvalidInput("--classes must lie in [2, " + std::to_string(all.size()) + "]");
    }
    families.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(a.classes));
  }
  const auto dataset = data::generate_synthetic_dataset(families, a.per_class, a.points, a.seed);
  io::save_dataset(dataset, a.out);
  out << "wrote " << dataset.items.size() << " clouds (" << dataset.class_count() << " classes x "
      << a.per_class << ", " << a.points << " points) to " << a.out << "\n";
  for (std::size_t c = 0; c < dataset.class_count(); ++c) {
    out << "  " << dataset.class_names[c] << ": " << dataset.class_histogram()[c] << "\n";
  }
  return kExitOk;
}

struct TransformArgs {
  std::string input;
  std::string kind;
  std::optional<double> g, x, w;
  std::uint64_t seed = 0;
  std::string out;
  bool normalize = false;
};

int cmd_transform(const TransformArgs& a, std::ostream& out) {
  const TransformKind kind = parse_transform_kind(a.kind);
  double value = 0.0;
  auto need = [&](const std::optional<double>& v, const char* flag) {
    if (!v) throw InvalidInput(std::string("--kind ") + a.kind + " requires " + flag);
    return *v;
  };
  switch (kind) {
    case TransformKind::kDensity:
      value = need(a.g, "--g");
      break;
    case TransformKind::kDropping:
      value = need(a.x, "--x");
      break;
    case TransformKind::kOcclusion:
      value = need(a.w, "--w");
      break;
    case TransformKind::kIdentity:
      break;
  }
  const TransformSpec spec = TransformSpec::make(kind, value);
  const std::string provenance = "kind=" + to_string(kind) + " param=" + number(value) +
                                 " seed=" + std::to_string(a.seed) + "\n";
  Rng rng(a.seed);
  auto prepare = [&](const PointCloud& c) { return a.normalize ? normalize_unit_ball(c) : c; };

  if (fs::is_regular_file(a.input) && fs::path(a.input).filename() != io::kManifestName) {
    const PointCloud cloud = io::load_cloud(a.input);
    const PointCloud result = apply_transform(spec, prepare(cloud), rng);
    io::save_cloud(a.out, result);
    write_text(a.out + ".provenance", provenance);
    out << spec.describe() << ": " << cloud.size() << " -> " << result.size() << " points\n";
    return kExitOk;
  }
  data::Dataset dataset = io::load_dataset(a.input);
  std::size_t before = 0, after = 0;
  for (auto& item : dataset.items) {
    before += item.size();
    item = apply_transform(spec, prepare(item), rng);
    after += item.size();
  }
  io::save_dataset(dataset, a.out);
  write_text(fs::path(a.out) / "provenance.txt", provenance);
  out << spec.describe() << ": " << dataset.items.size() << " clouds, " << before << " -> "
      << after << " points\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string mode;
  std::string task_params;
  std::uint64_t seed = 0;
  std::string out;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  cfg.train.seed = a.seed;
  if (!a.mode.empty()) cfg.mode = meta::parse_train_mode(a.mode);
  if (!a.task_params.empty()) cfg.task_mode = meta::parse_task_set_mode(a.task_params);
  if (a.epochs) cfg.train.max_epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;

  const data::Dataset source = io::load_dataset(a.manifest);
  const Rng root(a.seed);
  auto [train_set, val_set] = data::split_train_val(source, root.fork("split").seed());
  Rng task_rng = root.fork("task-set");
  meta::TaskSet tasks = meta::build_task_set(cfg.ranges, cfg.task_mode, task_rng);

  const meta::SourceSplit split{.train = clouds_of(train_set),
                                .val = clouds_of(val_set),
                                .class_count = source.class_count()};
  const meta::TrainResult result = cfg.mode == meta::TrainMode::kMetaSets
                                       ? meta::train_metasets(cfg.train, split, tasks)
                                       : meta::train_baseline(cfg.train, cfg.mode, split, tasks);

  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / "checkpoint.bin", {.params = result.params, .adam = result.adam});
  write_text(fs::path(a.out) / "history.csv", format_history_csv(result.history, tasks.size()));

  const auto train_eval = nn::evaluate(result.params, split.train);
  const auto val_eval = nn::evaluate(result.params, split.val);
  json summary = {
      {"mode", to_string(cfg.mode)},
      {"task_params", to_string(cfg.task_mode)},
      {"seed", a.seed},
      {"status", result.converged ? "converged" : "not converged"},
      {"converged", result.converged},
      {"epochs", result.history.size()},
      {"steps", result.steps},
      {"class_names", source.class_names},
      {"train_size", split.train.size()},
      {"val_size", split.val.size()},
      {"tasks", task_json(tasks)},
      {"final_probabilities", result.history.back().probabilities},
      {"final_val_losses", result.history.back().val_losses},
      {"train_accuracy", train_eval.accuracy()},
      {"train_loss", train_eval.mean_loss},
      {"val_accuracy", val_eval.accuracy()},
      {"val_loss", val_eval.mean_loss},
      {"config",
       {{"B", cfg.train.batch_size},
        {"K", cfg.train.tasks_per_step},
        {"eta", cfg.train.inner_lr},
        {"beta", cfg.train.outer_lr},
        {"epsilon", cfg.train.epsilon},
        {"epochs", cfg.train.max_epochs}}},
  };
  write_text(fs::path(a.out) / "summary.json", summary.dump(2) + "\n");

  out << to_string(cfg.mode) << ": " << result.history.size() << " epochs, " << result.steps
      << " steps, " << (result.converged ? "converged" : "not converged") << "\n"
      << "  train accuracy " << std::fixed << std::setprecision(4) << train_eval.accuracy()
      << ", val accuracy " << val_eval.accuracy() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::optional<double> occlusion_w;
  std::optional<double> dropping_x;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  data::Dataset dataset = io::load_dataset(a.manifest);
  if (dataset.class_count() != ckpt.params.shape().class_count) {
    throw InvalidInput("checkpoint has " + std::to_string(ckpt.params.shape().class_count) +
                       " classes but the dataset has " + std::to_string(dataset.class_count()));
  }
  if (a.occlusion_w || a.dropping_x) {
    dataset = data::build_target_domain(
        dataset, {.occlusion_grid = a.occlusion_w, .drop_percent = a.dropping_x}, {}, a.seed);
  }
  const EvalReport report = evaluate_dataset(ckpt.params, dataset);
  out << format_eval_report(report);
  if (!a.out.empty()) {
    json j = {{"accuracy", report.accuracy()},
              {"mean_loss", report.mean_loss},
              {"total", report.total},
              {"correct", report.correct}};
    json per_class = json::array();
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
      per_class.push_back({{"class", report.class_names[c]},
                           {"total", report.class_total[c]},
                           {"correct", report.class_correct[c]},
                           {"accuracy", report.class_accuracy(c)}});
    }
    j["per_class"] = per_class;
    write_text(a.out, j.dump(2) + "\n");
  }
  return kExitOk;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  std::istringstream lines(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(lines, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    std::string key, value;
    if (const auto eq = line.find('='); eq != std::string::npos) {
      key = trim(line.substr(0, eq));
      value = trim(line.substr(eq + 1));
    } else if (const auto sp = line.find_first_of(" \t"); sp != std::string::npos) {
      key = trim(line.substr(0, sp));
      value = trim(line.substr(sp + 1));
    } else {
      throw ParseError(source, line_no, "expected 'key = value'");
    }
    if (value.empty()) throw ParseError(source, line_no, "missing value for '" + key + "'");

    try {
      if (key == "B" || key == "batch_size") {
        cfg.train.batch_size = parse_value<std::size_t>(value, source, line_no);
      } else if (key == "K" || key == "tasks_per_step") {
        cfg.train.tasks_per_step = parse_value<std::size_t>(value, source, line_no);
      } else if (key == "eta") {
        cfg.train.inner_lr = parse_value<double>(value, source, line_no);
      } else if (key == "beta") {
        cfg.train.outer_lr = parse_value<double>(value, source, line_no);
      } else if (key == "epsilon") {
        cfg.train.epsilon = value == "inf" ? std::numeric_limits<double>::infinity()
                                           : parse_value<double>(value, source, line_no);
      } else if (key == "epochs") {
        cfg.train.max_epochs = parse_value<std::size_t>(value, source, line_no);
      } else if (key == "seed") {
        cfg.train.seed = parse_value<std::uint64_t>(value, source, line_no);
      } else if (key == "mode") {
        cfg.mode = meta::parse_train_mode(value);
      } else if (key == "task_params") {
        cfg.task_mode = meta::parse_task_set_mode(value);
      } else if (key == "occlusion_min") {
        cfg.ranges.occlusion.lo = parse_value<double>(value, source, line_no);
      } else if (key == "occlusion_max") {
        cfg.ranges.occlusion.hi = parse_value<double>(value, source, line_no);
      } else if (key == "density_min") {
        cfg.ranges.density.lo = parse_value<double>(value, source, line_no);
      } else if (key == "density_max") {
        cfg.ranges.density.hi = parse_value<double>(value, source, line_no);
      } else if (key == "dropping_min") {
        cfg.ranges.dropping.lo = parse_value<double>(value, source, line_no);
      } else if (key == "dropping_max") {
        cfg.ranges.dropping.hi = parse_value<double>(value, source, line_no);
      } else {
        throw ParseError(source, line_no, "unknown key '" + key + "'");
      }
    } catch (const InvalidInput& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string format_history_csv(const std::vector<meta::EpochRecord>& history,
                               std::size_t task_count) {
  std::string out = "epoch";
  for (const char* prefix : {"val_loss_", "val_acc_", "prob_"}) {
    for (std::size_t n = 0; n < task_count; ++n) out += "," + std::string(prefix) + std::to_string(n);
  }
  out += ",train_loss\n";
  for (const auto& rec : history) {
    if (rec.val_losses.size() != task_count || rec.val_accuracies.size() != task_count ||
        rec.probabilities.size() != task_count) {
      throw InvalidInput("epoch record does not match the task count");
    }
    out += std::to_string(rec.epoch);
    for (const auto* column : {&rec.val_losses, &rec.val_accuracies, &rec.probabilities}) {
      for (double v : *column) out += "," + number(v);
    }
    out += "," + number(rec.mean_train_loss()) + "\n";
  }
  return out;
}

EvalReport evaluate_dataset(const nn::ModelParams& params, const data::Dataset& dataset) {
  if (dataset.items.empty()) throw InvalidInput("cannot evaluate an empty dataset");
  const auto eval = nn::evaluate(params, dataset.items);
  EvalReport report;
  report.total = dataset.items.size();
  report.correct = eval.correct;
  report.mean_loss = eval.mean_loss;
  report.class_names = dataset.class_names;
  report.class_total.assign(dataset.class_count(), 0);
  report.class_correct.assign(dataset.class_count(), 0);
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    const auto c = static_cast<std::size_t>(dataset.items[i].label);
    ++report.class_total[c];
    if (eval.predictions[i] == dataset.items[i].label) ++report.class_correct[c];
  }
  return report;
}

std::string format_eval_report(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "| class | n | accuracy (%) |\n|---|---|---|\n";
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    out << "| " << report.class_names[c] << " | " << report.class_total[c] << " | "
        << 100.0 * report.class_accuracy(c) << " |\n";
  }
  out << "| overall | " << report.total << " | " << 100.0 * report.accuracy() << " |\n";
  out << std::setprecision(6) << "mean loss " << report.mean_loss << "\n";
  return out.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meta-learning on transformed point sets", "metasets"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic shape dataset");
  generate->add_option("--classes", gen.classes, "Number of shape families (2-5)");
  generate->add_option("--families", gen.families, "Explicit family list (sphere cube cylinder cone torus)");
  generate->add_option("--per-class", gen.per_class, "Clouds per class");
  generate->add_option("--points", gen.points, "Points per cloud");
  generate->add_option("--seed", gen.seed, "Random seed")->required();
  generate->add_option("--out", gen.out, "Output directory")->required();

  TransformArgs tr;
  auto* transform = app.add_subcommand("transform", "Apply one point-set transformation");
  transform->add_option("--input", tr.input, "Cloud file, manifest or dataset directory")->required();
  transform->add_option("--kind", tr.kind, "density | dropping | occlusion | identity")->required();
  transform->add_option("--g", tr.g, "Density gate (> 1)");
  transform->add_option("--x", tr.x, "Drop percentage (0, 100)");
  transform->add_option("--w", tr.w, "Occlusion grid size (> 0)");
  transform->add_option("--seed", tr.seed, "Random seed")->required();
  transform->add_option("--out", tr.out, "Output file or directory")->required();
  transform->add_flag("--normalize", tr.normalize, "Unit-ball normalize before transforming");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train with MetaSets or a baseline");
  train->add_option("--config", ta.config, "Key-value config file");
  train->add_option("--manifest", ta.manifest, "Source dataset")->required();
  train->add_option("--mode", ta.mode, "metasets | none | augment | no-soft-sampling | static-transform");
  train->add_option("--task-params", ta.task_params, "paper | stratified");
  train->add_option("--seed", ta.seed, "Random seed")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--epochs", ta.epochs, "Override the epoch cap");
  train->add_option("--batch-size", ta.batch_size, "Override the batch size");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--manifest", ea.manifest, "Dataset to evaluate")->required();
  eval->add_option("--occlusion-w", ea.occlusion_w, "Shift the dataset by occlusion first");
  eval->add_option("--dropping-x", ea.dropping_x, "Shift the dataset by dropping");
  eval->add_option("--seed", ea.seed, "Seed for the shift");
  eval->add_option("--out", ea.out, "Write a JSON report here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(gen, out);
    if (*transform) return cmd_transform(tr, out);
    if (*train) return cmd_train(ta, out);
    if (*eval) return cmd_eval(ea, out);
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const InvalidInput& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace metasets::cli
