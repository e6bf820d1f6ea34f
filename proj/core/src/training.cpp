#include "metaaug/training.hpp"

#include <cstdio>
#include <regex>

#include "metaaug/harness.hpp"

namespace metaaug {

namespace fs = std::filesystem;

fs::path checkpoint_path(const fs::path& run_dir, int completed_epochs) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03d.fsck", completed_epochs);
  return run_dir / "checkpoints" / name;
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(epoch_(\d+)\.fsck)");
  std::optional<fs::path> best;
  int best_epoch = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int epoch = std::stoi(m[1].str());
    if (epoch > best_epoch) {
      best_epoch = epoch;
      best = entry.path();
    }
  }
  return best;
}

void check_dataset_for(const RunConfig& config, const FewShotDataset& dataset) {
  ArchConfig arch{dataset.geometry(), config.widths};
  arch.validate();
  check_stats(dataset.stats(), dataset.geometry().channels);
  const int per_class_train = config.effective_train_shot() + config.task.query;
  const int per_class_eval = config.task.shot + config.task.query;
  const auto check_split = [&](Split split, int need) {
    const auto classes = dataset.class_indices(split);
    if (static_cast<int>(classes.size()) < config.task.way)
      throw DataError("split " + std::string(to_string(split)) + " has " + std::to_string(classes.size()) +
                      " classes, a " + std::to_string(config.task.way) + "-way task needs more");
    for (int c : classes)
      if (static_cast<int>(dataset.cls(c).images.size()) < need)
        throw DataError("class '" + dataset.cls(c).id + "' has " + std::to_string(dataset.cls(c).images.size()) +
                        " images, tasks need " + std::to_string(need));
  };
  check_split(Split::train, std::max(per_class_train, per_class_eval));
  check_split(config.task.split, per_class_eval);
}

Checkpoint initial_checkpoint(const RunConfig& config, const FewShotDataset& dataset) {
  const ArchConfig arch{dataset.geometry(), config.widths};
  Checkpoint c;
  if (config.init_checkpoint) {
    c = load_checkpoint(*config.init_checkpoint);
    if (!(c.arch() == arch)) throw ConfigError("init checkpoint architecture does not match the run config");
    c.velocity.reset();
    c.curve.clear();
  } else {
    c.params = ModelParams<float>::initialize(arch, RngStream(config.seed, 0, 0, Purpose::init));
    c.params.conv_weight(c.params.layers() - 1) *= static_cast<float>(config.init_gain);
  }
  c.head = config.head;
  c.stats = dataset.stats();
  c.precision = config.precision;
  c.seed = config.seed;
  c.epoch = 0;
  c.extra = nlohmann::json::object();
  return c;
}

namespace {

void write_run_files(const fs::path& dir, const std::vector<CurvePoint>& curve) {
  write_text(dir / "curves.csv", curves_csv(curve));
  write_text(dir / "summary.json", to_json(summarize_curve(curve)).dump(2) + "\n");
}

template <class S>
void train_loop(const RunConfig& config, const FewShotDataset& dataset, Checkpoint state,
                const TrainingOptions& options, const fs::path& dir) {
  ModelParams<S> params = state.params.template cast<S>();
  SgdState<S> optimizer;
  if (state.velocity) optimizer.velocity = state.velocity->template cast<S>();

  TaskContext ctx;
  ctx.dataset = &dataset;
  ctx.stats = state.stats;
  ctx.task = config.train_task();
  ctx.head = config.head;
  ctx.maxup = {config.pool, config.m, config.batch, config.episodes_per_epoch, config.stack_baseline, config.augment};
  ctx.seed = config.seed;

  EvalOptions val{config.task, config.val_episodes, std::nullopt, 1, config.seed, config.threads,
                  Purpose::eval_episode};
  TaskConfig train_split_task = config.task;
  train_split_task.split = Split::train;
  EvalOptions train_eval{train_split_task, config.train_eval_episodes, std::nullopt, 1, config.seed,
                         config.threads, Purpose::train_eval};

  for (int e = state.epoch; e < config.epochs; ++e) {
    const double lr = config.schedule.rate(e);
    const EpochStats stats =
        train_epoch(params, optimizer, ctx, e, lr, config.sgd, config.threads, options.observer);
    const EvalReport val_report = evaluate(params, dataset, ctx.stats, config.head, val);
    const EvalReport train_report = evaluate(params, dataset, ctx.stats, config.head, train_eval);
    const CurvePoint point{e, train_report.mean, val_report.mean, stats.mean_loss, lr};
    state.curve.push_back(point);
    state.epoch = e + 1;
    state.params.values() = params.values().template cast<float>();
    state.velocity = optimizer.velocity.template cast<float>();
    save_checkpoint(state, checkpoint_path(dir, state.epoch));
    write_run_files(dir, state.curve);
    if (options.on_epoch) options.on_epoch(point, stats);
    if (options.stop_after_epoch && state.epoch >= *options.stop_after_epoch && state.epoch < config.epochs) return;
  }
  save_checkpoint(state, dir / "final.fsck");
  write_run_files(dir, state.curve);
}

}  // namespace

fs::path run_training(const RunConfig& config, const TrainingOptions& options) {
  config.validate();
  const fs::path dir = config.output;
  const FewShotDataset dataset = materialize_dataset(config);
  check_dataset_for(config, dataset);

  Checkpoint state = initial_checkpoint(config, dataset);
  const auto latest = latest_checkpoint(dir);
  if (options.resume) {
    if (!latest) throw Error(ErrorCategory::io, "no checkpoint to resume from in " + dir.string());
    Checkpoint saved = load_checkpoint(*latest);
    if (!(saved.arch() == state.arch()) || saved.seed != config.seed || saved.head.kind != config.head.kind ||
        saved.precision != config.precision)
      throw ConfigError("checkpoint " + latest->string() + " does not belong to this run config");
    if (saved.epoch > config.epochs) throw ConfigError("checkpoint is past the configured epoch count");
    state = std::move(saved);
  } else if (latest || fs::exists(dir / "final.fsck")) {
    throw ConfigError("output directory " + dir.string() + " already holds a run; use resume");
  }

  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create " + (dir / "checkpoints").string() + ": " + ec.message());
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");

  if (config.precision == Precision::f32)
    train_loop<float>(config, dataset, std::move(state), options, dir);
  else
    train_loop<double>(config, dataset, std::move(state), options, dir);
  return dir;
}

}  // namespace metaaug
