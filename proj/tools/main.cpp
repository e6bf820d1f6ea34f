#include <CLI11.hpp>
#include <iostream>

#include "metaaug/harness.hpp"
#include "metaaug/training.hpp"

namespace {

using namespace metaaug;
namespace fs = std::filesystem;

int fail(ErrorCategory category, const std::string& message, std::string_view kind = {}) {
  nlohmann::json j = {{"error", to_string(category)}, {"message", message}};
  if (!kind.empty()) j["kind"] = kind;
  std::cerr << j.dump() << '\n';
  return exit_code(category);
}

void print_epoch(const CurvePoint& p, const EpochStats& s) {
  std::cerr << "epoch " << p.epoch << " loss " << format_number(p.loss) << " train " << format_number(p.train_acc)
            << " val " << format_number(p.val_acc) << " lr " << format_number(p.lr) << " (" << format_number(s.wall_seconds)
            << " s)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Episodic few-shot training with support/query/task/shot augmentation and Meta-MaxUp"};
  app.require_subcommand(1);

  SyntheticSpec synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "Write a procedurally generated dataset");
  gen->add_option("--out", synth_out, "Output directory")->required();
  gen->add_option("--train-classes", synth.train_classes)->required();
  gen->add_option("--val-classes", synth.val_classes)->required();
  gen->add_option("--test-classes", synth.test_classes)->required();
  gen->add_option("--per-class", synth.images_per_class)->required();
  gen->add_option("--channels", synth.channels)->required();
  int size = 0;
  gen->add_option("--size", size, "Image height and width")->required();
  gen->add_option("--seed", synth.seed)->required();

  std::string config_file, resume_dir;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config_file, "Run config (JSON)")->required();
  train->add_option("--resume", resume_dir, "Run directory to resume");

  std::string checkpoint_file, data_dir, split_text, shot_aug;
  TaskConfig task;
  int episodes = 1000, copies = 1;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on few-shot episodes");
  eval->add_option("--checkpoint", checkpoint_file)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--split", split_text)->required()->check(CLI::IsMember({"val", "test"}));
  eval->add_option("--way", task.way)->required();
  eval->add_option("--shot", task.shot)->required();
  eval->add_option("--query", task.query)->required();
  eval->add_option("--episodes", episodes)->required();
  eval->add_option("--shot-aug", shot_aug)->check(CLI::IsMember({"hflip", "rot90", "crop", "duplicate"}));
  eval->add_option("--copies", copies);
  eval->add_option("--seed", eval_seed)->required();

  std::string grid_file;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate one model per mode/technique cell");
  ablate->add_option("--config", config_file)->required();
  ablate->add_option("--grid", grid_file)->required();

  auto* sweep = app.add_subcommand("sweep-maxup", "Train and evaluate one model per (pool, m) cell");
  sweep->add_option("--config", config_file)->required();
  sweep->add_option("--grid", grid_file)->required();

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Rewrite curves.csv and summary.json of a run");
  report->add_option("--run", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(ErrorCategory::config, e.what());
  }

  try {
    if (*gen) {
      synth.height = synth.width = size;
      const FewShotDataset ds = generate_synthetic(synth);
      write_dataset(ds, synth_out);
      std::cout << nlohmann::json{{"out", synth_out}, {"classes", ds.size()}, {"geometry", ds.geometry().str()}}.dump()
                << '\n';
    } else if (*train) {
      RunConfig config = load_run_config(config_file);
      TrainingOptions opts;
      if (!resume_dir.empty()) {
        config.output = resume_dir;
        opts.resume = true;
      }
      opts.on_epoch = print_epoch;
      const fs::path dir = run_training(config, opts);
      std::cout << to_json(emit_curves(dir)).dump() << '\n';
    } else if (*eval) {
      task.split = parse_split(split_text);
      const Checkpoint c = load_checkpoint(checkpoint_file);
      const FewShotDataset ds = load_dataset(data_dir);
      EvalOptions opts{task, episodes, parse_shot_aug(shot_aug), copies, eval_seed, 1, Purpose::eval_episode};
      std::cout << to_json(evaluate_checkpoint(c, ds, opts)).dump() << '\n';
    } else if (*ablate) {
      std::cout << ablate_modes(load_run_config(config_file), read_json_file(grid_file)).csv();
    } else if (*sweep) {
      std::cout << sweep_maxup(load_run_config(config_file), read_json_file(grid_file)).csv();
    } else if (*report) {
      std::cout << to_json(emit_curves(run_dir)).dump() << '\n';
    }
  } catch (const DatasetError& e) {
    return fail(e.category(), e.what(), to_string(e.errc()));
  } catch (const Error& e) {
    return fail(e.category(), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(ErrorCategory::io, e.what());
  } catch (const std::exception& e) {
    return fail(ErrorCategory::data, e.what());
  }
  return 0;
}
