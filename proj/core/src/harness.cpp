#include "metaaug/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "metaaug/parallel.hpp"
#include "metaaug/training.hpp"

namespace metaaug {

namespace fs = std::filesystem;
using nlohmann::json;

EvalReport summarize_accuracies(std::vector<double> accuracies) {
  const std::size_t n = accuracies.size();
  if (n < 2) throw ConfigError("an evaluation report needs at least 2 episodes");
  double sum = 0.0;
  for (double a : accuracies) {
    if (!(a >= 0.0 && a <= 1.0)) throw DataError("episode accuracy outside [0, 1]");
    sum += a;
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double a : accuracies) ss += (a - mean) * (a - mean);
  const double stddev = std::sqrt(ss / static_cast<double>(n - 1));
  EvalReport r;
  r.episodes = static_cast<int>(n);
  r.mean = 100.0 * mean;
  r.radius = 100.0 * stddev / std::sqrt(static_cast<double>(n));
  r.accuracies = std::move(accuracies);
  return r;
}

std::optional<Technique> parse_shot_aug(std::string_view text) {
  if (text.empty() || text == "none" || text == "identity") return std::nullopt;
  if (text == "hflip") return Technique::hflip;
  if (text == "rot90") return Technique::rotation;
  if (text == "crop") return Technique::random_crop;
  if (text == "duplicate") return Technique::duplicate;
  throw ConfigError("unknown shot augmentation '" + std::string(text) + "' (hflip|rot90|crop|duplicate)");
}

std::string shot_aug_name(std::optional<Technique> technique) {
  if (!technique) return "none";
  switch (*technique) {
    case Technique::hflip: return "hflip";
    case Technique::rotation: return "rot90";
    case Technique::random_crop: return "crop";
    case Technique::duplicate: return "duplicate";
    default: return std::string(to_string(*technique));
  }
}

Episode evaluation_episode(const FewShotDataset& dataset, const ClassPool& pool, const EvalOptions& options, int e) {
  return sample_episode(dataset, pool, options.task,
                        RngStream(options.seed, 0, static_cast<std::uint64_t>(e), options.purpose));
}

namespace {

std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace

template <class S>
EvalReport evaluate(const ModelParams<S>& params, const FewShotDataset& dataset, const ChannelStats& stats,
                    const HeadConfig& head, const EvalOptions& options) {
  options.task.validate();
  if (options.episodes < 2) throw ConfigError("evaluation needs at least 2 episodes");
  if (options.copies < 0) throw ConfigError("copies must be non-negative");
  const ClassPool pool = build_class_pool(dataset, options.task.split, std::nullopt,
                                          RngStream(options.seed, 0, 0, Purpose::class_pool));
  std::vector<double> accuracies(static_cast<std::size_t>(options.episodes));
  parallel_for(options.episodes, options.threads, [&](int e) {
    Episode ep = evaluation_episode(dataset, pool, options, e);
    if (options.shot_aug && options.copies > 0) {
      RngStream rng(options.seed, 0, static_cast<std::uint64_t>(e), Purpose::eval_shot_aug);
      append_shot_copies(ep, *options.shot_aug, options.copies, rng);
    }
    const RngStream unused(options.seed, 0, static_cast<std::uint64_t>(e), options.purpose, 1);
    accuracies[static_cast<std::size_t>(e)] = episode_loss(params, head, ep, stats, unused).accuracy;
  });
  EvalReport report = summarize_accuracies(std::move(accuracies));
  report.shot_aug = shot_aug_name(options.shot_aug);
  report.copies = options.shot_aug ? options.copies : 0;
  std::ostringstream key;
  key << options.task.way << '/' << options.task.shot << '/' << options.task.query << '/'
      << to_string(options.task.split) << '/' << options.episodes << '/' << report.shot_aug << '/' << report.copies
      << '/' << options.seed << '/' << to_string(head.kind) << '/' << head.ridge_lambda << '/'
      << params_fingerprint(params.template cast<float>());
  report.fingerprint = fnv_hex(key.str());
  return report;
}

template EvalReport evaluate(const ModelParams<float>&, const FewShotDataset&, const ChannelStats&,
                             const HeadConfig&, const EvalOptions&);
template EvalReport evaluate(const ModelParams<double>&, const FewShotDataset&, const ChannelStats&,
                             const HeadConfig&, const EvalOptions&);

EvalReport evaluate_checkpoint(const Checkpoint& c, const FewShotDataset& dataset, const EvalOptions& options) {
  if (!(c.arch().input == dataset.geometry()))
    throw GeometryError("checkpoint expects " + c.arch().input.str() + " images, dataset has " +
                        dataset.geometry().str());
  if (c.precision == Precision::f64)
    return evaluate(c.params.cast<double>(), dataset, c.stats, c.head, options);
  return evaluate(c.params, dataset, c.stats, c.head, options);
}

json to_json(const EvalReport& r, bool with_episodes) {
  json j = {{"episodes", r.episodes}, {"accuracy", r.mean},   {"radius", r.radius},
            {"shot_aug", r.shot_aug}, {"copies", r.copies},   {"fingerprint", r.fingerprint}};
  if (with_episodes) j["per_episode"] = r.accuracies;
  return j;
}

RunSummary summarize_curve(const std::vector<CurvePoint>& curve) {
  if (curve.empty()) throw DataError("run has no completed epochs");
  RunSummary s;
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i].val_acc > curve[best].val_acc) best = i;
  s.best_epoch = curve[best].epoch;
  s.best_val_acc = curve[best].val_acc;
  s.gap = curve[best].train_acc - curve[best].val_acc;
  s.final_train_acc = curve.back().train_acc;
  s.final_val_acc = curve.back().val_acc;
  s.final_gap = s.final_train_acc - s.final_val_acc;
  s.epochs = static_cast<int>(curve.size());
  return s;
}

json to_json(const RunSummary& s) {
  return {{"best_epoch", s.best_epoch},           {"best_val_acc", s.best_val_acc},
          {"final_train_acc", s.final_train_acc}, {"final_val_acc", s.final_val_acc},
          {"gap", s.gap},                         {"final_gap", s.final_gap},
          {"epochs", s.epochs}};
}

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

std::string curves_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "epoch,train_acc,val_acc,loss,lr\n";
  for (const auto& p : curve)
    out += std::to_string(p.epoch) + ',' + format_number(p.train_acc) + ',' + format_number(p.val_acc) + ',' +
           format_number(p.loss) + ',' + format_number(p.lr) + '\n';
  return out;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCategory::io, "cannot write " + file.string());
  out << text;
  if (!out) throw Error(ErrorCategory::io, "short write to " + file.string());
}

RunSummary emit_curves(const fs::path& run_dir) {
  std::optional<fs::path> source;
  if (fs::exists(run_dir / "final.fsck"))
    source = run_dir / "final.fsck";
  else
    source = latest_checkpoint(run_dir);
  if (!source) throw Error(ErrorCategory::io, "no checkpoint found in run directory " + run_dir.string());
  const Checkpoint c = load_checkpoint(*source);
  const RunSummary s = summarize_curve(c.curve);
  write_text(run_dir / "curves.csv", curves_csv(c.curve));
  write_text(run_dir / "summary.json", to_json(s).dump(2) + "\n");
  return s;
}

std::string ResultTable::csv() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      const std::string& c = cells[i];
      if (c.find_first_of(",\"\n") == std::string::npos) {
        out += c;
      } else {
        out += '"';
        for (char ch : c) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
        out += '"';
      }
    }
    return out + '\n';
  };
  std::string out = line(header);
  for (const auto& r : rows) out += line(r);
  return out;
}

namespace {

struct GridCommon {
  std::vector<int> shots{1, 5};
  Split split = Split::test;
  int episodes = 1000;
};

GridCommon parse_common(const json& grid) {
  GridCommon g;
  try {
    if (grid.contains("shots")) g.shots = grid.at("shots").get<std::vector<int>>();
    if (grid.contains("split")) g.split = parse_split(grid.at("split").get<std::string>());
    if (grid.contains("episodes")) g.episodes = grid.at("episodes").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed grid: ") + e.what());
  }
  if (g.shots.empty()) throw ConfigError("grid needs at least one shot");
  if (g.split == Split::train) throw ConfigError("grid split must be val or test");
  if (g.episodes < 2) throw ConfigError("grid episodes must be >= 2");
  return g;
}

std::string slug(std::size_t index, const std::string& name) {
  char prefix[8];
  std::snprintf(prefix, sizeof prefix, "%02zu_", index);
  std::string out = prefix;
  for (char ch : name) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return out;
}

// Trains (or finishes) a cell run and returns its final checkpoint.
Checkpoint train_cell(const RunConfig& cell) {
  if (!fs::exists(cell.output / "final.fsck")) {
    TrainingOptions opts;
    opts.resume = latest_checkpoint(cell.output).has_value();
    run_training(cell, opts);
  }
  return load_checkpoint(cell.output / "final.fsck");
}

struct SharedInit {
  fs::path path;
  std::string fingerprint;
};

SharedInit shared_init(const RunConfig& config, const FewShotDataset& dataset) {
  fs::create_directories(config.output);
  const fs::path path = config.output / "init.fsck";
  const Checkpoint init = initial_checkpoint(config, dataset);
  save_checkpoint(init, path);
  return {path, params_fingerprint(init.params)};
}

std::vector<std::string> eval_columns(const RunConfig& base, const GridCommon& g, const FewShotDataset& dataset,
                                      RunConfig cell, const fs::path& dir) {
  std::vector<std::string> cols;
  for (int shot : g.shots) {
    cell.task.shot = shot;
    cell.train_shot = shot;
    cell.output = dir / ("shot_" + std::to_string(shot));
    const Checkpoint final_ckpt = train_cell(cell);
    TaskConfig task = base.task;
    task.shot = shot;
    task.split = g.split;
    const EvalReport r = evaluate_checkpoint(final_ckpt, dataset,
                                             {task, g.episodes, std::nullopt, 1, base.seed, base.threads,
                                              Purpose::eval_episode});
    cols.push_back(format_number(r.mean));
    cols.push_back(format_number(r.radius));
  }
  return cols;
}

std::vector<std::string> shot_header(const GridCommon& g) {
  std::vector<std::string> h;
  for (int shot : g.shots) {
    h.push_back(std::to_string(shot) + "shot");
    h.push_back(std::to_string(shot) + "shot_radius");
  }
  return h;
}

}  // namespace

ResultTable ablate_modes(const RunConfig& config, const json& grid) {
  const GridCommon g = parse_common(grid);
  struct Cell {
    std::string mode, technique;
    AugmentationDescriptor descriptor;
  };
  std::vector<Cell> cells{{"baseline", "crop+hflip+jitter", baseline_descriptor()}};
  try {
    for (const auto& c : grid.at("cells")) {
      if (c.contains("descriptor")) {
        cells.push_back({"combo", c.at("name").get<std::string>(), c.at("descriptor").get<AugmentationDescriptor>()});
      } else {
        AugmentEntry e = c.get<AugmentEntry>();
        cells.push_back({std::string(to_string(e.mode)), std::string(to_string(e.technique)),
                         AugmentationDescriptor({e})});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed ablation grid: ") + e.what());
  }

  const FewShotDataset dataset = materialize_dataset(config);
  check_dataset_for(config, dataset);
  const SharedInit init = shared_init(config, dataset);

  ResultTable table;
  table.header = {"mode", "technique", "descriptor"};
  for (auto& h : shot_header(g)) table.header.push_back(h);
  table.header.push_back("init_fingerprint");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    RunConfig cell = config;
    cell.pool = {cells[i].descriptor.name(), {cells[i].descriptor}};
    cell.m = 1;
    cell.init_checkpoint = init.path;
    std::vector<std::string> row{cells[i].mode, cells[i].technique, cells[i].descriptor.name()};
    for (auto& v : eval_columns(config, g, dataset, cell, config.output / "ablate" / slug(i, cells[i].descriptor.name())))
      row.push_back(v);
    row.push_back(init.fingerprint);
    table.rows.push_back(std::move(row));
  }
  write_text(config.output / "ablation.csv", table.csv());
  return table;
}

ResultTable sweep_maxup(const RunConfig& config, const json& grid) {
  const GridCommon g = parse_common(grid);
  std::vector<AugmentationPool> pools;
  std::vector<int> ms;
  try {
    for (const auto& p : grid.at("pools")) pools.push_back(parse_pool(p));
    ms = grid.at("m").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed sweep grid: ") + e.what());
  }
  if (pools.empty() || ms.empty()) throw ConfigError("sweep grid needs at least one pool and one m");

  const FewShotDataset dataset = materialize_dataset(config);
  check_dataset_for(config, dataset);
  const SharedInit init = shared_init(config, dataset);

  ResultTable table;
  table.header = {"pool", "pool_size", "m"};
  for (auto& h : shot_header(g)) table.header.push_back(h);
  table.header.push_back("init_fingerprint");
  std::size_t index = 0;
  for (const auto& pool : pools)
    for (int m : ms) {
      RunConfig cell = config;
      cell.pool = pool;
      cell.m = m;
      cell.init_checkpoint = init.path;
      cell.validate();
      std::vector<std::string> row{pool.name, std::to_string(pool.size()), std::to_string(m)};
      for (auto& v : eval_columns(config, g, dataset, cell,
                                  config.output / "sweep" / slug(index++, pool.name + "_m" + std::to_string(m))))
        row.push_back(v);
      row.push_back(init.fingerprint);
      table.rows.push_back(std::move(row));
    }
  write_text(config.output / "sweep.csv", table.csv());
  return table;
}

}  // namespace metaaug
