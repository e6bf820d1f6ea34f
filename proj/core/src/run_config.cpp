#include "metaaug/run_config.hpp"

#include <cmath>
#include <fstream>

namespace metaaug {

namespace {

using nlohmann::json;

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

LrSchedule parse_schedule(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "desk") return LrSchedule::desk_default();
    if (name == "paper") return LrSchedule::paper();
    throw ConfigError("unknown schedule '" + name + "'");
  }
  if (!j.is_array()) throw ConfigError("schedule must be a name or a list of [epoch, rate] pairs");
  std::vector<std::pair<int, double>> steps;
  for (const auto& s : j) {
    if (!s.is_array() || s.size() != 2) throw ConfigError("schedule entries are [epoch, rate] pairs");
    steps.emplace_back(s[0].get<int>(), s[1].get<double>());
  }
  return LrSchedule(std::move(steps));
}

}  // namespace

TaskConfig RunConfig::train_task() const {
  TaskConfig t = task;
  t.shot = effective_train_shot();
  t.split = Split::train;
  return t;
}

void RunConfig::validate() const {
  if (dataset_path.has_value() == synthetic.has_value())
    throw ConfigError("config needs exactly one of dataset.path or dataset.synthetic");
  task.validate();
  train_task().validate();
  if (task.split == Split::train) throw ConfigError("evaluation split must be val or test");
  if (!(head.ridge_lambda > 0.0)) throw ConfigError("ridge_lambda must be positive");
  pool.validate();
  if (m < 1 || m > kMaxCandidates)
    throw ConfigError("m must be in [1, " + std::to_string(kMaxCandidates) + "]");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (episodes_per_epoch < 1) throw ConfigError("episodes_per_epoch must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (val_episodes < 2 || train_eval_episodes < 2) throw ConfigError("evaluation needs at least 2 episodes");
  if (output.empty()) throw ConfigError("output directory is required");
  if (threads < 1) throw ConfigError("threads must be positive");
  if (!(init_gain > 0.0) || !std::isfinite(init_gain)) throw ConfigError("arch.init_gain must be positive");
  if (sgd.momentum < 0.0 || sgd.weight_decay < 0.0) throw ConfigError("optimizer coefficients must be non-negative");
}

AugmentationPool parse_pool(const json& j) {
  AugmentationPool pool;
  auto descriptors = [](const json& list) {
    std::vector<AugmentationDescriptor> out;
    for (const auto& d : list) out.push_back(d.get<AugmentationDescriptor>());
    return out;
  };
  try {
    if (j.is_string()) {
      pool = preset_pool(j.get<std::string>());
    } else if (j.is_array()) {
      pool.name = "custom";
      pool.descriptors = descriptors(j);
    } else if (j.is_object()) {
      if (j.contains("preset")) {
        pool = preset_pool(j.at("preset").get<std::string>());
      } else {
        pool.name = get_or<std::string>(j, "name", "custom");
        pool.descriptors = descriptors(j.at("descriptors"));
      }
    } else {
      throw ConfigError("pool must be a preset name, a descriptor list or an object");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed pool: ") + e.what());
  }
  pool.validate();
  return pool;
}

json pool_to_json(const AugmentationPool& pool) {
  json list = json::array();
  for (const auto& d : pool.descriptors) list.push_back(d);
  return {{"name", pool.name}, {"descriptors", list}};
}

AugmentDefaults parse_augment(const json& j, AugmentDefaults a) {
  if (!j.is_object()) throw ConfigError("augment must be an object");
  check_keys(j,
             {"cutmix_alpha", "mixup_alpha", "feature_mixup_alpha", "erase_area_min", "erase_area_max",
              "erase_aspect_min", "erase_aspect_max", "jitter", "crop_padding", "solarize_threshold",
              "hflip_probability", "shot_copies"},
             "augment");
  a.cutmix_alpha = get_or(j, "cutmix_alpha", a.cutmix_alpha);
  a.mixup_alpha = get_or(j, "mixup_alpha", a.mixup_alpha);
  a.feature_mixup_alpha = get_or(j, "feature_mixup_alpha", a.feature_mixup_alpha);
  a.erase_area_min = get_or(j, "erase_area_min", a.erase_area_min);
  a.erase_area_max = get_or(j, "erase_area_max", a.erase_area_max);
  a.erase_aspect_min = get_or(j, "erase_aspect_min", a.erase_aspect_min);
  a.erase_aspect_max = get_or(j, "erase_aspect_max", a.erase_aspect_max);
  a.jitter = get_or(j, "jitter", a.jitter);
  a.crop_padding = get_or(j, "crop_padding", a.crop_padding);
  a.solarize_threshold = get_or(j, "solarize_threshold", a.solarize_threshold);
  a.hflip_probability = get_or(j, "hflip_probability", a.hflip_probability);
  a.shot_copies = get_or(j, "shot_copies", a.shot_copies);
  if (!(a.cutmix_alpha > 0 && a.mixup_alpha > 0 && a.feature_mixup_alpha > 0))
    throw ConfigError("Beta alphas must be positive");
  if (!(0 < a.erase_area_min && a.erase_area_min <= a.erase_area_max && a.erase_area_max <= 1))
    throw ConfigError("erase area range must satisfy 0 < min <= max <= 1");
  if (!(0 < a.erase_aspect_min && a.erase_aspect_min <= a.erase_aspect_max))
    throw ConfigError("erase aspect range must satisfy 0 < min <= max");
  if (a.jitter < 0 || a.jitter > 1) throw ConfigError("jitter must be in [0, 1]");
  if (a.crop_padding < 0) throw ConfigError("crop_padding must be non-negative");
  if (a.hflip_probability < 0 || a.hflip_probability > 1) throw ConfigError("hflip_probability must be in [0, 1]");
  if (a.shot_copies < 0) throw ConfigError("shot_copies must be non-negative");
  return a;
}

json augment_to_json(const AugmentDefaults& a) {
  return {{"cutmix_alpha", a.cutmix_alpha},
          {"mixup_alpha", a.mixup_alpha},
          {"feature_mixup_alpha", a.feature_mixup_alpha},
          {"erase_area_min", a.erase_area_min},
          {"erase_area_max", a.erase_area_max},
          {"erase_aspect_min", a.erase_aspect_min},
          {"erase_aspect_max", a.erase_aspect_max},
          {"jitter", a.jitter},
          {"crop_padding", a.crop_padding},
          {"solarize_threshold", a.solarize_threshold},
          {"hflip_probability", a.hflip_probability},
          {"shot_copies", a.shot_copies}};
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  check_keys(doc,
             {"dataset", "task", "head", "arch", "precision", "optimizer", "pool", "stack_baseline", "m", "batch",
              "episodes_per_epoch", "epochs", "val_episodes", "train_eval_episodes", "seed", "output", "augment",
              "init_checkpoint", "threads"},
             "run config");
  RunConfig c;
  try {
    const json& ds = doc.at("dataset");
    check_keys(ds, {"path", "synthetic"}, "dataset");
    if (ds.contains("path")) c.dataset_path = resolve(ds.at("path").get<std::string>(), base_dir);
    if (ds.contains("synthetic")) {
      const json& s = ds.at("synthetic");
      check_keys(s, {"train_classes", "val_classes", "test_classes", "per_class", "channels", "size", "seed"},
                 "dataset.synthetic");
      SyntheticSpec spec;
      spec.train_classes = get_or(s, "train_classes", spec.train_classes);
      spec.val_classes = get_or(s, "val_classes", spec.val_classes);
      spec.test_classes = get_or(s, "test_classes", spec.test_classes);
      spec.images_per_class = get_or(s, "per_class", spec.images_per_class);
      spec.channels = get_or(s, "channels", spec.channels);
      spec.height = spec.width = get_or(s, "size", spec.height);
      spec.seed = get_or<std::uint64_t>(s, "seed", spec.seed);
      c.synthetic = spec;
    }

    if (doc.contains("task")) {
      const json& t = doc.at("task");
      check_keys(t, {"way", "shot", "query", "train_shot", "split", "allow_shared_base"}, "task");
      c.task.way = get_or(t, "way", c.task.way);
      c.task.shot = get_or(t, "shot", c.task.shot);
      c.task.query = get_or(t, "query", c.task.query);
      c.train_shot = get_or(t, "train_shot", c.train_shot);
      c.task.split = parse_split(get_or<std::string>(t, "split", "val"));
      c.task.allow_shared_base = get_or(t, "allow_shared_base", c.task.allow_shared_base);
    } else {
      c.task.split = Split::val;
    }

    if (doc.contains("head")) {
      const json& h = doc.at("head");
      check_keys(h, {"kind", "ridge_lambda"}, "head");
      c.head.kind = parse_head(get_or<std::string>(h, "kind", "ridge"));
      c.head.ridge_lambda = get_or(h, "ridge_lambda", c.head.ridge_lambda);
    }
    if (doc.contains("arch")) {
      check_keys(doc.at("arch"), {"widths", "init_gain"}, "arch");
      c.widths = get_or(doc.at("arch"), "widths", c.widths);
      c.init_gain = get_or(doc.at("arch"), "init_gain", c.init_gain);
    }
    c.precision = parse_precision(get_or<std::string>(doc, "precision", "f32"));

    if (doc.contains("optimizer")) {
      const json& o = doc.at("optimizer");
      check_keys(o, {"momentum", "weight_decay", "nesterov", "schedule"}, "optimizer");
      c.sgd.momentum = get_or(o, "momentum", c.sgd.momentum);
      c.sgd.weight_decay = get_or(o, "weight_decay", c.sgd.weight_decay);
      c.sgd.nesterov = get_or(o, "nesterov", c.sgd.nesterov);
      if (o.contains("schedule")) c.schedule = parse_schedule(o.at("schedule"));
    }

    if (doc.contains("augment")) c.augment = parse_augment(doc.at("augment"));
    if (doc.contains("pool")) c.pool = parse_pool(doc.at("pool"));
    c.stack_baseline = get_or(doc, "stack_baseline", c.stack_baseline);
    c.m = get_or(doc, "m", c.m);
    c.batch = get_or(doc, "batch", c.batch);
    c.episodes_per_epoch = get_or(doc, "episodes_per_epoch", c.episodes_per_epoch);
    c.epochs = get_or(doc, "epochs", c.epochs);
    c.val_episodes = get_or(doc, "val_episodes", c.val_episodes);
    c.train_eval_episodes = get_or(doc, "train_eval_episodes", c.train_eval_episodes);
    c.seed = get_or<std::uint64_t>(doc, "seed", c.seed);
    if (doc.contains("output")) c.output = resolve(doc.at("output").get<std::string>(), base_dir);
    if (doc.contains("init_checkpoint"))
      c.init_checkpoint = resolve(doc.at("init_checkpoint").get<std::string>(), base_dir);
    c.threads = get_or(doc, "threads", c.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json ds = json::object();
  if (c.dataset_path) ds["path"] = c.dataset_path->string();
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    ds["synthetic"] = {{"train_classes", s.train_classes}, {"val_classes", s.val_classes},
                       {"test_classes", s.test_classes},   {"per_class", s.images_per_class},
                       {"channels", s.channels},           {"size", s.height},
                       {"seed", s.seed}};
  }
  json schedule = json::array();
  for (const auto& [epoch, rate] : c.schedule.steps()) schedule.push_back({epoch, rate});
  json j = {
      {"dataset", ds},
      {"task",
       {{"way", c.task.way},
        {"shot", c.task.shot},
        {"query", c.task.query},
        {"train_shot", c.effective_train_shot()},
        {"split", to_string(c.task.split)},
        {"allow_shared_base", c.task.allow_shared_base}}},
      {"head", {{"kind", to_string(c.head.kind)}, {"ridge_lambda", c.head.ridge_lambda}}},
      {"arch", {{"widths", c.widths}, {"init_gain", c.init_gain}}},
      {"precision", to_string(c.precision)},
      {"optimizer",
       {{"momentum", c.sgd.momentum},
        {"weight_decay", c.sgd.weight_decay},
        {"nesterov", c.sgd.nesterov},
        {"schedule", schedule}}},
      {"pool", pool_to_json(c.pool)},
      {"stack_baseline", c.stack_baseline},
      {"m", c.m},
      {"batch", c.batch},
      {"episodes_per_epoch", c.episodes_per_epoch},
      {"epochs", c.epochs},
      {"val_episodes", c.val_episodes},
      {"train_eval_episodes", c.train_eval_episodes},
      {"seed", c.seed},
      {"output", c.output.string()},
      {"augment", augment_to_json(c.augment)},
      {"threads", c.threads},
  };
  if (c.init_checkpoint) j["init_checkpoint"] = c.init_checkpoint->string();
  return j;
}

json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCategory::io, "cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + file.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& file) {
  return parse_run_config(read_json_file(file), file.parent_path());
}

FewShotDataset materialize_dataset(const RunConfig& config) {
  if (config.dataset_path) return load_dataset(*config.dataset_path);
  return generate_synthetic(*config.synthetic);
}

}  // namespace metaaug
