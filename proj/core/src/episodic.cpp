#include "metaaug/episodic.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>

namespace metaaug {

using nlohmann::json;

namespace {

struct TechniqueName {
  Technique technique;
  std::string_view name;
  std::string_view display;
};

constexpr TechniqueName kTechniques[] = {
    {Technique::cutmix, "cutmix", "CutMix"},
    {Technique::mixup, "mixup", "MixUp"},
    {Technique::self_mix, "self_mix", "SelfMix"},
    {Technique::random_erase, "random_erase", "RandomErase"},
    {Technique::rotation, "rotation", "Rotation"},
    {Technique::hflip, "hflip", "HFlip"},
    {Technique::random_crop, "random_crop", "RandomCrop"},
    {Technique::color_jitter, "color_jitter", "ColorJitter"},
    {Technique::solarize, "solarize", "Solarize"},
    {Technique::drop_channel, "drop_channel", "DropChannel"},
    {Technique::feature_mixup, "feature_mixup", "FeatureMixup"},
    {Technique::combine_labels, "combine_labels", "CombineLabels"},
    {Technique::duplicate, "duplicate", "Duplicate"},
};

std::string_view display_name(Technique t) {
  for (const auto& e : kTechniques)
    if (e.technique == t) return e.display;
  return "?";
}

char mode_letter(Mode m) {
  switch (m) {
    case Mode::support: return 'S';
    case Mode::query: return 'Q';
    case Mode::task: return 'T';
    case Mode::shot: return 'H';
  }
  return '?';
}

AugmentEntry entry(Mode m, Technique t, std::map<std::string, double> params = {}) {
  return AugmentEntry{m, t, std::move(params)};
}

AugmentationDescriptor desc(std::initializer_list<AugmentEntry> entries) {
  return AugmentationDescriptor(std::vector<AugmentEntry>(entries));
}

// Partial Fisher-Yates: first `count` entries of a random permutation of [0, n).
std::vector<int> choose_without_replacement(int n, int count, RngStream& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < count; ++i) {
    const int j = rng.uniform_int(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

Image apply_unary(const Image& img, Technique t, Mode mode, const AugmentEntry& e,
                  const AugmentDefaults& p, RngStream& rng) {
  switch (t) {
    case Technique::self_mix: return self_mix(img, rng);
    case Technique::random_erase: return random_erase(img, rng, p);
    case Technique::rotation:
      // Shot copies must differ from the original, so k = 0 is excluded there.
      return rotate90(img, mode == Mode::shot ? rng.uniform_int(1, 3) : rng.uniform_int(0, 3));
    case Technique::hflip:
      if (mode == Mode::shot) return hflip(img);
      return rng.bernoulli(e.param("p", p.hflip_probability)) ? hflip(img) : img;
    case Technique::random_crop:
      return random_crop(img, rng, static_cast<int>(e.param("padding", p.crop_padding)));
    case Technique::color_jitter: return color_jitter(img, rng, e.param("strength", p.jitter));
    case Technique::solarize: return solarize(img, e.param("threshold", p.solarize_threshold));
    case Technique::drop_channel: return drop_channel(img, rng);
    case Technique::duplicate: return img;
    default: break;
  }
  throw ConfigError("technique " + std::string(to_string(t)) + " is not a per-image kernel");
}

void apply_to_set(std::vector<EpisodeSample>& set, Mode mode, const AugmentEntry& e,
                  const AugmentDefaults& p, RngStream& rng, Episode& episode) {
  switch (e.technique) {
    case Technique::cutmix:
    case Technique::mixup: {
      const std::vector<EpisodeSample> snapshot = set;
      const int n = static_cast<int>(snapshot.size());
      for (int i = 0; i < n; ++i) {
        int j = i;
        if (n > 1) {
          j = rng.uniform_int(0, n - 2);
          if (j >= i) ++j;
        }
        const auto& a = snapshot[static_cast<std::size_t>(i)];
        const auto& b = snapshot[static_cast<std::size_t>(j)];
        MixOutcome<float> mixed =
            e.technique == Technique::cutmix
                ? cutmix(a.image, a.label, b.image, b.label, rng, e.param("alpha", p.cutmix_alpha))
                : mixup(a.image, a.label, b.image, b.label, rng, e.param("alpha", p.mixup_alpha));
        auto& out = set[static_cast<std::size_t>(i)];
        out.image = std::move(mixed.image);
        out.label = std::move(mixed.label);
        if (mixed.lambda < 1.0) out.sources.insert(out.sources.end(), b.sources.begin(), b.sources.end());
      }
      return;
    }
    case Technique::feature_mixup:
      (mode == Mode::support ? episode.feature_mixup.support : episode.feature_mixup.query) = true;
      episode.feature_mixup.alpha = e.param("alpha", p.feature_mixup_alpha);
      return;
    default:
      for (auto& s : set) s.image = apply_unary(s.image, e.technique, mode, e, p, rng);
      return;
  }
}

void append_copies(Episode& episode, const AugmentEntry& e, int copies, const AugmentDefaults& p,
                   RngStream& rng) {
  const int base = episode.base_support_size;
  for (int c = 0; c < copies; ++c)
    for (int i = 0; i < base; ++i) {
      EpisodeSample copy = episode.support[static_cast<std::size_t>(i)];
      copy.image = apply_unary(copy.image, e.technique, Mode::shot, e, p, rng);
      episode.support.push_back(std::move(copy));
    }
}

Image class_image(const FewShotDataset& dataset, const VirtualClass& vc, const SampleSource& a,
                  const SampleSource* b, const AugmentDefaults& p, RngStream& rng) {
  const auto fetch = [&](const SampleSource& s) {
    return dataset.cls(s.class_index).images[static_cast<std::size_t>(s.image_index)].cast<float>();
  };
  Image img = fetch(a);
  switch (vc.transform) {
    case ClassTransform::identity:
    case ClassTransform::combined_labels: return img;
    case ClassTransform::large_rotation: return rotate90(img, vc.rotation_k);
    case ClassTransform::class_mixup: {
      const SoftLabel dummy = SoftLabel::one_hot(1, 0);
      return mixup_with_lambda(img, dummy, fetch(*b), dummy, 0.5).image;
    }
    case ClassTransform::class_cutmix: {
      const SoftLabel dummy = SoftLabel::one_hot(1, 0);
      return cutmix(img, dummy, fetch(*b), dummy, rng, p.cutmix_alpha).image;
    }
    case ClassTransform::class_random_erase: {
      RngStream noise(vc.noise_seed, 0, 0, Purpose::class_pool);
      return erase_box(img, vc.erase_box, noise);
    }
    case ClassTransform::class_drop_channel: return drop_channel_at(img, vc.channel);
  }
  return img;
}

}  // namespace

std::string_view to_string(Mode mode) noexcept {
  switch (mode) {
    case Mode::support: return "support";
    case Mode::query: return "query";
    case Mode::task: return "task";
    case Mode::shot: return "shot";
  }
  return "?";
}

std::string_view to_string(Technique technique) noexcept {
  for (const auto& e : kTechniques)
    if (e.technique == technique) return e.name;
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "support" || text == "S") return Mode::support;
  if (text == "query" || text == "Q") return Mode::query;
  if (text == "task" || text == "T") return Mode::task;
  if (text == "shot" || text == "H") return Mode::shot;
  throw ConfigError("unknown augmentation mode '" + std::string(text) + "'");
}

Technique parse_technique(std::string_view text) {
  for (const auto& e : kTechniques)
    if (e.name == text) return e.technique;
  if (text == "selfmix" || text == "self-mix") return Technique::self_mix;
  if (text == "random-erase" || text == "erase") return Technique::random_erase;
  if (text == "rot90" || text == "large_rotation") return Technique::rotation;
  if (text == "crop") return Technique::random_crop;
  if (text == "jitter") return Technique::color_jitter;
  throw ConfigError("unknown augmentation technique '" + std::string(text) + "'");
}

bool supports(Mode mode, Technique t) noexcept {
  switch (mode) {
    case Mode::support:
    case Mode::query:
      return t != Technique::combine_labels && t != Technique::duplicate;
    case Mode::task:
      return t == Technique::rotation || t == Technique::mixup || t == Technique::cutmix ||
             t == Technique::combine_labels || t == Technique::random_erase ||
             t == Technique::drop_channel;
    case Mode::shot:
      return t == Technique::hflip || t == Technique::random_crop || t == Technique::rotation ||
             t == Technique::duplicate || t == Technique::color_jitter ||
             t == Technique::random_erase || t == Technique::self_mix ||
             t == Technique::solarize || t == Technique::drop_channel;
  }
  return false;
}

double AugmentEntry::param(const std::string& key, double fallback) const {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

AugmentationDescriptor::AugmentationDescriptor(std::vector<AugmentEntry> entries)
    : entries_(std::move(entries)) {
  int task_entries = 0;
  for (const auto& e : entries_) {
    if (!supports(e.mode, e.technique))
      throw ConfigError("technique " + std::string(to_string(e.technique)) +
                        " is not available in " + std::string(to_string(e.mode)) + " mode");
    if (e.mode == Mode::task) ++task_entries;
  }
  if (task_entries > 1) throw ConfigError("descriptor has more than one task-mode entry");
}

std::optional<Technique> AugmentationDescriptor::task_technique() const {
  for (const auto& e : entries_)
    if (e.mode == Mode::task) return e.technique;
  return std::nullopt;
}

std::string AugmentationDescriptor::name() const {
  if (entries_.empty()) return "identity";
  std::string out;
  for (const auto& e : entries_) {
    if (!out.empty()) out += '+';
    out += display_name(e.technique);
    out += '(';
    out += mode_letter(e.mode);
    out += ')';
  }
  return out;
}

void AugmentationPool::validate() const {
  if (descriptors.empty()) throw ConfigError("augmentation pool '" + name + "' is empty");
}

void to_json(json& j, const AugmentEntry& e) {
  j = json{{"mode", to_string(e.mode)}, {"technique", to_string(e.technique)}};
  if (!e.params.empty()) j["params"] = e.params;
}

void from_json(const json& j, AugmentEntry& e) {
  e.mode = parse_mode(j.at("mode").get<std::string>());
  e.technique = parse_technique(j.at("technique").get<std::string>());
  e.params.clear();
  if (j.contains("params"))
    for (const auto& [k, v] : j.at("params").items()) e.params[k] = v.get<double>();
}

void to_json(json& j, const AugmentationDescriptor& d) { j = d.entries(); }

void from_json(const json& j, AugmentationDescriptor& d) {
  d = AugmentationDescriptor(j.get<std::vector<AugmentEntry>>());
}

AugmentationDescriptor baseline_descriptor() {
  return desc({entry(Mode::support, Technique::random_crop),
               entry(Mode::support, Technique::hflip),
               entry(Mode::support, Technique::color_jitter),
               entry(Mode::query, Technique::random_crop),
               entry(Mode::query, Technique::hflip),
               entry(Mode::query, Technique::color_jitter)});
}

AugmentationPool preset_pool(std::string_view name) {
  const auto q = [](Technique t) { return entry(Mode::query, t); };
  const auto s = [](Technique t) { return entry(Mode::support, t); };
  const auto rot_t = entry(Mode::task, Technique::rotation);
  AugmentationPool pool;
  pool.name = std::string(name);
  if (name == "medium" || name == "large") {
    pool.descriptors = {
        desc({q(Technique::cutmix)}),
        desc({q(Technique::random_erase)}),
        desc({s(Technique::self_mix)}),
        desc({rot_t}),
        desc({q(Technique::cutmix), rot_t}),
        desc({q(Technique::random_erase), rot_t}),
    };
    if (name == "large") {
      pool.descriptors.push_back(desc({q(Technique::random_erase), s(Technique::random_erase)}));
      pool.descriptors.push_back(desc({q(Technique::cutmix), s(Technique::random_erase)}));
      pool.descriptors.push_back(desc({q(Technique::cutmix), q(Technique::random_erase)}));
      pool.descriptors.push_back(desc({q(Technique::cutmix), s(Technique::self_mix)}));
    }
  } else if (name == "single") {
    pool.descriptors = {
        desc({q(Technique::cutmix)}),  desc({q(Technique::random_erase)}),
        desc({q(Technique::self_mix)}), desc({s(Technique::self_mix)}),
        desc({rot_t}),                 desc({entry(Mode::shot, Technique::hflip)}),
    };
  } else if (name == "cutmix-only") {
    pool.descriptors.assign(4, desc({q(Technique::cutmix)}));
  } else if (name == "identity") {
    pool.descriptors = {AugmentationDescriptor{}};
  } else if (name == "baseline") {
    pool.descriptors = {baseline_descriptor()};
  } else {
    throw ConfigError("unknown pool preset '" + std::string(name) + "'");
  }
  return pool;
}

std::string_view to_string(ClassTransform t) noexcept {
  switch (t) {
    case ClassTransform::identity: return "identity";
    case ClassTransform::large_rotation: return "large_rotation";
    case ClassTransform::class_mixup: return "class_mixup";
    case ClassTransform::class_cutmix: return "class_cutmix";
    case ClassTransform::combined_labels: return "combined_labels";
    case ClassTransform::class_random_erase: return "class_random_erase";
    case ClassTransform::class_drop_channel: return "class_drop_channel";
  }
  return "?";
}

bool VirtualClass::shares_base(const VirtualClass& o) const {
  const auto has = [](const VirtualClass& v, int c) { return c >= 0 && (v.base == c || v.partner == c); };
  return has(o, base) || has(o, partner);
}

ClassPool build_class_pool(const FewShotDataset& dataset, Split split,
                           std::optional<Technique> technique, RngStream rng,
                           const AugmentDefaults& params) {
  const std::vector<int> bases = dataset.class_indices(split);
  if (bases.empty())
    throw DataError("split " + std::string(to_string(split)) + " has no classes");
  ClassPool pool;
  pool.split = split;
  pool.base_classes = static_cast<int>(bases.size());
  pool.technique = technique;
  for (int b : bases) pool.classes.push_back(VirtualClass{.base = b});
  if (!technique) return pool;

  const auto pair_transform = [&](ClassTransform t) {
    if (bases.size() < 2) throw DataError("class pairing needs at least 2 base classes");
    const std::vector<int> order =
        choose_without_replacement(static_cast<int>(bases.size()), static_cast<int>(bases.size()), rng);
    for (std::size_t i = 0; i + 1 < order.size(); i += 2)
      pool.classes.push_back(VirtualClass{.transform = t,
                                          .base = bases[static_cast<std::size_t>(order[i])],
                                          .partner = bases[static_cast<std::size_t>(order[i + 1])]});
  };

  const Geometry& g = dataset.geometry();
  switch (*technique) {
    case Technique::rotation:
      if (g.height != g.width) throw GeometryError("large rotation needs square images");
      for (int k = 1; k <= 3; ++k)
        for (int b : bases)
          pool.classes.push_back(VirtualClass{.transform = ClassTransform::large_rotation, .base = b, .rotation_k = k});
      break;
    case Technique::mixup: pair_transform(ClassTransform::class_mixup); break;
    case Technique::cutmix: pair_transform(ClassTransform::class_cutmix); break;
    case Technique::combine_labels: pair_transform(ClassTransform::combined_labels); break;
    case Technique::random_erase:
      for (int b : bases) {
        VirtualClass vc{.transform = ClassTransform::class_random_erase, .base = b};
        const auto box = sample_erase_box(g.height, g.width, params, rng);
        vc.erase_box = box.value_or(Box{});
        vc.noise_seed = rng();
        pool.classes.push_back(vc);
      }
      break;
    case Technique::drop_channel:
      if (g.channels < 2) throw GeometryError("drop_channel task augmentation needs >= 2 channels");
      for (int b : bases)
        pool.classes.push_back(VirtualClass{.transform = ClassTransform::class_drop_channel,
                                            .base = b,
                                            .channel = rng.uniform_int(0, g.channels - 1)});
      break;
    default:
      throw ConfigError("technique " + std::string(to_string(*technique)) +
                        " has no task-level form");
  }
  return pool;
}

void TaskConfig::validate() const {
  if (way < 2) throw ConfigError("way must be >= 2");
  if (shot < 1) throw ConfigError("shot must be >= 1");
  if (query < 1) throw ConfigError("query must be >= 1");
}

Episode sample_episode(const FewShotDataset& dataset, const ClassPool& pool, const TaskConfig& cfg,
                       RngStream rng, const AugmentDefaults& params) {
  cfg.validate();
  if (pool.size() < cfg.way)
    throw DataError("class pool has " + std::to_string(pool.size()) + " classes, need " +
                    std::to_string(cfg.way));

  const int per_class = cfg.shot + cfg.query;
  Episode ep;
  ep.ways = cfg.way;
  ep.base_support_size = cfg.way * cfg.shot;
  ep.provenance.push_back("sampled:" + std::string(to_string(cfg.split)));

  // Every source image appears at most once per episode, so virtual classes
  // sharing a base class draw from what earlier slots left over.
  std::map<int, std::vector<bool>> used;
  const auto available = [&](int cls) {
    auto& flags = used[cls];
    flags.resize(dataset.cls(cls).images.size(), false);
    std::vector<SampleSource> out;
    for (std::size_t i = 0; i < flags.size(); ++i)
      if (!flags[i]) out.push_back({cls, static_cast<int>(i)});
    return out;
  };
  const auto draw = [&](const std::vector<SampleSource>& sources) {
    std::vector<SampleSource> out;
    for (int i : choose_without_replacement(static_cast<int>(sources.size()), per_class, rng)) {
      const SampleSource& src = sources[static_cast<std::size_t>(i)];
      used[src.class_index][static_cast<std::size_t>(src.image_index)] = true;
      out.push_back(src);
    }
    return out;
  };

  // Lazy Fisher-Yates over the pool: candidates are visited in random order
  // and skipped when they clash with the base-sharing rule or lack images.
  std::vector<int> order(static_cast<std::size_t>(pool.size()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> chosen;
  std::string shortage;
  for (int i = 0; i < pool.size() && static_cast<int>(chosen.size()) < cfg.way; ++i) {
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(i, pool.size() - 1))]);
    const int idx = order[static_cast<std::size_t>(i)];
    const VirtualClass& vc = pool.classes[static_cast<std::size_t>(idx)];
    if (!cfg.allow_shared_base &&
        std::any_of(chosen.begin(), chosen.end(),
                    [&](int other) { return pool.classes[static_cast<std::size_t>(other)].shares_base(vc); }))
      continue;

    std::vector<SampleSource> first = available(vc.base), second;
    if (vc.transform == ClassTransform::combined_labels) {
      const auto other = available(vc.partner);
      first.insert(first.end(), other.begin(), other.end());
    } else if (vc.is_pair()) {
      second = available(vc.partner);
    }
    const auto count = [&](int cls) { return static_cast<int>(dataset.cls(cls).images.size()); };
    const bool combined = vc.transform == ClassTransform::combined_labels;
    const bool split_pair = vc.is_pair() && !combined;
    // A class that cannot serve a task even when untouched violates the dataset contract.
    const int base_total = combined ? count(vc.base) + count(vc.partner) : count(vc.base);
    if (base_total < per_class || (split_pair && count(vc.partner) < per_class)) {
      const int cls = base_total < per_class ? vc.base : vc.partner;
      throw DataError("class '" + dataset.cls(cls).id + "' has " + std::to_string(count(cls)) + " images, a " +
                      std::to_string(cfg.shot) + "-shot " + std::to_string(cfg.query) + "-query task needs " +
                      std::to_string(per_class));
    }
    if (static_cast<int>(first.size()) < per_class ||
        (split_pair && static_cast<int>(second.size()) < per_class)) {
      shortage = "not enough unused images left for virtual classes sharing class '" + dataset.cls(vc.base).id + "'";
      continue;
    }

    const int slot = static_cast<int>(chosen.size());
    chosen.push_back(idx);
    ep.way_classes.push_back(vc);
    const std::vector<SampleSource> primary = draw(first);
    const std::vector<SampleSource> secondary = second.empty() ? std::vector<SampleSource>{} : draw(second);

    for (int k = 0; k < per_class; ++k) {
      const SampleSource& a = primary[static_cast<std::size_t>(k)];
      const SampleSource* b = secondary.empty() ? nullptr : &secondary[static_cast<std::size_t>(k)];
      EpisodeSample s{class_image(dataset, vc, a, b, params, rng), SoftLabel::one_hot(cfg.way, slot), {a}};
      if (b) s.sources.push_back(*b);
      (k < cfg.shot ? ep.support : ep.query).push_back(std::move(s));
    }
  }
  if (static_cast<int>(chosen.size()) < cfg.way) {
    if (!shortage.empty()) throw DataError(shortage);
    throw DataError("not enough base-disjoint virtual classes for a " + std::to_string(cfg.way) + "-way episode");
  }
  return ep;
}

void append_shot_copies(Episode& episode, Technique technique, int copies, RngStream& rng,
                        const AugmentDefaults& params) {
  if (!supports(Mode::shot, technique))
    throw ConfigError("technique " + std::string(to_string(technique)) + " is not a shot augmentation");
  append_copies(episode, AugmentEntry{Mode::shot, technique, {}}, copies, params, rng);
}

Episode apply_descriptor(const Episode& episode, const AugmentationDescriptor& descriptor,
                         RngStream rng, const AugmentDefaults& params) {
  Episode out = episode;
  std::uint64_t index = 0;
  for (const AugmentEntry& e : descriptor.entries()) {
    RngStream entry_rng = rng.fork(index++);
    switch (e.mode) {
      case Mode::task: continue;
      case Mode::support: apply_to_set(out.support, Mode::support, e, params, entry_rng, out); break;
      case Mode::query: apply_to_set(out.query, Mode::query, e, params, entry_rng, out); break;
      case Mode::shot:
        append_copies(out, e, static_cast<int>(e.param("copies", params.shot_copies)), params, entry_rng);
        break;
    }
  }
  if (!descriptor.empty()) out.provenance.push_back(descriptor.name());
  return out;
}

}  // namespace metaaug
