#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "metaaug/learner.hpp"
#include "test_support.hpp"

namespace metaaug::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;  // probe crossed a ReLU or pooling kink and disagreed beyond `tolerance`
};

inline std::vector<std::vector<bool>> activation_pattern(const ModelParams<double>& p, const Episode& ep,
                                                         const ChannelStats& stats) {
  std::vector<const Image*> images;
  for (const auto& s : ep.support) images.push_back(&s.image);
  for (const auto& s : ep.query) images.push_back(&s.image);
  const auto input = to_network_input<double>(images, stats, p.arch().input);
  EmbedCache<double> cache;
  embed(p, input, static_cast<int>(images.size()), &cache);
  std::vector<std::vector<bool>> out;
  for (const auto& layer : cache.layers) {
    std::vector<bool> bits;
    for (Eigen::Index i = 0; i < layer.pre.size(); ++i) bits.push_back(layer.pre.data()[i] > 0.0);
    for (int a : layer.argmax)
      for (int b = 0; b < 32; ++b) bits.push_back((a >> b) & 1);
    out.push_back(std::move(bits));
  }
  return out;
}

// |analytic - numeric| / max(|analytic|, |numeric|, floor), central differences.
inline GradCheckResult gradient_check(const ModelParams<double>& params, const HeadConfig& head,
                                      const Episode& ep, const ChannelStats& stats, RngStream feature_rng,
                                      double h = 1e-5, double floor = 1e-6, double tolerance = 1e-4) {
  const auto analytic = loss_and_grad(params, head, ep, stats, feature_rng);
  GradCheckResult r;
  ModelParams<double> probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    const double x = params.values()[idx];
    probe.values()[idx] = x + h;
    const double up = episode_loss(probe, head, ep, stats, feature_rng).loss;
    probe.values()[idx] = x - h;
    const double down = episode_loss(probe, head, ep, stats, feature_rng).loss;
    probe.values()[idx] = x;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.grad.values()[idx];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (err > tolerance) {
      probe.values()[idx] = x + h;
      const auto pattern_up = activation_pattern(probe, ep, stats);
      probe.values()[idx] = x - h;
      const auto pattern_down = activation_pattern(probe, ep, stats);
      probe.values()[idx] = x;
      if (pattern_up != pattern_down) {
        ++r.skipped;
        continue;
      }
    }
    r.max_rel_error = std::max(r.max_rel_error, err);
    ++r.checked;
  }
  return r;
}

struct TinyInstance {
  FewShotDataset dataset;
  ModelParams<double> params;
  Episode episode;
};

// 4-way 1-shot episode on 3x16x16 images, widths (2,2,2,2), randomized biases and head scalars.
inline TinyInstance tiny_instance(std::uint64_t seed, bool shot_aug, bool feature_mix, bool mix_support = false) {
  const Geometry g{3, 16, 16};
  FewShotDataset ds = random_dataset(6, 0, 0, 6, g, seed);
  ArchConfig arch{g, {2, 2, 2, 2}};
  auto params = ModelParams<double>::initialize(arch, RngStream(seed, 0, 0, Purpose::test, 1));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.3);
  for (int l = 0; l < params.layers(); ++l)
    for (Eigen::Index c = 0; c < params.conv_bias(l).size(); ++c) params.conv_bias(l)[c] = u(gen);
  params.head_scale() = 0.5 + u(gen);
  params.head_bias() = u(gen);
  const auto pool = build_class_pool(ds, Split::train, std::nullopt, RngStream(seed, 0, 0, Purpose::class_pool));
  Episode ep = sample_episode(ds, pool, {4, 1, 3, Split::train, true}, RngStream(seed, 0, 0, Purpose::episode));
  if (shot_aug) {
    RngStream r(seed, 0, 0, Purpose::eval_shot_aug);
    append_shot_copies(ep, Technique::hflip, 1, r);
  }
  if (feature_mix) {
    (mix_support ? ep.feature_mixup.support : ep.feature_mixup.query) = true;
    ep.feature_mixup.alpha = 1.0;
  }
  return {std::move(ds), std::move(params), std::move(ep)};
}

}  // namespace metaaug::testing
