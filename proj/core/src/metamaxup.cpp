#include "metaaug/metamaxup.hpp"

#include <chrono>

#include "metaaug/parallel.hpp"

namespace metaaug {

void MaxUpConfig::validate() const {
  pool.validate();
  if (m < 1 || m > 64) throw ConfigError("m must be in [1, 64]");
  if (batch < 1) throw ConfigError("batch size must be positive");
  if (episodes_per_epoch < 1) throw ConfigError("episodes_per_epoch must be positive");
}

int select_candidate(const std::vector<double>& losses) {
  if (losses.empty()) throw ConfigError("no candidates to select from");
  int best = 0;
  for (int j = 1; j < static_cast<int>(losses.size()); ++j)
    if (losses[static_cast<std::size_t>(j)] > losses[static_cast<std::size_t>(best)]) best = j;
  return best;
}

const ClassPool& EpochPools::for_descriptor(const AugmentationDescriptor& d) const {
  const auto technique = d.task_technique();
  if (!technique) return identity;
  const auto it = task.find(*technique);
  if (it == task.end()) throw ConfigError("no class pool built for task technique " + d.name());
  return it->second;
}

EpochPools build_epoch_pools(const FewShotDataset& dataset, const AugmentationPool& pool, Split split,
                             std::uint64_t seed, int epoch, const AugmentDefaults& augment) {
  EpochPools out;
  const auto e = static_cast<std::uint64_t>(epoch);
  out.identity = build_class_pool(dataset, split, std::nullopt, RngStream(seed, e, 0, Purpose::class_pool), augment);
  for (const auto& d : pool.descriptors) {
    const auto technique = d.task_technique();
    if (!technique || out.task.count(*technique)) continue;
    const auto sub = static_cast<std::uint64_t>(*technique) + 1;
    out.task.emplace(*technique,
                     build_class_pool(dataset, split, technique, RngStream(seed, e, 0, Purpose::class_pool, sub), augment));
  }
  return out;
}

RngStream episode_stream(std::uint64_t seed, int epoch, int t) {
  return RngStream(seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(t), Purpose::episode);
}

RngStream candidate_select_stream(std::uint64_t seed, int epoch, int t) {
  return RngStream(seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(t), Purpose::candidate_select);
}

RngStream augment_stream(std::uint64_t seed, int epoch, int t, int j) {
  return RngStream(seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(t), Purpose::augment,
                   static_cast<std::uint64_t>(j));
}

RngStream feature_stream(std::uint64_t seed, int epoch, int t, int j) {
  return RngStream(seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(t), Purpose::feature_mixup,
                   static_cast<std::uint64_t>(j));
}

AugmentationDescriptor effective_descriptor(const MaxUpConfig& cfg, int pool_index) {
  const auto& d = cfg.pool.descriptors.at(static_cast<std::size_t>(pool_index));
  if (!cfg.stack_baseline) return d;
  std::vector<AugmentEntry> entries = baseline_descriptor().entries();
  entries.insert(entries.end(), d.entries().begin(), d.entries().end());
  return AugmentationDescriptor(std::move(entries));
}

Episode realize_candidate(const TaskContext& ctx, const EpochPools& pools, int epoch, int t, int j,
                          int pool_index) {
  const AugmentationDescriptor d = effective_descriptor(ctx.maxup, pool_index);
  const Episode raw = sample_episode(*ctx.dataset, pools.for_descriptor(d), ctx.task, episode_stream(ctx.seed, epoch, t),
                                     ctx.maxup.augment);
  return apply_descriptor(raw, d, augment_stream(ctx.seed, epoch, t, j), ctx.maxup.augment);
}

template <class S>
MaxUpResult<S> maxup_task(const ModelParams<S>& params, const TaskContext& ctx, const EpochPools& pools, int epoch,
                          int t) {
  const int m = ctx.maxup.m;
  RngStream select = candidate_select_stream(ctx.seed, epoch, t);
  std::vector<int> chosen(static_cast<std::size_t>(m));
  for (int& c : chosen) c = select.uniform_int(0, ctx.maxup.pool.size() - 1);

  std::vector<CandidateRecord> records(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) records[static_cast<std::size_t>(j)] = {j, chosen[static_cast<std::size_t>(j)], 0.0, false};

  auto run = [&](int j, auto&& fn) {
    try {
      const Episode ep = realize_candidate(ctx, pools, epoch, t, j, chosen[static_cast<std::size_t>(j)]);
      return fn(ep, feature_stream(ctx.seed, epoch, t, j));
    } catch (const NumericError& e) {
      throw e.with_candidate(j);
    }
  };

  int winner = 0;
  if (m > 1) {
    std::vector<double> losses(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j)
      losses[static_cast<std::size_t>(j)] = run(j, [&](const Episode& ep, RngStream fr) {
        return episode_loss(params, ctx.head, ep, ctx.stats, fr).loss;
      });
    winner = select_candidate(losses);
    for (int j = 0; j < m; ++j) records[static_cast<std::size_t>(j)].loss = losses[static_cast<std::size_t>(j)];
  }
  LossValue<S> value = run(winner, [&](const Episode& ep, RngStream fr) {
    return loss_and_grad(params, ctx.head, ep, ctx.stats, fr);
  });
  records[static_cast<std::size_t>(winner)].loss = value.loss;
  records[static_cast<std::size_t>(winner)].selected = true;
  return {std::move(value), std::move(records), winner};
}

template <class S>
EpochStats train_epoch(ModelParams<S>& params, SgdState<S>& optimizer, const TaskContext& ctx, int epoch, double lr,
                       const SgdConfig& sgd, int threads, const CandidateObserver& observer) {
  ctx.maxup.validate();
  const auto start = std::chrono::steady_clock::now();
  const EpochPools pools = build_epoch_pools(*ctx.dataset, ctx.maxup.pool, ctx.task.split, ctx.seed, epoch,
                                             ctx.maxup.augment);
  const int total = ctx.maxup.episodes_per_epoch;
  const int n = ctx.maxup.batch;
  EpochStats stats;
  double loss_sum = 0.0, acc_sum = 0.0;

  for (int first = 0; first < total; first += n) {
    const int count = std::min(n, total - first);
    std::vector<std::optional<MaxUpResult<S>>> results(static_cast<std::size_t>(count));
    parallel_for(count, threads, [&](int i) {
      results[static_cast<std::size_t>(i)] = maxup_task(params, ctx, pools, epoch, first + i);
    });
    ModelParams<S> grad = ModelParams<S>::zeros_like(params);
    for (int i = 0; i < count; ++i) {
      auto& r = *results[static_cast<std::size_t>(i)];
      grad.values() += r.selected.grad.values();
      loss_sum += r.selected.loss;
      acc_sum += r.selected.accuracy;
      if (observer) observer(first + i, r.candidates);
    }
    grad.values() /= static_cast<S>(count);
    sgd_step(params, grad, optimizer, lr, sgd);
    if (!params.values().allFinite()) throw NumericError("update");
    stats.tasks += count;
  }
  stats.mean_loss = loss_sum / stats.tasks;
  stats.mean_accuracy = acc_sum / stats.tasks;
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

template MaxUpResult<float> maxup_task(const ModelParams<float>&, const TaskContext&, const EpochPools&, int, int);
template MaxUpResult<double> maxup_task(const ModelParams<double>&, const TaskContext&, const EpochPools&, int, int);
template EpochStats train_epoch(ModelParams<float>&, SgdState<float>&, const TaskContext&, int, double,
                                const SgdConfig&, int, const CandidateObserver&);
template EpochStats train_epoch(ModelParams<double>&, SgdState<double>&, const TaskContext&, int, double,
                                const SgdConfig&, int, const CandidateObserver&);

}  // namespace metaaug
