#pragma once

#include <functional>
#include <map>
#include <vector>

#include "metaaug/episodic.hpp"
#include "metaaug/learner.hpp"

namespace metaaug {

struct MaxUpConfig {
  AugmentationPool pool = preset_pool("identity");
  int m = 1;
  int batch = 8;
  int episodes_per_epoch = 200;
  bool stack_baseline = false;
  AugmentDefaults augment;

  void validate() const;
};

struct CandidateRecord {
  int j = 0;           // candidate slot within the task
  int descriptor = 0;  // index into the pool
  double loss = 0.0;
  bool selected = false;
};

// Index of the largest loss; lowest index wins ties.
int select_candidate(const std::vector<double>& losses);

// Class pools for one epoch: the identity pool plus one pool per task-level
// technique present in the augmentation pool, all keyed by (seed, epoch).
struct EpochPools {
  ClassPool identity;
  std::map<Technique, ClassPool> task;

  const ClassPool& for_descriptor(const AugmentationDescriptor& d) const;
};

EpochPools build_epoch_pools(const FewShotDataset& dataset, const AugmentationPool& pool, Split split,
                             std::uint64_t seed, int epoch, const AugmentDefaults& augment = {});

// Everything a training task needs besides the parameters.
struct TaskContext {
  const FewShotDataset* dataset = nullptr;
  ChannelStats stats;
  TaskConfig task;
  HeadConfig head;
  MaxUpConfig maxup;
  std::uint64_t seed = 0;
};

// Stream keys of task `t` in `epoch`. Candidate j uses sub-key j.
RngStream episode_stream(std::uint64_t seed, int epoch, int t);
RngStream candidate_select_stream(std::uint64_t seed, int epoch, int t);
RngStream augment_stream(std::uint64_t seed, int epoch, int t, int j);
RngStream feature_stream(std::uint64_t seed, int epoch, int t, int j);

// The descriptor actually applied for a pool entry (baseline prepended when stacking).
AugmentationDescriptor effective_descriptor(const MaxUpConfig& cfg, int pool_index);

// M_j(T): the task realized from the class pool of the descriptor's task
// technique, then transformed by its support/query/shot entries.
Episode realize_candidate(const TaskContext& ctx, const EpochPools& pools, int epoch, int t, int j,
                          int pool_index);

template <class S>
struct MaxUpResult {
  LossValue<S> selected;
  std::vector<CandidateRecord> candidates;
  int selected_index = 0;
};

// Samples m descriptors uniformly with replacement, scores each candidate
// forward-only and returns the gradient of the highest-loss one. With m = 1
// the scoring pass is skipped.
template <class S>
MaxUpResult<S> maxup_task(const ModelParams<S>& params, const TaskContext& ctx, const EpochPools& pools,
                          int epoch, int t);

struct EpochStats {
  double mean_loss = 0.0;      // mean selected loss
  double mean_accuracy = 0.0;  // mean query accuracy of the selected candidates
  int tasks = 0;
  double wall_seconds = 0.0;
};

using CandidateObserver = std::function<void(int task, const std::vector<CandidateRecord>&)>;

template <class S>
EpochStats train_epoch(ModelParams<S>& params, SgdState<S>& optimizer, const TaskContext& ctx, int epoch,
                       double lr, const SgdConfig& sgd, int threads = 1,
                       const CandidateObserver& observer = {});

}  // namespace metaaug
