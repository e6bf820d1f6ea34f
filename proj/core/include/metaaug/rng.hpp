#pragma once

#include <cstdint>
#include <limits>

namespace metaaug {

// Purpose tags separate the random streams used by different parts of the
// pipeline, so that e.g. adding training epochs never perturbs evaluation.
enum class Purpose : std::uint64_t {
  init = 1,
  synth = 2,
  class_pool = 3,
  episode = 4,
  augment = 5,
  candidate_select = 6,
  feature_mixup = 7,
  eval_episode = 8,
  eval_shot_aug = 9,
  train_eval = 10,
  test = 99,
};

struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t index = 0;
  Purpose purpose = Purpose::test;
  std::uint64_t sub = 0;
};

// Counter-based generator: the output is a pure function of (key, counter).
// Models UniformRandomBitGenerator, but the distribution helpers below are
// implemented here so draws are bit-reproducible across standard libraries.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(const StreamKey& key);
  RngStream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index, Purpose purpose,
            std::uint64_t sub = 0)
      : RngStream(StreamKey{seed, epoch, index, purpose, sub}) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  // Independent child stream; does not advance this stream.
  RngStream fork(std::uint64_t tag) const;

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);
  double normal();
  double gamma(double shape);
  double beta(double a, double b);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t counter() const { return counter_; }

 private:
  RngStream(std::uint64_t state, int) : state_(state) {}

  std::uint64_t state_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace metaaug
