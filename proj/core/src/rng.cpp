#include "metaaug/rng.hpp"

#include <cmath>
#include <numbers>

#include "metaaug/error.hpp"

namespace metaaug {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

RngStream::RngStream(const StreamKey& key) {
  std::uint64_t h = mix64(key.seed + kGolden);
  h = mix64(h ^ (key.epoch + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ (key.index + 0x8cb92ba72f3d8dd7ULL));
  h = mix64(h ^ (static_cast<std::uint64_t>(key.purpose) + 0xd1b54a32d192ed03ULL));
  h = mix64(h ^ (key.sub + 0xabc98388fb8fac03ULL));
  state_ = h;
}

RngStream::result_type RngStream::operator()() {
  ++counter_;
  return mix64(state_ + counter_ * kGolden);
}

RngStream RngStream::fork(std::uint64_t tag) const {
  return RngStream(mix64(state_ ^ mix64(tag + 0x3c6ef372fe94f82aULL)), 0);
}

double RngStream::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

int RngStream::uniform_int(int lo, int hi) {
  if (hi < lo) throw ConfigError("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = max() - max() % span;
  std::uint64_t r;
  do {
    r = (*this)();
  } while (r >= limit);
  return lo + static_cast<int>(r % span);
}

double RngStream::normal() {
  // Box-Muller, one value per call so the stream stays stateless.
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw ConfigError("gamma: shape must be positive");
  if (shape < 1.0) {
    const double u = uniform();
    return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / shape);
  }
  // Marsaglia-Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double RngStream::beta(double a, double b) {
  const double x = gamma(a);
  const double y = gamma(b);
  return x / (x + y);
}

}  // namespace metaaug
