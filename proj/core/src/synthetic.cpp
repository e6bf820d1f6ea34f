#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "metaaug/datastore.hpp"
#include "metaaug/rng.hpp"

namespace metaaug {

namespace {

using Color = std::array<double, 3>;

enum class Family { bars, blobs, rings };

struct Blob {
  double dx, dy, radius;
  Color tint;
};

// Parameters shared by every image of one class.
struct ClassPattern {
  Family family;
  Color foreground;
  Color background;
  double cx, cy;
  double angle;      // bars: stripe orientation; rings: gap direction
  double frequency;  // bars: cycles across the unit square
  double radius;     // bars: envelope radius; rings: ring radius
  double thickness;  // rings
  std::array<Blob, 3> blobs;
};

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

Color random_color(RngStream& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

ClassPattern make_pattern(RngStream rng) {
  ClassPattern p{};
  p.family = static_cast<Family>(rng.uniform_int(0, 2));
  p.foreground = random_color(rng, 60.0, 255.0);
  p.background = random_color(rng, 0.0, 110.0);
  p.cx = rng.uniform(0.3, 0.7);
  p.cy = rng.uniform(0.3, 0.7);
  p.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.frequency = rng.uniform(2.0, 5.0);
  p.radius = rng.uniform(0.18, 0.4);
  p.thickness = rng.uniform(0.04, 0.1);
  for (auto& b : p.blobs) {
    b.dx = rng.uniform(-0.25, 0.25);
    b.dy = rng.uniform(-0.25, 0.25);
    b.radius = rng.uniform(0.06, 0.14);
    b.tint = random_color(rng, -50.0, 50.0);
  }
  return p;
}

// Foreground coverage in [0,1] plus a per-pixel color for the foreground.
double coverage(const ClassPattern& p, double u, double v, double cx, double cy, double angle,
                double scale, double phase, Color& tint) {
  tint = {0.0, 0.0, 0.0};
  const double du = u - cx, dv = v - cy;
  switch (p.family) {
    case Family::bars: {
      const double along = du * std::cos(angle) + dv * std::sin(angle);
      const double wave = std::sin(2.0 * std::numbers::pi * p.frequency * along / scale + phase);
      const double r = std::hypot(du, dv);
      // One-sided envelope: stripes fade toward the direction opposite `angle`,
      // so the pattern is not invariant under flips or half-turns.
      const double bias = smoothstep(-0.6, 0.6, along / (p.radius * scale));
      return smoothstep(-0.2, 0.4, wave) * (1.0 - smoothstep(p.radius * scale, p.radius * scale + 0.08, r)) *
             (0.35 + 0.65 * bias);
    }
    case Family::blobs: {
      double best = 0.0;
      const double ca = std::cos(angle - p.angle), sa = std::sin(angle - p.angle);
      for (const auto& b : p.blobs) {
        const double bx = cx + scale * (b.dx * ca - b.dy * sa);
        const double by = cy + scale * (b.dx * sa + b.dy * ca);
        const double d = std::hypot(u - bx, v - by);
        const double m = 1.0 - smoothstep(b.radius * scale * 0.7, b.radius * scale, d);
        if (m > best) {
          best = m;
          tint = b.tint;
        }
      }
      return best;
    }
    case Family::rings: {
      const double r = std::hypot(du, dv);
      const double ring = 1.0 - smoothstep(p.thickness * scale * 0.5, p.thickness * scale,
                                           std::abs(r - p.radius * scale));
      const double theta = std::atan2(dv, du);
      double gap = std::remainder(theta - angle, 2.0 * std::numbers::pi);
      const double open = smoothstep(0.35, 0.6, std::abs(gap));
      return ring * open;
    }
  }
  return 0.0;
}

RawImage render(const ClassPattern& p, const Geometry& g, RngStream rng) {
  const double cx = p.cx + rng.uniform(-0.08, 0.08);
  const double cy = p.cy + rng.uniform(-0.08, 0.08);
  const double angle = p.angle + rng.uniform(-0.25, 0.25);
  const double scale = rng.uniform(0.85, 1.15);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Color fg = p.foreground, bg = p.background;
  for (int k = 0; k < 3; ++k) {
    fg[k] += rng.uniform(-30.0, 30.0);
    bg[k] += rng.uniform(-30.0, 30.0);
  }
  const double grad_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double grad_amp = rng.uniform(0.0, 50.0);

  const bool distractor = rng.bernoulli(0.6);
  const double dist_x = rng.uniform(0.05, 0.95), dist_y = rng.uniform(0.05, 0.95);
  const double dist_r = rng.uniform(0.05, 0.12);
  const Color dist_color = random_color(rng, 0.0, 255.0);

  std::vector<double> plane(static_cast<std::size_t>(g.height) * g.width * 3);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const double u = (x + 0.5) / g.width, v = (y + 0.5) / g.height;
      Color tint;
      const double m = coverage(p, u, v, cx, cy, angle, scale, phase, tint);
      const double gradient =
          grad_amp * ((u - 0.5) * std::cos(grad_angle) + (v - 0.5) * std::sin(grad_angle));
      const double dm = distractor ? 1.0 - smoothstep(dist_r * 0.6, dist_r, std::hypot(u - dist_x, v - dist_y)) : 0.0;
      for (int k = 0; k < 3; ++k) {
        double val = (bg[k] + gradient) * (1.0 - m) + (fg[k] + tint[k]) * m;
        val = val * (1.0 - dm) + dist_color[k] * dm;
        plane[(static_cast<std::size_t>(k) * g.height + y) * g.width + x] = val;
      }
    }
  }

  RawImage img(g);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const auto at = [&](int k) {
        return plane[(static_cast<std::size_t>(k) * g.height + y) * g.width + x];
      };
      for (int c = 0; c < g.channels; ++c) {
        double val = g.channels == 3 ? at(c) : 0.299 * at(0) + 0.587 * at(1) + 0.114 * at(2);
        val += 14.0 * rng.normal();
        img(c, y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, kDomainMax)));
      }
    }
  }
  return img;
}

}  // namespace

FewShotDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.train_classes < 1 || spec.val_classes < 1 || spec.test_classes < 1 ||
      spec.images_per_class < 1)
    throw DatasetError(DatasetErrc::invalid_spec, "class and image counts must be positive");
  if (spec.channels != 1 && spec.channels != 3)
    throw DatasetError(DatasetErrc::invalid_spec,
                       "unsupported channel count " + std::to_string(spec.channels));
  if (spec.height < 4 || spec.width < 4)
    throw DatasetError(DatasetErrc::invalid_spec, "images must be at least 4x4");

  const Geometry g{spec.channels, spec.height, spec.width};
  const RngStream root(spec.seed, 0, 0, Purpose::synth);
  std::vector<ClassData> classes;
  const std::array<std::pair<Split, int>, 3> splits{
      {{Split::train, spec.train_classes}, {Split::val, spec.val_classes}, {Split::test, spec.test_classes}}};
  std::uint64_t class_counter = 0;
  for (const auto& [split, count] : splits) {
    for (int i = 0; i < count; ++i, ++class_counter) {
      const RngStream class_rng = root.fork(class_counter);
      const ClassPattern pattern = make_pattern(class_rng.fork(0));
      ClassData c;
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03d", std::string(to_string(split)).c_str(), i);
      c.id = id;
      c.split = split;
      c.images.reserve(static_cast<std::size_t>(spec.images_per_class));
      for (int k = 0; k < spec.images_per_class; ++k)
        c.images.push_back(render(pattern, g, class_rng.fork(1 + static_cast<std::uint64_t>(k))));
      classes.push_back(std::move(c));
    }
  }
  return FewShotDataset(g, std::move(classes));
}

}  // namespace metaaug
