#include "metaaug/imgaug.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace metaaug {

SoftLabel SoftLabel::one_hot(int ways, int cls) {
  if (cls < 0 || cls >= ways) throw ConfigError("one_hot: class index out of range");
  SoftLabel label;
  label.weights.assign(static_cast<std::size_t>(ways), 0.0);
  label.weights[static_cast<std::size_t>(cls)] = 1.0;
  return label;
}

SoftLabel SoftLabel::mix(const SoftLabel& a, const SoftLabel& b, double lambda) {
  if (a.size() != b.size()) throw GeometryError("label length mismatch");
  SoftLabel out;
  out.weights.resize(a.weights.size());
  for (std::size_t i = 0; i < a.weights.size(); ++i)
    out.weights[i] = lambda * a.weights[i] + (1.0 - lambda) * b.weights[i];
  return out;
}

bool SoftLabel::is_simplex(double tol) const {
  if (weights.empty()) return false;
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) return false;
    sum += w;
  }
  return std::abs(sum - 1.0) <= tol;
}

int SoftLabel::argmax() const {
  return static_cast<int>(std::max_element(weights.begin(), weights.end()) - weights.begin());
}

namespace {

template <class T>
T to_domain(double v) {
  v = std::clamp(v, 0.0, kDomainMax);
  if constexpr (std::is_integral_v<T>)
    return static_cast<T>(std::lround(v));
  else
    return static_cast<T>(v);
}

template <class T>
void require_same(const ImageTensor<T>& a, const ImageTensor<T>& b, const char* op) {
  if (!a.same_geometry(b))
    throw GeometryError(std::string(op) + ": geometry mismatch " + a.geometry().str() + " vs " +
                        b.geometry().str());
}

int clip(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

Box sample_cutmix_box(int height, int width, double lambda, RngStream& rng) {
  const double cut_ratio = std::sqrt(1.0 - lambda);
  const int cut_w = static_cast<int>(width * cut_ratio);
  const int cut_h = static_cast<int>(height * cut_ratio);
  const int cx = rng.uniform_int(0, width - 1);
  const int cy = rng.uniform_int(0, height - 1);
  return Box{clip(cy - cut_h / 2, 0, height), clip(cx - cut_w / 2, 0, width),
             clip(cy + cut_h / 2, 0, height), clip(cx + cut_w / 2, 0, width)};
}

template <class T>
MixOutcome<T> cutmix_with_box(const ImageTensor<T>& a, const SoftLabel& label_a,
                              const ImageTensor<T>& b, const SoftLabel& label_b, const Box& box) {
  require_same(a, b, "cutmix");
  MixOutcome<T> out{a, 1.0, {}};
  const Box clipped{clip(box.y0, 0, a.height()), clip(box.x0, 0, a.width()),
                    clip(box.y1, 0, a.height()), clip(box.x1, 0, a.width())};
  for (int c = 0; c < a.channels(); ++c)
    for (int y = clipped.y0; y < clipped.y1; ++y)
      for (int x = clipped.x0; x < clipped.x1; ++x) out.image(c, y, x) = b(c, y, x);
  const long total = static_cast<long>(a.height()) * a.width();
  out.lambda = static_cast<double>(total - clipped.area()) / static_cast<double>(total);
  out.label = SoftLabel::mix(label_a, label_b, out.lambda);
  return out;
}

template <class T>
MixOutcome<T> cutmix(const ImageTensor<T>& a, const SoftLabel& label_a, const ImageTensor<T>& b,
                     const SoftLabel& label_b, RngStream& rng, double alpha) {
  require_same(a, b, "cutmix");
  const double lambda = rng.beta(alpha, alpha);
  return cutmix_with_box(a, label_a, b, label_b, sample_cutmix_box(a.height(), a.width(), lambda, rng));
}

MixOutcome<float> mixup_with_lambda(const Image& a, const SoftLabel& label_a, const Image& b,
                                    const SoftLabel& label_b, double lambda) {
  require_same(a, b, "mixup");
  MixOutcome<float> out{Image(a.geometry()), lambda, SoftLabel::mix(label_a, label_b, lambda)};
  auto da = a.data();
  auto db = b.data();
  auto dst = out.image.data();
  const float la = static_cast<float>(lambda);
  const float lb = static_cast<float>(1.0 - lambda);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = la * da[i] + lb * db[i];
  return out;
}

MixOutcome<float> mixup(const Image& a, const SoftLabel& label_a, const Image& b,
                        const SoftLabel& label_b, RngStream& rng, double alpha) {
  return mixup_with_lambda(a, label_a, b, label_b, rng.beta(alpha, alpha));
}

template <class T>
ImageTensor<T> self_mix_at(const ImageTensor<T>& img, const Box& source, int dst_y, int dst_x) {
  const int h = source.height(), w = source.width();
  if (source.y0 < 0 || source.x0 < 0 || source.y1 > img.height() || source.x1 > img.width() ||
      dst_y < 0 || dst_x < 0 || dst_y + h > img.height() || dst_x + w > img.width())
    throw GeometryError("self_mix: patch outside image");
  ImageTensor<T> out = img;
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(c, dst_y + y, dst_x + x) = img(c, source.y0 + y, source.x0 + x);
  return out;
}

template <class T>
ImageTensor<T> self_mix(const ImageTensor<T>& img, RngStream& rng) {
  if (img.height() < 2 || img.width() < 2)
    throw GeometryError("self_mix: image smaller than 2x2");
  const int ph = (img.height() + 1) / 2, pw = (img.width() + 1) / 2;
  const int sy = rng.uniform_int(0, img.height() - ph), sx = rng.uniform_int(0, img.width() - pw);
  const int dy = rng.uniform_int(0, img.height() - ph), dx = rng.uniform_int(0, img.width() - pw);
  return self_mix_at(img, Box{sy, sx, sy + ph, sx + pw}, dy, dx);
}

std::optional<Box> sample_erase_box(int height, int width, const AugmentDefaults& p,
                                    RngStream& rng) {
  const double total = static_cast<double>(height) * width;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double area = rng.uniform(p.erase_area_min, p.erase_area_max) * total;
    const double aspect = rng.uniform(p.erase_aspect_min, p.erase_aspect_max);
    const int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    if (h < 1 || w < 1 || h > height || w > width) continue;
    const double fraction = static_cast<double>(h) * w / total;
    if (fraction < p.erase_area_min || fraction > p.erase_area_max) continue;
    const int y = rng.uniform_int(0, height - h);
    const int x = rng.uniform_int(0, width - w);
    return Box{y, x, y + h, x + w};
  }
  return std::nullopt;
}

template <class T>
ImageTensor<T> erase_box(const ImageTensor<T>& img, const Box& box, RngStream& noise) {
  ImageTensor<T> out = img;
  const Box b{clip(box.y0, 0, img.height()), clip(box.x0, 0, img.width()),
              clip(box.y1, 0, img.height()), clip(box.x1, 0, img.width())};
  for (int c = 0; c < img.channels(); ++c)
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) {
        if constexpr (std::is_integral_v<T>)
          out(c, y, x) = static_cast<T>(noise.uniform_int(0, 255));
        else
          out(c, y, x) = static_cast<T>(noise.uniform(0.0, kDomainMax));
      }
  return out;
}

template <class T>
ImageTensor<T> random_erase(const ImageTensor<T>& img, RngStream& rng, const AugmentDefaults& params) {
  const auto box = sample_erase_box(img.height(), img.width(), params, rng);
  if (!box) return img;
  return erase_box(img, *box, rng);
}

template <class T>
ImageTensor<T> rotate90(const ImageTensor<T>& img, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  if (k % 2 == 1 && img.height() != img.width())
    throw GeometryError("rotate90: odd quarter turns need a square image, got " + img.geometry().str());
  const int h = img.height(), w = img.width();
  ImageTensor<T> out(img.geometry());
  for (int c = 0; c < img.channels(); ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        switch (k) {
          case 1: out(c, i, j) = img(c, j, w - 1 - i); break;
          case 2: out(c, i, j) = img(c, h - 1 - i, w - 1 - j); break;
          default: out(c, i, j) = img(c, h - 1 - j, i); break;
        }
      }
  return out;
}

template <class T>
ImageTensor<T> hflip(const ImageTensor<T>& img) {
  ImageTensor<T> out(img.geometry());
  const int w = img.width();
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < w; ++x) out(c, y, x) = img(c, y, w - 1 - x);
  return out;
}

template <class T>
ImageTensor<T> vflip(const ImageTensor<T>& img) {
  ImageTensor<T> out(img.geometry());
  const int h = img.height();
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < img.width(); ++x) out(c, y, x) = img(c, h - 1 - y, x);
  return out;
}

template <class T>
ImageTensor<T> crop_at(const ImageTensor<T>& img, int padding, int offset_y, int offset_x) {
  if (offset_y < 0 || offset_x < 0 || offset_y > 2 * padding || offset_x > 2 * padding)
    throw GeometryError("crop offset outside padded image");
  ImageTensor<T> out(img.geometry(), T{});
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y) {
      const int sy = y + offset_y - padding;
      if (sy < 0 || sy >= img.height()) continue;
      for (int x = 0; x < img.width(); ++x) {
        const int sx = x + offset_x - padding;
        if (sx >= 0 && sx < img.width()) out(c, y, x) = img(c, sy, sx);
      }
    }
  return out;
}

template <class T>
ImageTensor<T> random_crop(const ImageTensor<T>& img, RngStream& rng, int padding) {
  const int oy = rng.uniform_int(0, 2 * padding);
  const int ox = rng.uniform_int(0, 2 * padding);
  return crop_at(img, padding, oy, ox);
}

template <class T>
ImageTensor<T> color_jitter_with(const ImageTensor<T>& img, const JitterFactors& f) {
  const int channels = img.channels();
  const std::size_t plane = img.plane();
  std::vector<double> v(img.data().begin(), img.data().end());
  const auto clamp_all = [&] {
    for (double& x : v) x = std::clamp(x, 0.0, kDomainMax);
  };
  const auto gray_at = [&](std::size_t i) {
    if (channels == 3) return 0.299 * v[i] + 0.587 * v[plane + i] + 0.114 * v[2 * plane + i];
    double s = 0.0;
    for (int c = 0; c < channels; ++c) s += v[c * plane + i];
    return s / channels;
  };

  for (double& x : v) x *= f.brightness;
  clamp_all();

  double mean_gray = 0.0;
  for (std::size_t i = 0; i < plane; ++i) mean_gray += gray_at(i);
  mean_gray /= static_cast<double>(plane);
  for (double& x : v) x = f.contrast * x + (1.0 - f.contrast) * mean_gray;
  clamp_all();

  if (channels > 1) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double g = gray_at(i);
      for (int c = 0; c < channels; ++c) {
        double& x = v[c * plane + i];
        x = f.saturation * x + (1.0 - f.saturation) * g;
      }
    }
    clamp_all();
  }

  ImageTensor<T> out(img.geometry());
  auto dst = out.data();
  for (std::size_t i = 0; i < v.size(); ++i) dst[i] = to_domain<T>(v[i]);
  return out;
}

template <class T>
ImageTensor<T> color_jitter(const ImageTensor<T>& img, RngStream& rng, double strength) {
  JitterFactors f;
  f.brightness = rng.uniform(1.0 - strength, 1.0 + strength);
  f.contrast = rng.uniform(1.0 - strength, 1.0 + strength);
  f.saturation = rng.uniform(1.0 - strength, 1.0 + strength);
  return color_jitter_with(img, f);
}

template <class T>
ImageTensor<T> solarize(const ImageTensor<T>& img, double threshold) {
  ImageTensor<T> out = img;
  for (T& x : out.data())
    if (static_cast<double>(x) > threshold) x = static_cast<T>(kDomainMax - static_cast<double>(x));
  return out;
}

template <class T>
ImageTensor<T> drop_channel_at(const ImageTensor<T>& img, int channel) {
  if (img.channels() < 2)
    throw GeometryError("drop_channel: needs at least 2 channels, got " + img.geometry().str());
  if (channel < 0 || channel >= img.channels()) throw GeometryError("drop_channel: bad channel");
  ImageTensor<T> out = img;
  for (T& x : out.channel(channel)) x = T{};
  return out;
}

template <class T>
ImageTensor<T> drop_channel(const ImageTensor<T>& img, RngStream& rng) {
  if (img.channels() < 2)
    throw GeometryError("drop_channel: needs at least 2 channels, got " + img.geometry().str());
  return drop_channel_at(img, rng.uniform_int(0, img.channels() - 1));
}

#define METAAUG_INSTANTIATE_KERNELS(T)                                                          \
  template MixOutcome<T> cutmix_with_box(const ImageTensor<T>&, const SoftLabel&,               \
                                         const ImageTensor<T>&, const SoftLabel&, const Box&);  \
  template MixOutcome<T> cutmix(const ImageTensor<T>&, const SoftLabel&, const ImageTensor<T>&, \
                                const SoftLabel&, RngStream&, double);                          \
  template ImageTensor<T> self_mix_at(const ImageTensor<T>&, const Box&, int, int);             \
  template ImageTensor<T> self_mix(const ImageTensor<T>&, RngStream&);                          \
  template ImageTensor<T> erase_box(const ImageTensor<T>&, const Box&, RngStream&);             \
  template ImageTensor<T> random_erase(const ImageTensor<T>&, RngStream&, const AugmentDefaults&); \
  template ImageTensor<T> rotate90(const ImageTensor<T>&, int);                                 \
  template ImageTensor<T> hflip(const ImageTensor<T>&);                                         \
  template ImageTensor<T> vflip(const ImageTensor<T>&);                                         \
  template ImageTensor<T> crop_at(const ImageTensor<T>&, int, int, int);                        \
  template ImageTensor<T> random_crop(const ImageTensor<T>&, RngStream&, int);                  \
  template ImageTensor<T> color_jitter_with(const ImageTensor<T>&, const JitterFactors&);       \
  template ImageTensor<T> color_jitter(const ImageTensor<T>&, RngStream&, double);              \
  template ImageTensor<T> solarize(const ImageTensor<T>&, double);                              \
  template ImageTensor<T> drop_channel_at(const ImageTensor<T>&, int);                          \
  template ImageTensor<T> drop_channel(const ImageTensor<T>&, RngStream&);

METAAUG_INSTANTIATE_KERNELS(std::uint8_t)
METAAUG_INSTANTIATE_KERNELS(float)

#undef METAAUG_INSTANTIATE_KERNELS

}  // namespace metaaug
