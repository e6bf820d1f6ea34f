#pragma once

#include <optional>
#include <vector>

#include "metaaug/image.hpp"
#include "metaaug/rng.hpp"

namespace metaaug {

// Class mass over the N ways of an episode.
struct SoftLabel {
  std::vector<double> weights;

  static SoftLabel one_hot(int ways, int cls);
  // lambda * a + (1 - lambda) * b
  static SoftLabel mix(const SoftLabel& a, const SoftLabel& b, double lambda);

  int size() const { return static_cast<int>(weights.size()); }
  bool is_simplex(double tol = 1e-9) const;
  // Index of the largest weight, lowest index on ties.
  int argmax() const;

  friend bool operator==(const SoftLabel&, const SoftLabel&) = default;
};

template <class T>
struct MixOutcome {
  ImageTensor<T> image;
  double lambda = 1.0;  // fraction attributed to the first input
  SoftLabel label;
};

// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct Box {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;

  int height() const { return y1 > y0 ? y1 - y0 : 0; }
  int width() const { return x1 > x0 ? x1 - x0 : 0; }
  long area() const { return static_cast<long>(height()) * width(); }
  bool empty() const { return area() == 0; }
  friend bool operator==(const Box&, const Box&) = default;
};

// Every kernel hyperparameter; all are run-config keys.
struct AugmentDefaults {
  double cutmix_alpha = 1.0;
  double mixup_alpha = 1.0;
  double feature_mixup_alpha = 1.0;
  double erase_area_min = 0.02;
  double erase_area_max = 0.33;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.3;
  double jitter = 0.4;
  int crop_padding = 4;
  double solarize_threshold = 128.0;
  double hflip_probability = 0.5;
  int shot_copies = 1;
};

// CutMix box sampling: side fractions sqrt(1 - lambda), uniform center, clipped.
Box sample_cutmix_box(int height, int width, double lambda, RngStream& rng);

template <class T>
MixOutcome<T> cutmix_with_box(const ImageTensor<T>& a, const SoftLabel& label_a,
                              const ImageTensor<T>& b, const SoftLabel& label_b, const Box& box);
template <class T>
MixOutcome<T> cutmix(const ImageTensor<T>& a, const SoftLabel& label_a, const ImageTensor<T>& b,
                     const SoftLabel& label_b, RngStream& rng, double alpha = 1.0);

MixOutcome<float> mixup_with_lambda(const Image& a, const SoftLabel& label_a, const Image& b,
                                    const SoftLabel& label_b, double lambda);
MixOutcome<float> mixup(const Image& a, const SoftLabel& label_a, const Image& b,
                        const SoftLabel& label_b, RngStream& rng, double alpha = 1.0);

// Copies the `source` patch of `img` onto the equal-size patch whose top-left
// corner is (dst_y, dst_x).
template <class T>
ImageTensor<T> self_mix_at(const ImageTensor<T>& img, const Box& source, int dst_y, int dst_x);
template <class T>
ImageTensor<T> self_mix(const ImageTensor<T>& img, RngStream& rng);

std::optional<Box> sample_erase_box(int height, int width, const AugmentDefaults& params,
                                    RngStream& rng);
template <class T>
ImageTensor<T> erase_box(const ImageTensor<T>& img, const Box& box, RngStream& noise);
template <class T>
ImageTensor<T> random_erase(const ImageTensor<T>& img, RngStream& rng,
                            const AugmentDefaults& params = {});

// Counter-clockwise quarter turns. Odd k on non-square input throws GeometryError.
template <class T>
ImageTensor<T> rotate90(const ImageTensor<T>& img, int k);
template <class T>
ImageTensor<T> hflip(const ImageTensor<T>& img);
template <class T>
ImageTensor<T> vflip(const ImageTensor<T>& img);

// Zero-pad by `padding` on every side, then take the HxW window at (offset_y, offset_x).
template <class T>
ImageTensor<T> crop_at(const ImageTensor<T>& img, int padding, int offset_y, int offset_x);
template <class T>
ImageTensor<T> random_crop(const ImageTensor<T>& img, RngStream& rng, int padding = 4);

struct JitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

template <class T>
ImageTensor<T> color_jitter_with(const ImageTensor<T>& img, const JitterFactors& factors);
template <class T>
ImageTensor<T> color_jitter(const ImageTensor<T>& img, RngStream& rng, double strength = 0.4);

template <class T>
ImageTensor<T> solarize(const ImageTensor<T>& img, double threshold);

template <class T>
ImageTensor<T> drop_channel_at(const ImageTensor<T>& img, int channel);
template <class T>
ImageTensor<T> drop_channel(const ImageTensor<T>& img, RngStream& rng);

}  // namespace metaaug
