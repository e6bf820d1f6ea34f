#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaaug/error.hpp"

namespace metaaug {

struct Geometry {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
  friend bool operator==(const Geometry&, const Geometry&) = default;
};

// Raw pixel values live in [0, 255] for both element types; the float form
// is what episodes carry so that mixing kernels can produce fractional values.
inline constexpr double kDomainMax = 255.0;

// C x H x W block, channel-major then row-major.
template <class T>
class ImageTensor {
 public:
  using value_type = T;

  ImageTensor() = default;
  explicit ImageTensor(Geometry g, T fill = T{}) : geometry_(check(g)), data_(g.size(), fill) {}
  ImageTensor(int c, int h, int w, T fill = T{}) : ImageTensor(Geometry{c, h, w}, fill) {}
  ImageTensor(Geometry g, std::vector<T> data) : geometry_(check(g)), data_(std::move(data)) {
    if (data_.size() != geometry_.size())
      throw GeometryError("image data length " + std::to_string(data_.size()) +
                          " does not match geometry " + geometry_.str());
  }

  const Geometry& geometry() const { return geometry_; }
  int channels() const { return geometry_.channels; }
  int height() const { return geometry_.height; }
  int width() const { return geometry_.width; }
  std::size_t plane() const {
    return static_cast<std::size_t>(geometry_.height) * static_cast<std::size_t>(geometry_.width);
  }

  T& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::span<T> channel(int c) { return std::span<T>(data_).subspan(c * plane(), plane()); }
  std::span<const T> channel(int c) const {
    return std::span<const T>(data_).subspan(c * plane(), plane());
  }

  bool same_geometry(const ImageTensor& other) const { return geometry_ == other.geometry_; }

  template <class U>
  ImageTensor<U> cast() const {
    return ImageTensor<U>(geometry_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  static Geometry check(Geometry g) {
    if (g.channels < 1 || g.height < 1 || g.width < 1)
      throw GeometryError("invalid image geometry " + g.str());
    return g;
  }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * geometry_.height + y) * geometry_.width + x;
  }

  Geometry geometry_{};
  std::vector<T> data_;
};

using RawImage = ImageTensor<std::uint8_t>;
using Image = ImageTensor<float>;

}  // namespace metaaug
