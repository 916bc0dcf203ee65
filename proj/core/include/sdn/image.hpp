#pragma once

#include <cstdint>
#include <vector>

#include "sdn/check.hpp"

namespace sdn {

// Dense row-major raster, channel-interleaved. Pixel (x, y) with y running
// down; index ((y * width) + x) * channels + c.
template <class T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, T fill = T(0))
      : w_(width), h_(height), c_(channels), data_(std::size_t(width) * height * channels, fill) {
    SDN_CHECK_CONFIG(width >= 0 && height >= 0 && channels >= 1, "bad image shape");
  }

  int width() const { return w_; }
  int height() const { return h_; }
  int channels() const { return c_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  T& operator()(int x, int y, int ch = 0) { return data_[idx(x, y, ch)]; }
  const T& operator()(int x, int y, int ch = 0) const { return data_[idx(x, y, ch)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  bool same_shape(const Image& o) const { return w_ == o.w_ && h_ == o.h_ && c_ == o.c_; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < w_ && y >= 0 && y < h_; }

  void fill(T v) { data_.assign(data_.size(), v); }

  template <class U>
  Image<U> cast() const {
    Image<U> out(w_, h_, c_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.raw()[i] = U(data_[i]);
    return out;
  }

 private:
  std::size_t idx(int x, int y, int ch) const {
    return (std::size_t(y) * w_ + x) * c_ + ch;
  }

  int w_ = 0, h_ = 0, c_ = 0;
  std::vector<T> data_;
};

using MaskImage = Image<std::uint8_t>;

// One view at one time step: aligned color, z-depth in meters (0 = invalid)
// and the validity mask (mask != 0 iff depth > 0).
template <class T>
struct Frame {
  Image<T> color;   // 3 channels, values in [0, 1]
  Image<T> depth;   // 1 channel, meters
  MaskImage mask;   // 1 channel, 0/1

  bool valid_at(int x, int y) const {
    return mask(x, y) != 0 && depth(x, y) > T(0);
  }

  template <class U>
  Frame<U> cast() const {
    return Frame<U>{color.template cast<U>(), depth.template cast<U>(), mask};
  }
};

// Builds the validity mask from a depth map: 1 iff depth > 0.
template <class T>
inline MaskImage mask_from_depth(const Image<T>& depth) {
  MaskImage m(depth.width(), depth.height(), 1);
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x)
      m(x, y) = depth(x, y) > T(0) ? 1 : 0;
  return m;
}

}  // namespace sdn
