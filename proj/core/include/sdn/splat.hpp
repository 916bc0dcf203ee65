#pragma once

#include <memory>
#include <vector>

#include "sdn/geometry.hpp"
#include "sdn/image.hpp"

namespace sdn::splat {

using geometry::CameraView;
using geometry::ConfidenceParams;

template <class T>
constexpr T default_epsilon() {
  if constexpr (sizeof(T) >= 8) return T(1e-8);
  return T(1e-6);
}

template <class T>
struct SplatParams {
  ConfidenceParams confidence;
  T epsilon = default_epsilon<T>();
  bool depth_diagnostic = false;  // also track the nearest splatted z per pixel
};

// Accumulation target: weighted color sums and the splatted weight map,
// normalized at the end of splat_many.
template <class T>
struct SplatBuffer {
  Image<T> color_accum;   // W x H x 3
  Image<T> weight_accum;  // W x H
  T epsilon = default_epsilon<T>();

  static SplatBuffer zeros(int width, int height, T epsilon = default_epsilon<T>()) {
    return SplatBuffer{Image<T>(width, height, 3), Image<T>(width, height, 1), epsilon};
  }

  // Weighted-average normalization: color / (weight + epsilon).
  Image<T> normalized() const {
    Image<T> out(color_accum.width(), color_accum.height(), 3);
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        const T w = weight_accum(x, y) + epsilon;
        for (int c = 0; c < 3; ++c) out(x, y, c) = color_accum(x, y, c) / w;
      }
    return out;
  }
};

template <class T>
struct SplatSource {
  Frame<T> frame;
  CameraView view;
};

// Forward state retained for the backward pass. Holds copies of the inputs
// and the un-normalized accumulators; per-contribution geometry is cheap to
// recompute, so it is not stored.
template <class T>
struct SplatForwardState {
  std::vector<SplatSource<T>> sources;
  CameraView target;
  SplatParams<T> params;
  Image<T> color_accum;
  Image<T> weight_accum;
};

template <class T>
struct SplatResult {
  Image<T> image;    // normalized synthesized color
  Image<T> weights;  // splatted weight map W_t (before normalization)
  MaskImage mask;    // M_splat: 1 iff any weight landed on the pixel
  Image<T> nearest_z;  // diagnostic only; empty unless params.depth_diagnostic
  std::shared_ptr<SplatForwardState<T>> state;  // for splat_backward
};

// Gradients of a scalar loss with respect to the splat inputs, per source.
template <class T>
struct SplatGradients {
  std::vector<Image<T>> d_depth;  // 1 channel each, zero at invalid pixels
  std::vector<Image<T>> d_color;  // 3 channels each
};

// Scatters one source frame into the accumulation buffer: each valid source
// pixel lands at sub-pixel target coordinates and distributes
// w_c * w_b * color over the 2x2 integer neighborhood (w_c * w_b * 1 into the
// weight map). Taps outside the target domain are dropped without
// renormalizing w_b.
template <class T>
void splat_one(const Frame<T>& src, const CameraView& view_s, const CameraView& view_t,
               SplatBuffer<T>& buf, const SplatParams<T>& params, Image<T>* nearest_z = nullptr);

// Many-to-one scheme: zero-initialized buffer, all sources splatted in order,
// then weighted-average normalization. Deterministic: contributions are
// accumulated in view-major, row-major order on a single thread.
template <class T>
SplatResult<T> splat_many(const std::vector<SplatSource<T>>& sources, const CameraView& target,
                          const SplatParams<T>& params);

// Exact gradients of the *normalized* output with respect to every source
// color and source depth. Depth gradients flow through the bilinear weights,
// the landing position, and w_d.
template <class T>
SplatGradients<T> splat_backward(const SplatForwardState<T>& state, const Image<T>& upstream);

template <class T>
SplatGradients<T> splat_backward(const SplatResult<T>& result, const Image<T>& upstream) {
  SDN_CHECK_USAGE(result.state != nullptr,
                  "splat_backward: forward state was not retained");
  return splat_backward(*result.state, upstream);
}

}  // namespace sdn::splat
