#include "sdn/splat.hpp"

#include <cmath>
#include <limits>

namespace sdn::splat {

namespace {

// The four bilinear taps around a landing position. Taps use floor and
// floor+1 so an integer landing puts all weight on a single pixel.
template <class T>
struct Taps {
  int x0, y0;
  T fx, fy;  // fractional offsets in [0, 1)
};

template <class T>
Taps<T> taps_at(const geometry::Vec2<T>& l) {
  const T xf = std::floor(l.x());
  const T yf = std::floor(l.y());
  return Taps<T>{int(xf), int(yf), l.x() - xf, l.y() - yf};
}

}  // namespace

template <class T>
void splat_one(const Frame<T>& src, const CameraView& view_s, const CameraView& view_t,
               SplatBuffer<T>& buf, const SplatParams<T>& params, Image<T>* nearest_z) {
  SDN_CHECK_CONFIG(src.color.width() == src.depth.width() &&
                       src.color.height() == src.depth.height() &&
                       src.mask.width() == src.depth.width() &&
                       src.mask.height() == src.depth.height(),
                   "splat_one: source color/depth/mask dimensions differ");
  SDN_CHECK_CONFIG(buf.color_accum.width() == view_t.intrinsics.width &&
                       buf.color_accum.height() == view_t.intrinsics.height,
                   "splat_one: buffer is not sized to the target view");
  SDN_CHECK_CONFIG(src.color.channels() == 3, "splat_one: color must have 3 channels");

  const auto rel = geometry::RelativeTransform::between(view_s.pose, view_t.pose);
  const Eigen::Matrix<T, 3, 3> rot = rel.R.template cast<T>();
  const Eigen::Matrix<T, 3, 1> trans = rel.t.template cast<T>();
  const auto& intr_s = view_s.intrinsics;
  const auto& intr_t = view_t.intrinsics;
  const int tw = buf.color_accum.width();
  const int th = buf.color_accum.height();

  for (int y = 0; y < src.depth.height(); ++y) {
    for (int x = 0; x < src.depth.width(); ++x) {
      if (!src.valid_at(x, y)) continue;
      const T d = src.depth(x, y);
      const geometry::Vec2<T> ps(static_cast<T>(x), static_cast<T>(y));
      const geometry::Vec3<T> ray = geometry::pixel_ray(ps, intr_s);
      const geometry::Vec3<T> q = rot * ray * d + trans;
      if (!(q.z() > T(0))) continue;  // behind the target camera
      const geometry::Vec2<T> l(T(intr_t.fx) * q.x() / q.z() + T(intr_t.cx),
                                T(intr_t.fy) * q.y() / q.z() + T(intr_t.cy));
      const T wc = geometry::pixel_confidence(ps, d, intr_s, params.confidence);
      const auto tp = taps_at(l);
      const T wx[2] = {T(1) - tp.fx, tp.fx};
      const T wy[2] = {T(1) - tp.fy, tp.fy};
      for (int j = 0; j < 2; ++j) {
        const int ty = tp.y0 + j;
        if (ty < 0 || ty >= th) continue;
        for (int i = 0; i < 2; ++i) {
          const int tx = tp.x0 + i;
          if (tx < 0 || tx >= tw) continue;
          const T wb = wx[i] * wy[j];
          if (wb == T(0)) continue;
          const T w = wc * wb;
          for (int c = 0; c < 3; ++c) buf.color_accum(tx, ty, c) += w * src.color(x, y, c);
          buf.weight_accum(tx, ty) += w;
          if (nearest_z && (*nearest_z)(tx, ty) > q.z()) (*nearest_z)(tx, ty) = q.z();
        }
      }
    }
  }
}

template <class T>
SplatResult<T> splat_many(const std::vector<SplatSource<T>>& sources, const CameraView& target,
                          const SplatParams<T>& params) {
  SDN_CHECK_CONFIG(!sources.empty(), "splat_many: at least one source view is required");
  for (const auto& s : sources)
    SDN_CHECK_CONFIG(s.view.id != target.id, "splat_many: target view listed among sources");

  SplatResult<T> out;
  auto buf = SplatBuffer<T>::zeros(target.intrinsics.width, target.intrinsics.height,
                                   params.epsilon);
  if (params.depth_diagnostic)
    out.nearest_z = Image<T>(buf.color_accum.width(), buf.color_accum.height(), 1,
                             std::numeric_limits<T>::max());
  for (const auto& s : sources)
    splat_one(s.frame, s.view, target, buf, params,
              params.depth_diagnostic ? &out.nearest_z : nullptr);

  out.image = buf.normalized();
  out.weights = buf.weight_accum;
  out.mask = MaskImage(buf.weight_accum.width(), buf.weight_accum.height(), 1);
  for (int y = 0; y < out.mask.height(); ++y)
    for (int x = 0; x < out.mask.width(); ++x)
      out.mask(x, y) = buf.weight_accum(x, y) > T(0) ? 1 : 0;

  out.state = std::make_shared<SplatForwardState<T>>();
  out.state->sources = sources;
  out.state->target = target;
  out.state->params = params;
  out.state->color_accum = std::move(buf.color_accum);
  out.state->weight_accum = buf.weight_accum;
  return out;
}

template <class T>
SplatGradients<T> splat_backward(const SplatForwardState<T>& state, const Image<T>& upstream) {
  const int tw = state.color_accum.width();
  const int th = state.color_accum.height();
  SDN_CHECK_CONFIG(upstream.width() == tw && upstream.height() == th && upstream.channels() == 3,
                   "splat_backward: upstream gradient shape mismatch");

  // Gradients of the loss w.r.t. the un-normalized accumulators:
  //   I_hat = CA / (W + eps)
  //   dL/dCA = g / (W + eps)
  //   dL/dW  = -sum_c g_c * CA_c / (W + eps)^2
  Image<T> g_ca(tw, th, 3);
  Image<T> g_wa(tw, th, 1);
  const T eps = state.params.epsilon;
  for (int y = 0; y < th; ++y) {
    for (int x = 0; x < tw; ++x) {
      const T w = state.weight_accum(x, y) + eps;
      T acc = T(0);
      for (int c = 0; c < 3; ++c) {
        const T g = upstream(x, y, c);
        g_ca(x, y, c) = g / w;
        acc += g * state.color_accum(x, y, c);
      }
      g_wa(x, y) = -acc / (w * w);
    }
  }

  SplatGradients<T> grads;
  grads.d_depth.reserve(state.sources.size());
  grads.d_color.reserve(state.sources.size());
  const auto& intr_t = state.target.intrinsics;

  for (const auto& s : state.sources) {
    const auto rel = geometry::RelativeTransform::between(s.view.pose, state.target.pose);
    const Eigen::Matrix<T, 3, 3> rot = rel.R.template cast<T>();
    const Eigen::Matrix<T, 3, 1> trans = rel.t.template cast<T>();
    const auto& intr_s = s.view.intrinsics;
    Image<T> dd(s.frame.depth.width(), s.frame.depth.height(), 1);
    Image<T> dc(s.frame.depth.width(), s.frame.depth.height(), 3);

    for (int y = 0; y < s.frame.depth.height(); ++y) {
      for (int x = 0; x < s.frame.depth.width(); ++x) {
        if (!s.frame.valid_at(x, y)) continue;
        const T d = s.frame.depth(x, y);
        const geometry::Vec2<T> ps(static_cast<T>(x), static_cast<T>(y));
        const geometry::Vec3<T> ray = geometry::pixel_ray(ps, intr_s);
        const geometry::Vec3<T> u = rot * ray;  // dq/dd
        const geometry::Vec3<T> q = u * d + trans;
        if (!(q.z() > T(0))) continue;
        const T qz2 = q.z() * q.z();
        const geometry::Vec2<T> l(T(intr_t.fx) * q.x() / q.z() + T(intr_t.cx),
                                  T(intr_t.fy) * q.y() / q.z() + T(intr_t.cy));
        // landing position sensitivity to source depth
        const T dlx_dd = T(intr_t.fx) * (u.x() * q.z() - q.x() * u.z()) / qz2;
        const T dly_dd = T(intr_t.fy) * (u.y() * q.z() - q.y() * u.z()) / qz2;
        const T wd = geometry::depth_confidence(d, state.params.confidence);
        const T wr = state.params.confidence.radial_weighting
                         ? geometry::radial_confidence(ps, intr_s)
                         : T(1);
        const T wc = wd * wr;
        const T dwc_dd = -wc / T(state.params.confidence.sigma_d);

        const auto tp = taps_at(l);
        const T wx[2] = {T(1) - tp.fx, tp.fx};
        const T wy[2] = {T(1) - tp.fy, tp.fy};
        const T dwx[2] = {T(-1), T(1)};  // d(wx)/d(l.x)
        T g_wc = T(0);   // dL/dwc accumulated over taps
        T g_lx = T(0);   // dL/d(l.x)
        T g_ly = T(0);
        for (int j = 0; j < 2; ++j) {
          const int ty = tp.y0 + j;
          if (ty < 0 || ty >= th) continue;
          for (int i = 0; i < 2; ++i) {
            const int tx = tp.x0 + i;
            if (tx < 0 || tx >= tw) continue;
            const T wb = wx[i] * wy[j];
            // s1: coefficient of (wc * wb) in dL
            T s1 = g_wa(tx, ty);
            for (int c = 0; c < 3; ++c) {
              s1 += g_ca(tx, ty, c) * s.frame.color(x, y, c);
              dc(x, y, c) += wc * wb * g_ca(tx, ty, c);
            }
            g_wc += wb * s1;
            g_lx += wc * dwx[i] * wy[j] * s1;
            g_ly += wc * wx[i] * dwx[j] * s1;
          }
        }
        dd(x, y) = g_wc * dwc_dd + g_lx * dlx_dd + g_ly * dly_dd;
      }
    }
    grads.d_depth.push_back(std::move(dd));
    grads.d_color.push_back(std::move(dc));
  }
  return grads;
}

template void splat_one<float>(const Frame<float>&, const CameraView&, const CameraView&,
                               SplatBuffer<float>&, const SplatParams<float>&, Image<float>*);
template void splat_one<double>(const Frame<double>&, const CameraView&, const CameraView&,
                                SplatBuffer<double>&, const SplatParams<double>&, Image<double>*);
template SplatResult<float> splat_many<float>(const std::vector<SplatSource<float>>&,
                                              const CameraView&, const SplatParams<float>&);
template SplatResult<double> splat_many<double>(const std::vector<SplatSource<double>>&,
                                                const CameraView&, const SplatParams<double>&);
template SplatGradients<float> splat_backward<float>(const SplatForwardState<float>&,
                                                     const Image<float>&);
template SplatGradients<double> splat_backward<double>(const SplatForwardState<double>&,
                                                       const Image<double>&);

}  // namespace sdn::splat
