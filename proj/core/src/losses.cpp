#include "sdn/losses.hpp"

#include <array>

namespace sdn::losses {

using nn::Tensor;

namespace {

template <class T>
std::int64_t count_positive(const Tensor<T>& mask) {
  std::int64_t n = 0;
  for (T v : mask.value())
    if (v > T(0)) ++n;
  return n;
}

template <class T>
constexpr T norm_guard() {
  if constexpr (sizeof(T) >= 8) return T(1e-20);
  return T(1e-12);
}

// Constant tensor helpers (never on the tape).
template <class T, class F>
Tensor<T> constant_map(const std::vector<int>& shape, std::size_t n, F f) {
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = f(i);
  return Tensor<T>::constant(shape, std::move(v));
}

}  // namespace

template <class T>
LossTerm<T> color_loss(const Tensor<T>& i_hat, const Tensor<T>& i_dd,
                       const Tensor<T>& joint_mask, T gamma) {
  SDN_CHECK_CONFIG(gamma > T(0), "color_loss: gamma must be positive");
  SDN_CHECK_CONFIG(!joint_mask.on_tape(), "color_loss: mask must be constant");
  const std::int64_t count = count_positive(joint_mask);
  if (count == 0) return {Tensor<T>::scalar(T(0)), 0};
  auto l1 = nn::channel_sum(nn::abs(nn::sub(i_dd, i_hat)));
  auto rho = nn::sqrt(nn::add_scalar(nn::square(l1), gamma * gamma));
  auto masked = nn::mul(rho, joint_mask);
  return {nn::mul_scalar(nn::sum_all(masked), T(1) / T(count)), count};
}

template <class T>
LossTerm<T> structural_loss(const Tensor<T>& i_hat, const Tensor<T>& i_dd, const Tensor<T>& mask,
                            const Tensor<T>& splat_mask, T tukey_c) {
  SDN_CHECK_CONFIG(!mask.on_tape() && !splat_mask.on_tape(),
                   "structural_loss: masks must be constant");
  SDN_CHECK_CONFIG(mask.shape() == splat_mask.shape(), "structural_loss: mask shape mismatch");
  const T c1 = T(1e-4);  // (0.01 * L)^2, L = 1
  const T c2 = T(9e-4);  // (0.03 * L)^2

  // Valid windows: all 9 splat-mask taps present, gated by M at the center.
  const int N = mask.dim(0), H = mask.dim(2), W = mask.dim(3);
  std::vector<T> wm(mask.numel(), T(0));
  {
    const auto& ms = splat_mask.value();
    const auto& mv = mask.value();
    for (int n = 0; n < N; ++n) {
      const T* sm = ms.data() + std::size_t(n) * H * W;
      const T* m = mv.data() + std::size_t(n) * H * W;
      T* out = wm.data() + std::size_t(n) * H * W;
      for (int y = 1; y < H - 1; ++y)
        for (int x = 1; x < W - 1; ++x) {
          if (!(m[y * W + x] > T(0))) continue;
          bool full = true;
          for (int j = -1; j <= 1 && full; ++j)
            for (int i = -1; i <= 1; ++i)
              if (!(sm[(y + j) * W + x + i] > T(0))) {
                full = false;
                break;
              }
          if (full) out[y * W + x] = T(1);
        }
    }
  }
  Tensor<T> window_mask = Tensor<T>::constant(mask.shape(), std::move(wm));
  const std::int64_t count = count_positive(window_mask);
  if (count == 0) return {Tensor<T>::scalar(T(0)), 0};

  const T inv9 = T(1) / T(9);
  auto mean_x = nn::mul_scalar(nn::box3(i_dd), inv9);
  auto mean_y = nn::mul_scalar(nn::box3(i_hat), inv9);
  auto var_x = nn::sub(nn::mul_scalar(nn::box3(nn::square(i_dd)), inv9), nn::square(mean_x));
  auto var_y = nn::sub(nn::mul_scalar(nn::box3(nn::square(i_hat)), inv9), nn::square(mean_y));
  auto cov = nn::sub(nn::mul_scalar(nn::box3(nn::mul(i_dd, i_hat)), inv9),
                     nn::mul(mean_x, mean_y));
  auto numer = nn::mul(nn::add_scalar(nn::mul_scalar(nn::mul(mean_x, mean_y), T(2)), c1),
                       nn::add_scalar(nn::mul_scalar(cov, T(2)), c2));
  auto denom = nn::mul(nn::add_scalar(nn::add(nn::square(mean_x), nn::square(mean_y)), c1),
                       nn::add_scalar(nn::add(var_x, var_y), c2));
  auto ssim = nn::div(numer, denom);  // (N,3,H,W)
  auto one_minus = nn::add_scalar(nn::mul_scalar(nn::channel_sum(ssim), T(-1) / T(3)), T(1));
  auto robust = nn::tukey_rho(one_minus, tukey_c);
  auto masked = nn::mul(robust, window_mask);
  auto loss = nn::mul_scalar(nn::sum_all(masked), T(0.5) / T(count));
  return {loss, count};
}

template <class T>
LossTerm<T> berhu_depth_loss(const std::vector<Tensor<T>>& residuals,
                             const std::vector<Tensor<T>>& masks, T fraction, T* border_out) {
  std::int64_t count = 0;
  auto loss = nn::berhu_joint(residuals, masks, fraction, border_out, &count);
  return {loss, count};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> normals_on_tape(const Tensor<T>& depth_m,
                                                const geometry::CameraView& view,
                                                const Tensor<T>& valid) {
  SDN_CHECK_CONFIG(!valid.on_tape(), "normals_on_tape: validity mask must be constant");
  SDN_CHECK_CONFIG(depth_m.shape() == valid.shape() && depth_m.dim(1) == 1,
                   "normals_on_tape: expect (N,1,H,W) depth and matching mask");
  const int N = depth_m.dim(0), H = depth_m.dim(2), W = depth_m.dim(3);
  const auto& intr = view.intrinsics;
  SDN_CHECK_CONFIG(intr.width == W && intr.height == H,
                   "normals_on_tape: view does not match tensor size");

  // Constant ray-direction grid: deproject(p, d) = d * dirs(p).
  std::vector<T> dirs(std::size_t(3) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      dirs[(0 * std::size_t(H) + y) * W + x] = T((x - intr.cx) / intr.fx);
      dirs[(1 * std::size_t(H) + y) * W + x] = T((y - intr.cy) / intr.fy);
      dirs[(2 * std::size_t(H) + y) * W + x] = T(1);
    }
  auto dirs_t = Tensor<T>::constant({1, 3, H, W}, std::move(dirs));
  auto v = nn::broadcast_mul(depth_m, dirs_t);  // (N,3,H,W)

  // Tangent along one axis with central/forward/backward selection masks.
  const auto& mv = valid.value();
  auto axis_tangent = [&](int dy, int dx, Tensor<T>& tangent, std::vector<T>& axis_ok) {
    std::vector<T> cm(valid.numel(), T(0)), fm(valid.numel(), T(0)), bm(valid.numel(), T(0));
    axis_ok.assign(valid.numel(), T(0));
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const std::size_t i = (std::size_t(n) * H + y) * W + x;
          if (!(mv[i] > T(0))) continue;
          const int xp = x + dx, yp = y + dy, xm_ = x - dx, ym = y - dy;
          const bool plus = xp >= 0 && xp < W && yp >= 0 && yp < H &&
                            mv[(std::size_t(n) * H + yp) * W + xp] > T(0);
          const bool minus = xm_ >= 0 && xm_ < W && ym >= 0 && ym < H &&
                             mv[(std::size_t(n) * H + ym) * W + xm_] > T(0);
          if (plus && minus)
            cm[i] = T(1);
          else if (plus)
            fm[i] = T(1);
          else if (minus)
            bm[i] = T(1);
          else
            continue;
          axis_ok[i] = T(1);
        }
    auto cm_t = Tensor<T>::constant(valid.shape(), std::move(cm));
    auto fm_t = Tensor<T>::constant(valid.shape(), std::move(fm));
    auto bm_t = Tensor<T>::constant(valid.shape(), std::move(bm));
    auto vp = nn::shift2d(v, -dy, -dx);  // v at p + (dy,dx)
    auto vm = nn::shift2d(v, dy, dx);    // v at p - (dy,dx)
    auto central = nn::broadcast_mul(nn::sub(vp, vm), cm_t);
    auto forward = nn::broadcast_mul(nn::sub(vp, v), fm_t);
    auto backward = nn::broadcast_mul(nn::sub(v, vm), bm_t);
    tangent = nn::add(nn::add(central, forward), backward);
  };

  Tensor<T> tx, ty;
  std::vector<T> x_ok, y_ok;
  axis_tangent(0, 1, tx, x_ok);
  axis_tangent(1, 0, ty, y_ok);

  auto comp = [](const Tensor<T>& t, int c) { return nn::slice_channels(t, c, 1); };
  auto cross_x = nn::sub(nn::mul(comp(tx, 1), comp(ty, 2)), nn::mul(comp(tx, 2), comp(ty, 1)));
  auto cross_y = nn::sub(nn::mul(comp(tx, 2), comp(ty, 0)), nn::mul(comp(tx, 0), comp(ty, 2)));
  auto cross_z = nn::sub(nn::mul(comp(tx, 0), comp(ty, 1)), nn::mul(comp(tx, 1), comp(ty, 0)));
  auto raw = nn::concat_channels(nn::concat_channels(cross_x, cross_y), cross_z);
  auto inv_norm = nn::rsqrt(nn::add_scalar(nn::channel_sum(nn::square(raw)), norm_guard<T>()));
  auto normals = nn::broadcast_mul(raw, inv_norm);

  std::vector<T> nv(valid.numel(), T(0));
  for (std::size_t i = 0; i < nv.size(); ++i)
    if (x_ok[i] > T(0) && y_ok[i] > T(0)) nv[i] = T(1);
  auto normal_valid = Tensor<T>::constant(valid.shape(), std::move(nv));
  return {normals, normal_valid};
}

template <class T>
LossTerm<T> surface_loss(const Tensor<T>& depth_m, const geometry::CameraView& view,
                         const Tensor<T>& pred_valid, const Tensor<T>& gate_mask) {
  SDN_CHECK_CONFIG(!gate_mask.on_tape(), "surface_loss: gate mask must be constant");
  auto [normals, nvalid] = normals_on_tape(depth_m, view, pred_valid);
  const int N = depth_m.dim(0), H = depth_m.dim(2), W = depth_m.dim(3);

  static constexpr std::array<std::array<int, 2>, 8> kOffsets{
      {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};

  // G(p): number of valid-normal neighbors (constant).
  const auto& nvv = nvalid.value();
  std::vector<T> g_count(nvalid.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        T g = T(0);
        for (const auto& o : kOffsets) {
          const int yy = y + o[0], xx = x + o[1];
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          if (nvv[(std::size_t(n) * H + yy) * W + xx] > T(0)) g += T(1);
        }
        g_count[(std::size_t(n) * H + y) * W + x] = g;
      }

  Tensor<T> acc;
  bool first = true;
  for (const auto& o : kOffsets) {
    auto n_shift = nn::shift2d(normals, o[0], o[1]);
    std::vector<T> nv_shift(nvalid.numel(), T(0));
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int sy = y - o[0], sx = x - o[1];
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
          nv_shift[(std::size_t(n) * H + y) * W + x] =
              nvv[(std::size_t(n) * H + sy) * W + sx];
        }
    auto nv_shift_t = Tensor<T>::constant(nvalid.shape(), std::move(nv_shift));
    auto dot = nn::abs(nn::channel_sum(nn::mul(normals, n_shift)));
    auto term = nn::mul(dot, nv_shift_t);
    acc = first ? term : nn::add(acc, term);
    first = false;
  }

  // Gate: M(p), valid normal at p, and at least one valid-normal neighbor.
  const auto& gv = gate_mask.value();
  std::vector<T> gate(nvalid.numel(), T(0));
  std::vector<T> inv_g(nvalid.numel(), T(0));
  std::int64_t count = 0;
  for (std::size_t i = 0; i < gate.size(); ++i) {
    if (g_count[i] > T(0)) inv_g[i] = T(1) / g_count[i];
    if (gv[i] > T(0) && nvv[i] > T(0) && g_count[i] > T(0)) {
      gate[i] = T(1);
      ++count;
    }
  }
  if (count == 0) return {Tensor<T>::scalar(T(0)), 0};
  auto weighted = nn::mul(nn::mul(acc, Tensor<T>::constant(nvalid.shape(), std::move(inv_g))),
                          Tensor<T>::constant(nvalid.shape(), std::move(gate)));
  auto mean = nn::mul_scalar(nn::sum_all(weighted), T(1) / T(count));
  return {nn::add_scalar(nn::neg(mean), T(1)), count};
}

LossReport make_report(double l_col, double l_str, double l_ph, double l_depth, double l_surface,
                       std::int64_t valid_count, const LossWeights& w) {
  LossReport r;
  r.l_col = l_col;
  r.l_str = l_str;
  r.l_ph = l_ph;
  r.l_depth = l_depth;
  r.l_surface = l_surface;
  r.l_total = w.lambda1 * l_ph + w.lambda2 * l_depth + w.lambda3 * l_surface;
  r.valid_pixel_count = valid_count;
  r.weights = w;
  return r;
}

#define SDN_LOSSES_INSTANTIATE(T)                                                              \
  template LossTerm<T> color_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template LossTerm<T> structural_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          const Tensor<T>&, T);                                \
  template LossTerm<T> berhu_depth_loss<T>(const std::vector<Tensor<T>>&,                      \
                                           const std::vector<Tensor<T>>&, T, T*);              \
  template std::pair<Tensor<T>, Tensor<T>> normals_on_tape<T>(                                 \
      const Tensor<T>&, const geometry::CameraView&, const Tensor<T>&);                        \
  template LossTerm<T> surface_loss<T>(const Tensor<T>&, const geometry::CameraView&,          \
                                       const Tensor<T>&, const Tensor<T>&);

SDN_LOSSES_INSTANTIATE(float)
SDN_LOSSES_INSTANTIATE(double)

#undef SDN_LOSSES_INSTANTIATE

}  // namespace sdn::losses
