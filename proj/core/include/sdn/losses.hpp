#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sdn/geometry.hpp"
#include "sdn/nn.hpp"

namespace sdn::losses {

// Scalar robust penalties.

// Charbonnier: smooth L1 surrogate sqrt(x^2 + gamma^2).
template <class T>
inline T charbonnier(T x, T gamma) {
  return std::sqrt(x * x + gamma * gamma);
}

// Tukey biweight rho-function; saturates at c^2/6 so gradients vanish for
// residuals beyond the cutoff.
template <class T>
inline T tukey(T x, T c) {
  const T sat = c * c / T(6);
  if (std::abs(x) >= c) return sat;
  const T t = T(1) - (x / c) * (x / c);
  return sat * (T(1) - t * t * t);
}

// BerHu (inverse Huber) with an explicit border.
template <class T>
inline T berhu(T r, T c) {
  const T a = std::abs(r);
  if (a <= c) return a;
  return (r * r + c * c) / (T(2) * c);
}

// Term weights and robust-penalty constants.
struct LossWeights {
  double lambda1 = 0.85;  // photometric
  double lambda2 = 0.1;   // depth prior
  double lambda3 = 0.05;  // surface prior
  double alpha = 0.85;    // structural share of the photometric loss
  double gamma = 0.447;   // Charbonnier constant
  double tukey_c = 2.2;   // Tukey cutoff
  double berhu_fraction = 0.2;

  void validate() const {
    SDN_CHECK_CONFIG(std::abs(lambda1 + lambda2 + lambda3 - 1.0) <= 1e-9,
                     "loss weights: lambda1+lambda2+lambda3 must equal 1");
    SDN_CHECK_CONFIG(alpha > 0 && alpha < 1, "loss weights: alpha out of (0,1)");
    SDN_CHECK_CONFIG(gamma > 0, "loss weights: gamma must be positive");
    SDN_CHECK_CONFIG(tukey_c > 0, "loss weights: tukey_c must be positive");
    SDN_CHECK_CONFIG(berhu_fraction > 0 && berhu_fraction < 1,
                     "loss weights: berhu_fraction out of (0,1)");
  }
};

// Per-step loss values together with the weights that produced them.
struct LossReport {
  double l_col = 0, l_str = 0, l_ph = 0, l_depth = 0, l_surface = 0, l_total = 0;
  std::int64_t valid_pixel_count = 0;
  LossWeights weights;
  bool empty_mask_warning = false;
};

// A scalar loss term on the tape plus the number of pixels it averaged over.
// A zero count means the term degenerated to 0 (with a warning flag upstream).
template <class T>
struct LossTerm {
  nn::Tensor<T> value;
  std::int64_t valid_count = 0;
};

// Mean over valid pixels of charbonnier(||I_dd - I_hat||_1). `joint_mask` is
// M * M_splat as a constant (N,1,H,W) tensor; invalid pixels contribute
// neither value nor gradient.
template <class T>
LossTerm<T> color_loss(const nn::Tensor<T>& i_hat, const nn::Tensor<T>& i_dd,
                       const nn::Tensor<T>& joint_mask, T gamma);

// 0.5 * mean over valid windows of tukey(1 - SSIM(I_dd, I_hat)). SSIM uses a
// 3x3 uniform window with C1 = 1e-4, C2 = 9e-4 (colors in [0,1]) and is
// averaged over channels. Only windows fully inside M_splat count, gated by
// the validity mask M at the center pixel.
template <class T>
LossTerm<T> structural_loss(const nn::Tensor<T>& i_hat, const nn::Tensor<T>& i_dd,
                            const nn::Tensor<T>& mask, const nn::Tensor<T>& splat_mask, T tukey_c);

// L_ph = (1 - alpha) L_col + alpha L_str.
template <class T>
nn::Tensor<T> photometric_loss(const nn::Tensor<T>& l_col, const nn::Tensor<T>& l_str, T alpha) {
  return nn::add(nn::mul_scalar(l_col, T(1) - alpha), nn::mul_scalar(l_str, alpha));
}

// BerHu over residuals r = M * (D - D_pred), border = fraction * max |r|
// across the whole batch, mean over valid pixels.
template <class T>
LossTerm<T> berhu_depth_loss(const std::vector<nn::Tensor<T>>& residuals,
                             const std::vector<nn::Tensor<T>>& masks, T fraction,
                             T* border_out = nullptr);

// Surface smoothness: 1 - mean over gated pixels of
// sum_{p' in 8-neighborhood} |<n(p), n(p')>| / G(p), with normals computed
// from the depth tensor (meters) on the tape. `pred_valid` marks pixels whose
// depth defines geometry (tangent selection); `gate_mask` selects which
// pixels enter the mean (Eq. M(p)); both constant.
template <class T>
LossTerm<T> surface_loss(const nn::Tensor<T>& depth_m, const geometry::CameraView& view,
                         const nn::Tensor<T>& pred_valid, const nn::Tensor<T>& gate_mask);

// Differentiable unit normals from a depth tensor, shared by surface_loss and
// its tests. Returns (normals (N,3,H,W), normal-valid constant (N,1,H,W)).
template <class T>
std::pair<nn::Tensor<T>, nn::Tensor<T>> normals_on_tape(const nn::Tensor<T>& depth_m,
                                                        const geometry::CameraView& view,
                                                        const nn::Tensor<T>& valid);

// Combines per-term scalars into the total and fills a LossReport.
LossReport make_report(double l_col, double l_str, double l_ph, double l_depth, double l_surface,
                       std::int64_t valid_count, const LossWeights& w);

}  // namespace sdn::losses
