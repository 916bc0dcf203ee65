#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "sdn/geometry.hpp"
#include "sdn/image.hpp"

namespace sdn::metrics {

// One evaluation row. Distances in millimeters, angles in degrees,
// percentages in [0, 100].
struct EvalReport {
  double mae_mm = 0;
  double rmse_mm = 0;
  double normal_mean_deg = 0;
  double pct_under_10 = 0;
  double pct_under_20 = 0;
  double pct_under_30 = 0;
  double point_to_plane_rmse_mm = 0;
  std::int64_t valid_pixel_count = 0;

  void validate() const {
    SDN_CHECK_CONFIG(pct_under_10 <= pct_under_20 + 1e-12 &&
                         pct_under_20 <= pct_under_30 + 1e-12,
                     "report: threshold percentages must be monotone");
  }
};

struct DepthErrors {
  double mae_mm = 0;
  double rmse_mm = 0;
  std::int64_t count = 0;  // 0 => errors are NaN
};

// Projective (same-grid) comparison over pixels where the mask and both maps
// are valid. Empty overlap reports NaN with count 0.
template <class T>
DepthErrors depth_errors(const Image<T>& pred, const Image<T>& gt, const MaskImage& mask);

struct NormalErrors {
  double mean_deg = 0;
  std::vector<double> pct_under;  // one per threshold
  std::int64_t count = 0;
};

// Per-pixel angle acos(|<n_pred, n_gt>|) between normals of the two maps,
// both estimated with the same stencil.
template <class T>
NormalErrors normal_errors(const Image<T>& pred, const Image<T>& gt,
                           const geometry::CameraView& view,
                           const std::vector<double>& thresholds_deg = {10, 20, 30});

// Deprojects valid pixels into a camera-space cloud.
template <class T>
std::vector<Eigen::Vector3d> depth_to_cloud(const Image<T>& depth,
                                            const geometry::CameraView& view);

// For each GT point with >= 3 neighbors within `radius`, fits a least-squares
// plane to the neighborhood and measures the distance from the predicted
// point closest to the GT point. Returns the RMSE in millimeters (NaN for
// empty inputs). Exact: matches an all-pairs reference.
double point_to_plane(const std::vector<Eigen::Vector3d>& pred,
                      const std::vector<Eigen::Vector3d>& gt, double radius = 0.005);

// Edge-preserving bilateral filter over valid pixels only; invalid pixels
// stay invalid. sigma_spatial in pixels, sigma_range in meters.
template <class T>
Image<T> bilateral_filter(const Image<T>& depth, const MaskImage& mask, double sigma_spatial,
                          double sigma_range);

// CSV row (with header helper) and a human-readable table in the column
// order MAE | RMSE | Mean | 10 | 20 | 30 | point-to-plane.
std::string report_csv_header();
std::string report_csv_row(const std::string& label, const EvalReport& r);
std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace sdn::metrics
