#pragma once

#include <Eigen/Geometry>
#include <cmath>

#include "sdn/geometry.hpp"
#include "sdn/image.hpp"
#include "sdn/rng.hpp"

namespace sdn::testing {

inline geometry::Intrinsics make_intrinsics(int w = 64, int h = 64, double fx = 60.0,
                                            double fy = 60.0) {
  geometry::Intrinsics intr;
  intr.fx = fx;
  intr.fy = fy;
  intr.cx = w / 2.0;
  intr.cy = h / 2.0;
  intr.width = w;
  intr.height = h;
  intr.omega = std::atan((w / 2.0) / fx);
  return intr;
}

// Camera at `pos` looking at `target`, world y pointing down (so image y and
// world y agree for level cameras).
inline geometry::Pose look_at(const Eigen::Vector3d& pos, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - pos).normalized();
  Eigen::Vector3d x = Eigen::Vector3d(0, 1, 0).cross(z);
  if (x.norm() < 1e-12) x = Eigen::Vector3d(1, 0, 0);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  geometry::Pose pose;
  pose.R.col(0) = x;
  pose.R.col(1) = y;
  pose.R.col(2) = z;
  pose.t = pos;
  return pose;
}

inline geometry::CameraView make_view(int id, const geometry::Pose& pose,
                                      const geometry::Intrinsics& intr) {
  return geometry::CameraView{id, intr, pose};
}

// Analytic depth map of the world-space plane {X : n . X = h} seen from
// `view`. Pixels where the plane is behind the camera get depth 0.
template <class T>
Image<T> plane_depth(const geometry::CameraView& view, const Eigen::Vector3d& n, double h) {
  const auto& intr = view.intrinsics;
  Image<T> out(intr.width, intr.height, 1);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const auto ray = geometry::pixel_ray(geometry::Vec2<double>(x, y), intr);
      const double denom = n.dot(view.pose.R * ray);
      if (std::abs(denom) < 1e-12) continue;
      const double d = (h - n.dot(view.pose.t)) / denom;
      if (d > 0) out(x, y) = T(d);
    }
  return out;
}

template <class T>
double psnr(const Image<T>& a, const Image<T>& b, const MaskImage& mask) {
  double se = 0;
  std::int64_t n = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (!mask(x, y)) continue;
      for (int c = 0; c < a.channels(); ++c) {
        const double d = double(a(x, y, c)) - double(b(x, y, c));
        se += d * d;
        ++n;
      }
    }
  if (n == 0) return 0;
  const double mse = se / double(n);
  if (mse <= 0) return 1e9;
  return 10.0 * std::log10(1.0 / mse);
}

inline double rel_err(double a, double b, double floor = 1e-9) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

}  // namespace sdn::testing
