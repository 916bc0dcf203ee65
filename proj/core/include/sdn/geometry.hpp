#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <optional>

#include "sdn/check.hpp"
#include "sdn/image.hpp"

namespace sdn::geometry {

template <class T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

// Pinhole intrinsics plus the image domain and the half horizontal field of
// view used by the radial confidence model.
struct Intrinsics {
  double fx = 0, fy = 0;   // focal lengths, pixels
  double cx = 0, cy = 0;   // principal point, pixels
  int width = 0, height = 0;
  double omega = 0;        // half horizontal FoV, radians

  void validate() const {
    SDN_CHECK_CONFIG(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
    SDN_CHECK_CONFIG(omega > 0 && omega < 1.5707963267948966, "intrinsics: omega out of (0, pi/2)");
    SDN_CHECK_CONFIG(cx >= 0 && cx < width && cy >= 0 && cy < height,
                     "intrinsics: principal point outside image domain");
  }
};

// Rigid view-to-world transform.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  void validate() const {
    SDN_CHECK_CONFIG(((R.transpose() * R) - Eigen::Matrix3d::Identity()).norm() <= 1e-9,
                     "pose: R is not orthonormal");
    SDN_CHECK_CONFIG(std::abs(R.determinant() - 1.0) <= 1e-9, "pose: det(R) != 1");
  }

  Pose inverse() const { return Pose{R.transpose(), -(R.transpose() * t)}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return R * p + t; }
};

struct CameraView {
  int id = 0;
  Intrinsics intrinsics;
  Pose pose;  // view-to-world
};

// Parameters of the per-pixel confidence weight w_c = w_d * w_r.
struct ConfidenceParams {
  double sigma_d = 3.0;          // depth uncertainty scale, meters
  bool radial_weighting = true;

  void validate() const { SDN_CHECK_CONFIG(sigma_d > 0, "confidence: sigma_d must be positive"); }
};

// Relative transform mapping source-camera coordinates into target-camera
// coordinates, cached for inner loops.
struct RelativeTransform {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;

  static RelativeTransform between(const Pose& source, const Pose& target) {
    Pose inv = target.inverse();
    return RelativeTransform{inv.R * source.R, inv.R * source.t + inv.t};
  }
};

// Projects a camera-space point to sub-pixel image coordinates. The caller
// must ensure point.z() > 0; a non-positive z is reported via nullopt so the
// pixel can be skipped.
template <class T>
std::optional<Vec2<T>> project(const Vec3<T>& point, const Intrinsics& intr) {
  if (!(point.z() > T(0))) return std::nullopt;
  return Vec2<T>(T(intr.fx) * point.x() / point.z() + T(intr.cx),
                 T(intr.fy) * point.y() / point.z() + T(intr.cy));
}

// Unit-depth ray direction through a pixel; deproject(p, d) = d * ray(p).
template <class T>
Vec3<T> pixel_ray(const Vec2<T>& pixel, const Intrinsics& intr) {
  return Vec3<T>((pixel.x() - T(intr.cx)) / T(intr.fx),
                 (pixel.y() - T(intr.cy)) / T(intr.fy), T(1));
}

// Lifts a pixel with z-depth d (meters) back to camera space.
template <class T>
Vec3<T> deproject(const Vec2<T>& pixel, T depth, const Intrinsics& intr) {
  SDN_CHECK_USAGE(depth > T(0), "deproject: depth must be positive");
  return pixel_ray(pixel, intr) * depth;
}

template <class T>
struct Transfer {
  Vec2<T> pixel;  // target image coordinates (may be out of bounds)
  T depth;        // z-depth of the transferred point in the target camera
};

// Hot-path transfer: the caller provides the source ray (pixel_ray of the
// source intrinsics), so per-pixel work is one rotation and one projection.
// Returns nullopt when the transferred point lands behind the target camera.
// Out-of-bounds pixel coordinates are not an error; splatting clips them.
template <class T>
std::optional<Transfer<T>> transfer_ray(const Vec3<T>& ray_s, T depth_s,
                                        const RelativeTransform& rel, const Intrinsics& intr_t) {
  Vec3<T> q = (rel.R.template cast<T>() * ray_s) * depth_s + rel.t.template cast<T>();
  auto px = project(q, intr_t);
  if (!px) return std::nullopt;
  return Transfer<T>{*px, q.z()};
}

template <class T>
std::optional<Transfer<T>> transfer(const Vec2<T>& pixel_s, T depth_s, const CameraView& view_s,
                                    const CameraView& view_t) {
  SDN_CHECK_USAGE(depth_s > T(0), "transfer: source depth must be positive");
  auto rel = RelativeTransform::between(view_s.pose, view_t.pose);
  return transfer_ray(pixel_ray(pixel_s, view_s.intrinsics), depth_s, rel, view_t.intrinsics);
}

// w_d: depth measurements closer to the sensor are more confident.
template <class T>
T depth_confidence(T d, const ConfidenceParams& params) {
  return std::exp(-d / T(params.sigma_d));
}

// w_r via the FoV distortion model R(p) = tan(r tan w) / tan w with r in
// normalized image-plane units. The weight is exp(r/R - 1): 1 at the image
// center (analytic limit of r/R) and decaying toward the tangent pole, where
// it is clamped to exp(-1).
template <class T>
T radial_confidence(const Vec2<T>& pixel, const Intrinsics& intr) {
  const T tan_w = std::tan(T(intr.omega));
  const T nx = (pixel.x() - T(intr.cx)) / T(intr.fx);
  const T ny = (pixel.y() - T(intr.cy)) / T(intr.fy);
  const T r = std::sqrt(nx * nx + ny * ny);
  T u = r * tan_w;
  const T pole = T(1.5707963267948966) - T(1e-6);
  if (u >= pole) u = pole;                   // clamp at the tangent pole
  if (u <= T(1e-8)) return T(1);             // r/R -> 1 as r -> 0
  const T ratio = u / std::tan(u);           // = r / R(p)
  return std::exp(ratio - T(1));
}

// w_c = w_d * w_r (w_r optional by configuration).
template <class T>
T pixel_confidence(const Vec2<T>& pixel, T d, const Intrinsics& intr,
                   const ConfidenceParams& params) {
  T w = depth_confidence(d, params);
  if (params.radial_weighting) w *= radial_confidence(pixel, intr);
  return w;
}

// Per-pixel unit surface normals from a depth map.
template <class T>
struct NormalMap {
  Image<T> normals;  // 3 channels; meaningful only where valid
  MaskImage valid;   // 1 where a normal is defined
};

namespace detail {

// Tangent along one axis using central differences where possible and
// one-sided differences at borders or next to invalid pixels. Returns false
// when fewer than two valid samples exist along the axis.
template <class T>
bool axis_tangent(const Image<T>& depth, const Intrinsics& intr, int x, int y, int dx, int dy,
                  Vec3<T>& out) {
  auto valid = [&](int px, int py) {
    return depth.in_bounds(px, py) && depth(px, py) > T(0);
  };
  auto point = [&](int px, int py) {
    return deproject(Vec2<T>(T(px), T(py)), depth(px, py), intr);
  };
  const bool plus = valid(x + dx, y + dy);
  const bool minus = valid(x - dx, y - dy);
  if (plus && minus) {
    out = point(x + dx, y + dy) - point(x - dx, y - dy);
    return true;
  }
  if (plus) {
    out = point(x + dx, y + dy) - point(x, y);
    return true;
  }
  if (minus) {
    out = point(x, y) - point(x - dx, y - dy);
    return true;
  }
  return false;
}

}  // namespace detail

// Normals from the cross product of depth-map tangents. Pixels without a
// valid tangent pair in either axis are marked invalid. Normals are oriented
// toward the camera and have unit length.
template <class T>
NormalMap<T> compute_normals(const Image<T>& depth, const CameraView& view, int radius = 1) {
  SDN_CHECK_CONFIG(radius == 1, "compute_normals: only a 1-pixel stencil is supported");
  const Intrinsics& intr = view.intrinsics;
  NormalMap<T> out;
  out.normals = Image<T>(depth.width(), depth.height(), 3);
  out.valid = MaskImage(depth.width(), depth.height(), 1);
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      if (!(depth(x, y) > T(0))) continue;
      Vec3<T> tx, ty;
      if (!detail::axis_tangent(depth, intr, x, y, 1, 0, tx)) continue;
      if (!detail::axis_tangent(depth, intr, x, y, 0, 1, ty)) continue;
      Vec3<T> n = tx.cross(ty);
      T len = n.norm();
      if (!(len > T(0))) continue;
      n /= len;
      // orient toward the camera: the view ray has positive z
      Vec3<T> v = deproject(Vec2<T>(T(x), T(y)), depth(x, y), intr);
      if (n.dot(v) > T(0)) n = -n;
      out.normals(x, y, 0) = n.x();
      out.normals(x, y, 1) = n.y();
      out.normals(x, y, 2) = n.z();
      out.valid(x, y) = 1;
    }
  }
  return out;
}

}  // namespace sdn::geometry
