#include "sdn/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace sdn::metrics {

namespace {
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}

template <class T>
DepthErrors depth_errors(const Image<T>& pred, const Image<T>& gt, const MaskImage& mask) {
  SDN_CHECK_CONFIG(pred.same_shape(gt), "depth_errors: map shapes differ");
  SDN_CHECK_CONFIG(mask.width() == pred.width() && mask.height() == pred.height(),
                   "depth_errors: mask shape differs");
  double abs_sum = 0, sq_sum = 0;
  std::int64_t n = 0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (!mask(x, y)) continue;
      if (!(pred(x, y) > T(0)) || !(gt(x, y) > T(0))) continue;
      const double d = (double(pred(x, y)) - double(gt(x, y))) * 1000.0;  // mm
      abs_sum += std::abs(d);
      sq_sum += d * d;
      ++n;
    }
  if (n == 0) return {kNan, kNan, 0};
  return {abs_sum / double(n), std::sqrt(sq_sum / double(n)), n};
}

template <class T>
NormalErrors normal_errors(const Image<T>& pred, const Image<T>& gt,
                           const geometry::CameraView& view,
                           const std::vector<double>& thresholds_deg) {
  auto np = geometry::compute_normals(pred, view);
  auto ng = geometry::compute_normals(gt, view);
  NormalErrors out;
  out.pct_under.assign(thresholds_deg.size(), kNan);
  double sum = 0;
  std::vector<std::int64_t> under(thresholds_deg.size(), 0);
  std::int64_t n = 0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (!np.valid(x, y) || !ng.valid(x, y)) continue;
      double dot = 0;
      for (int c = 0; c < 3; ++c) dot += double(np.normals(x, y, c)) * double(ng.normals(x, y, c));
      dot = std::min(1.0, std::abs(dot));
      const double deg = std::acos(dot) * 180.0 / M_PI;
      sum += deg;
      for (std::size_t i = 0; i < thresholds_deg.size(); ++i)
        if (deg < thresholds_deg[i]) ++under[i];
      ++n;
    }
  out.count = n;
  if (n == 0) {
    out.mean_deg = kNan;
    return out;
  }
  out.mean_deg = sum / double(n);
  for (std::size_t i = 0; i < thresholds_deg.size(); ++i)
    out.pct_under[i] = 100.0 * double(under[i]) / double(n);
  return out;
}

template <class T>
std::vector<Eigen::Vector3d> depth_to_cloud(const Image<T>& depth,
                                            const geometry::CameraView& view) {
  std::vector<Eigen::Vector3d> cloud;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (!(depth(x, y) > T(0))) continue;
      cloud.push_back(geometry::deproject(geometry::Vec2<double>(x, y), double(depth(x, y)),
                                          view.intrinsics));
    }
  return cloud;
}

namespace {

// Uniform voxel hash over 3D points.
struct VoxelHash {
  double cell;
  std::unordered_map<std::uint64_t, std::vector<int>> cells;

  static std::uint64_t key(std::int64_t x, std::int64_t y, std::int64_t z) {
    return (std::uint64_t(x) * 0x8da6b343ull) ^ (std::uint64_t(y) * 0xd8163841ull) ^
           (std::uint64_t(z) * 0xcb1ab31full);
  }

  VoxelHash(const std::vector<Eigen::Vector3d>& pts, double cell_size) : cell(cell_size) {
    for (int i = 0; i < int(pts.size()); ++i) {
      const auto c = coord(pts[std::size_t(i)]);
      cells[key(c[0], c[1], c[2])].push_back(i);
    }
  }

  std::array<std::int64_t, 3> coord(const Eigen::Vector3d& p) const {
    return {std::int64_t(std::floor(p.x() / cell)), std::int64_t(std::floor(p.y() / cell)),
            std::int64_t(std::floor(p.z() / cell))};
  }
};

// Indices of points within `radius` of q, sorted (for reduction-order
// determinism across implementations).
std::vector<int> radius_query(const VoxelHash& hash, const std::vector<Eigen::Vector3d>& pts,
                              const Eigen::Vector3d& q, double radius) {
  std::vector<int> out;
  const auto c = hash.coord(q);
  const std::int64_t reach = std::int64_t(std::ceil(radius / hash.cell)) + 1;
  const double r2 = radius * radius;
  for (std::int64_t dz = -reach; dz <= reach; ++dz)
    for (std::int64_t dy = -reach; dy <= reach; ++dy)
      for (std::int64_t dx = -reach; dx <= reach; ++dx) {
        const auto it = hash.cells.find(VoxelHash::key(c[0] + dx, c[1] + dy, c[2] + dz));
        if (it == hash.cells.end()) continue;
        for (int i : it->second)
          if ((pts[std::size_t(i)] - q).squaredNorm() <= r2) out.push_back(i);
      }
  std::sort(out.begin(), out.end());
  return out;
}

// Nearest point by expanding voxel shells; ties broken toward the smaller
// index, matching a brute-force scan.
int nearest_point(const VoxelHash& hash, const std::vector<Eigen::Vector3d>& pts,
                  const Eigen::Vector3d& q) {
  const auto c = hash.coord(q);
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::int64_t reach = 1;; ++reach) {
    for (std::int64_t dz = -reach; dz <= reach; ++dz)
      for (std::int64_t dy = -reach; dy <= reach; ++dy)
        for (std::int64_t dx = -reach; dx <= reach; ++dx) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != reach && reach > 1)
            continue;  // only the new shell (reach == 1 scans the full cube)
          const auto it = hash.cells.find(VoxelHash::key(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == hash.cells.end()) continue;
          for (int i : it->second) {
            const double d2 = (pts[std::size_t(i)] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
              best_d2 = d2;
              best = i;
            }
          }
        }
    if (best >= 0) {
      // points beyond the scanned cube are farther than (reach-1)*cell away
      const double safe = double(reach - 1) * hash.cell;
      if (best_d2 <= safe * safe) return best;
    }
    if (reach >= 64) {  // distant clouds: fall back to a full scan
      for (int i = 0; i < int(pts.size()); ++i) {
        const double d2 = (pts[std::size_t(i)] - q).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = i;
        }
      }
      return best;
    }
  }
}

struct PlaneFit {
  Eigen::Vector3d centroid;
  Eigen::Vector3d normal;
};

// Least-squares plane through the listed points (smallest-eigenvalue
// eigenvector of the covariance).
PlaneFit fit_plane(const std::vector<Eigen::Vector3d>& pts, const std::vector<int>& idx) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int i : idx) mean += pts[std::size_t(i)];
  mean /= double(idx.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i : idx) {
    const Eigen::Vector3d d = pts[std::size_t(i)] - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  return {mean, es.eigenvectors().col(0)};
}

}  // namespace

double point_to_plane(const std::vector<Eigen::Vector3d>& pred,
                      const std::vector<Eigen::Vector3d>& gt, double radius) {
  SDN_CHECK_CONFIG(radius > 0, "point_to_plane: radius must be positive");
  if (pred.empty() || gt.empty()) return kNan;
  VoxelHash gt_hash(gt, radius);
  VoxelHash pred_hash(pred, std::max(radius, 0.02));
  double sq_sum = 0;
  std::int64_t n = 0;
  for (const auto& g : gt) {
    const auto neighbors = radius_query(gt_hash, gt, g, radius);
    if (neighbors.size() < 3) continue;
    const auto plane = fit_plane(gt, neighbors);
    const int j = nearest_point(pred_hash, pred, g);
    const double dist = std::abs(plane.normal.dot(pred[std::size_t(j)] - plane.centroid));
    sq_sum += dist * dist;
    ++n;
  }
  if (n == 0) return kNan;
  return std::sqrt(sq_sum / double(n)) * 1000.0;  // mm
}

template <class T>
Image<T> bilateral_filter(const Image<T>& depth, const MaskImage& mask, double sigma_spatial,
                          double sigma_range) {
  SDN_CHECK_CONFIG(sigma_spatial > 0 && sigma_range > 0,
                   "bilateral_filter: sigmas must be positive");
  const int radius = std::max(1, int(std::ceil(3.0 * sigma_spatial)));
  const double inv2ss = 1.0 / (2.0 * sigma_spatial * sigma_spatial);
  const double inv2sr = 1.0 / (2.0 * sigma_range * sigma_range);
  Image<T> out(depth.width(), depth.height(), 1);
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (!mask(x, y) || !(depth(x, y) > T(0))) continue;
      const double center = depth(x, y);
      double wsum = 0, vsum = 0;
      for (int j = -radius; j <= radius; ++j) {
        const int yy = y + j;
        if (yy < 0 || yy >= depth.height()) continue;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = x + i;
          if (xx < 0 || xx >= depth.width()) continue;
          if (!mask(xx, yy) || !(depth(xx, yy) > T(0))) continue;
          const double dr = double(depth(xx, yy)) - center;
          const double w = std::exp(-(i * i + j * j) * inv2ss) * std::exp(-dr * dr * inv2sr);
          wsum += w;
          vsum += w * double(depth(xx, yy));
        }
      }
      out(x, y) = T(vsum / wsum);
    }
  return out;
}

std::string report_csv_header() {
  return "label,mae_mm,rmse_mm,normal_mean_deg,pct_under_10,pct_under_20,pct_under_30,"
         "point_to_plane_rmse_mm,valid_pixel_count";
}

std::string report_csv_row(const std::string& label, const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%lld", label.c_str(),
                r.mae_mm, r.rmse_mm, r.normal_mean_deg, r.pct_under_10, r.pct_under_20,
                r.pct_under_30, r.point_to_plane_rmse_mm,
                static_cast<long long>(r.valid_pixel_count));
  return buf;
}

std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os << "                 |  MAE (mm) | RMSE (mm) | Mean (deg) | 10.0 (%) | 20.0 (%) | "
        "30.0 (%) | P2P RMSE (mm)\n";
  for (const auto& [label, r] : rows) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%-16s | %9.2f | %9.2f | %10.2f | %8.2f | %8.2f | %8.2f | %13.2f\n",
                  label.c_str(), r.mae_mm, r.rmse_mm, r.normal_mean_deg, r.pct_under_10,
                  r.pct_under_20, r.pct_under_30, r.point_to_plane_rmse_mm);
    os << buf;
  }
  return os.str();
}

#define SDN_METRICS_INSTANTIATE(T)                                                            \
  template DepthErrors depth_errors<T>(const Image<T>&, const Image<T>&, const MaskImage&);   \
  template NormalErrors normal_errors<T>(const Image<T>&, const Image<T>&,                    \
                                         const geometry::CameraView&,                         \
                                         const std::vector<double>&);                         \
  template std::vector<Eigen::Vector3d> depth_to_cloud<T>(const Image<T>&,                    \
                                                          const geometry::CameraView&);       \
  template Image<T> bilateral_filter<T>(const Image<T>&, const MaskImage&, double, double);

SDN_METRICS_INSTANTIATE(float)
SDN_METRICS_INSTANTIATE(double)

#undef SDN_METRICS_INSTANTIATE

}  // namespace sdn::metrics
