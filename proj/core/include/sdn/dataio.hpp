#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdn/geometry.hpp"
#include "sdn/image.hpp"
#include "sdn/rng.hpp"

namespace sdn::dataio {

// ---- raster file formats ----
// Depth: PFM ("Pf"), 32-bit little-endian floats, meters, 0 = invalid.
// Color: binary PPM ("P6"), 8-bit RGB. Masks: binary PGM ("P5"), 0/255.

void write_pfm(const std::string& path, const Image<float>& depth);
Image<float> read_pfm(const std::string& path);

void write_ppm(const std::string& path, const Image<float>& color);
Image<float> read_ppm(const std::string& path);

void write_pgm(const std::string& path, const MaskImage& mask);
MaskImage read_pgm(const std::string& path);

// ---- rig ----

struct Rig {
  std::vector<geometry::CameraView> views;

  void validate() const;
};

// Four (or more) views in a cross arrangement with 0.2-0.5 m baselines,
// converging on a point in front of the rig.
Rig make_default_rig(int num_views = 4, int width = 64, int height = 64);

// JSON, schema versioned: per-view fx, fy, cx, cy, width, height, omega and
// the 3x4 [R | t] pose rows.
void save_rig(const std::string& path, const Rig& rig);
Rig load_rig(const std::string& path);

// ---- synthetic scenes ----

struct NoiseSpec {
  double dropout_rate = 0.6;   // fraction of valid pixels zeroed
  double sigma_base = 0.002;   // meters, ray-noise floor
  double sigma_slope = 0.003;  // meters per meter^2: sigma(d) = base + slope * d^2
  std::uint64_t seed = 0;

  void validate() const {
    SDN_CHECK_CONFIG(dropout_rate >= 0 && dropout_rate < 1,
                     "noise: dropout_rate out of [0,1)");
    SDN_CHECK_CONFIG(sigma_base >= 0 && sigma_slope >= 0, "noise: sigma values must be >= 0");
  }
};

struct Texture {
  Eigen::Vector3d base{0.5, 0.5, 0.5};
  Eigen::Vector3d accent{0.8, 0.8, 0.8};
  double scale = 2.0;        // spatial frequency of the albedo pattern
  std::uint64_t salt = 0;
};

struct Primitive {
  enum class Kind { Plane, Sphere, Box };
  Kind kind = Kind::Sphere;
  // plane: point + orthonormal in-plane axes with half extents
  Eigen::Vector3d point{0, 0, 0};
  Eigen::Vector3d normal{0, 0, -1};
  Eigen::Vector3d axis_u{1, 0, 0}, axis_v{0, 1, 0};
  double half_u = 1, half_v = 1;
  // sphere: center + radius
  Eigen::Vector3d center{0, 0, 0};
  double radius = 0.2;
  // box: center + rotation (world-from-box) + half extents
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  Eigen::Vector3d half{0.1, 0.1, 0.1};
  Texture tex;
};

struct Scene {
  std::vector<Primitive> primitives;
  Eigen::Vector3d light_dir{0.3, -0.4, -1.0};  // direction toward the light
  double ambient = 0.35;
};

// Deterministic scene with a textured backdrop and 1-3 foreground objects.
Scene make_scene(std::uint64_t seed);

// Ray-intersection render: z-depth of the nearest hit per pixel (0 if none or
// beyond the threshold) plus the Lambertian color under shading shared across
// views. Colors are photoconsistent by construction.
std::pair<Image<float>, Image<float>> render_view(const Scene& scene,
                                                  const geometry::CameraView& view,
                                                  double depth_threshold = 3.0);

// ToF-like corruption: per valid pixel, dropout with probability
// dropout_rate; otherwise zero-mean Gaussian noise with sigma(d) =
// sigma_base + sigma_slope * d^2 applied along the viewing ray and converted
// back to z-depth. Results are clamped to [0, threshold] (out-of-range
// measurements are zeroed).
Image<float> corrupt(const Image<float>& clean_depth, const NoiseSpec& spec,
                     const geometry::CameraView& view, double depth_threshold = 3.0);

// ---- datasets ----

struct Sample {
  std::vector<Frame<float>> frames;        // noisy depth + clean color + mask
  std::vector<Image<float>> gt_depth;      // per view
};

struct Dataset {
  std::string root;
  Rig rig;
  NoiseSpec noise;
  double depth_threshold = 3.0;
  std::uint64_t seed = 0;
  std::vector<std::string> sample_dirs;  // relative to root
};

// Writes n_scenes rendered+corrupted samples under out_dir together with
// rig.json and manifest.json. Deterministic for a fixed seed. Returns the
// manifest path.
std::string generate_dataset(int n_scenes, const Rig& rig, const NoiseSpec& noise,
                             std::uint64_t seed, const std::string& out_dir,
                             double depth_threshold = 3.0);

Dataset load_dataset(const std::string& dir);
Sample load_sample(const Dataset& ds, std::size_t index);

}  // namespace sdn::dataio
