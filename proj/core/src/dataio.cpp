#include "sdn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "sdn/threading.hpp"

namespace sdn::dataio {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- raster formats ----

namespace {

std::string read_token(std::istream& f) {
  std::string t;
  f >> t;
  SDN_CHECK_CONFIG(bool(f), "pnm: truncated header");
  return t;
}

}  // namespace

void write_pfm(const std::string& path, const Image<float>& depth) {
  SDN_CHECK_CONFIG(depth.channels() == 1, "pfm: only single-channel maps are written");
  std::ofstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "pfm: cannot write ", path);
  f << "Pf\n" << depth.width() << " " << depth.height() << "\n-1.0\n";
  // PFM scanlines run bottom-up
  for (int y = depth.height() - 1; y >= 0; --y)
    f.write(reinterpret_cast<const char*>(&depth(0, y)),
            std::streamsize(sizeof(float) * depth.width()));
  SDN_CHECK_CONFIG(bool(f), "pfm: write failed for ", path);
}

Image<float> read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "pfm: cannot open ", path);
  SDN_CHECK_CONFIG(read_token(f) == "Pf", "pfm: not a grayscale PFM: ", path);
  const int w = std::stoi(read_token(f));
  const int h = std::stoi(read_token(f));
  const double scale = std::stod(read_token(f));
  f.get();  // single whitespace after the scale line
  Image<float> out(w, h, 1);
  for (int y = h - 1; y >= 0; --y)
    f.read(reinterpret_cast<char*>(&out(0, y)), std::streamsize(sizeof(float) * w));
  SDN_CHECK_CONFIG(bool(f), "pfm: truncated payload in ", path);
  if (scale > 0) {  // big-endian payload
    for (auto& v : out.raw()) {
      auto* b = reinterpret_cast<unsigned char*>(&v);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
    }
  }
  return out;
}

void write_ppm(const std::string& path, const Image<float>& color) {
  SDN_CHECK_CONFIG(color.channels() == 3, "ppm: color image must have 3 channels");
  std::ofstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "ppm: cannot write ", path);
  f << "P6\n" << color.width() << " " << color.height() << "\n255\n";
  std::vector<unsigned char> row(std::size_t(color.width()) * 3);
  for (int y = 0; y < color.height(); ++y) {
    for (int x = 0; x < color.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::min(1.f, std::max(0.f, color(x, y, c)));
        row[std::size_t(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.f));
      }
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  SDN_CHECK_CONFIG(bool(f), "ppm: write failed for ", path);
}

Image<float> read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "ppm: cannot open ", path);
  SDN_CHECK_CONFIG(read_token(f) == "P6", "ppm: not a binary PPM: ", path);
  const int w = std::stoi(read_token(f));
  const int h = std::stoi(read_token(f));
  const int maxval = std::stoi(read_token(f));
  SDN_CHECK_CONFIG(maxval == 255, "ppm: only maxval 255 is supported");
  f.get();
  Image<float> out(w, h, 3);
  std::vector<unsigned char> row(std::size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out(x, y, c) = float(row[std::size_t(x) * 3 + c]) / 255.f;
  }
  SDN_CHECK_CONFIG(bool(f), "ppm: truncated payload in ", path);
  return out;
}

void write_pgm(const std::string& path, const MaskImage& mask) {
  SDN_CHECK_CONFIG(mask.channels() == 1, "pgm: mask must be single-channel");
  std::ofstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "pgm: cannot write ", path);
  f << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
  std::vector<unsigned char> row(std::size_t(mask.width()));
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) row[std::size_t(x)] = mask(x, y) ? 255 : 0;
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  SDN_CHECK_CONFIG(bool(f), "pgm: write failed for ", path);
}

MaskImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "pgm: cannot open ", path);
  SDN_CHECK_CONFIG(read_token(f) == "P5", "pgm: not a binary PGM: ", path);
  const int w = std::stoi(read_token(f));
  const int h = std::stoi(read_token(f));
  const int maxval = std::stoi(read_token(f));
  SDN_CHECK_CONFIG(maxval == 255, "pgm: only maxval 255 is supported");
  f.get();
  MaskImage out(w, h, 1);
  std::vector<unsigned char> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
    for (int x = 0; x < w; ++x) out(x, y) = row[std::size_t(x)] >= 128 ? 1 : 0;
  }
  SDN_CHECK_CONFIG(bool(f), "pgm: truncated payload in ", path);
  return out;
}

// ---- rig ----

void Rig::validate() const {
  SDN_CHECK_CONFIG(views.size() >= 2, "rig: view synthesis needs at least 2 views");
  for (std::size_t i = 0; i < views.size(); ++i) {
    views[i].intrinsics.validate();
    views[i].pose.validate();
    for (std::size_t j = i + 1; j < views.size(); ++j)
      SDN_CHECK_CONFIG(views[i].id != views[j].id, "rig: duplicate view id ", views[i].id);
  }
}

Rig make_default_rig(int num_views, int width, int height) {
  SDN_CHECK_CONFIG(num_views >= 2, "rig: need at least 2 views");
  geometry::Intrinsics intr;
  intr.fx = intr.fy = 0.95 * width;
  intr.cx = width / 2.0;
  intr.cy = height / 2.0;
  intr.width = width;
  intr.height = height;
  intr.omega = std::atan((width / 2.0) / intr.fx);

  // cross arrangement around the origin, converging on a point 1.8 m ahead;
  // horizontal/vertical/diagonal baselines 0.20-0.36 m
  const Eigen::Vector3d look(0, 0, 1.8);
  std::vector<Eigen::Vector3d> offsets = {
      {-0.15, -0.10, 0.0}, {0.15, -0.10, 0.0}, {-0.15, 0.10, 0.0}, {0.15, 0.10, 0.0}};
  while (int(offsets.size()) < num_views) {
    const int k = int(offsets.size()) - 4;
    offsets.push_back(Eigen::Vector3d(0.22 * std::cos(0.9 * k), 0.14 * std::sin(0.9 * k), 0.0));
  }

  Rig rig;
  for (int v = 0; v < num_views; ++v) {
    const Eigen::Vector3d pos = offsets[std::size_t(v)];
    const Eigen::Vector3d z = (look - pos).normalized();
    Eigen::Vector3d x = Eigen::Vector3d(0, 1, 0).cross(z);
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);
    geometry::Pose pose;
    pose.R.col(0) = x;
    pose.R.col(1) = y;
    pose.R.col(2) = z;
    pose.t = pos;
    rig.views.push_back(geometry::CameraView{v, intr, pose});
  }
  rig.validate();
  return rig;
}

void save_rig(const std::string& path, const Rig& rig) {
  rig.validate();
  json j;
  j["version"] = 1;
  j["views"] = json::array();
  for (const auto& v : rig.views) {
    json jv;
    jv["id"] = v.id;
    jv["fx"] = v.intrinsics.fx;
    jv["fy"] = v.intrinsics.fy;
    jv["cx"] = v.intrinsics.cx;
    jv["cy"] = v.intrinsics.cy;
    jv["width"] = v.intrinsics.width;
    jv["height"] = v.intrinsics.height;
    jv["omega"] = v.intrinsics.omega;
    json rows = json::array();
    for (int r = 0; r < 3; ++r) {
      json row = json::array();
      for (int c = 0; c < 3; ++c) row.push_back(v.pose.R(r, c));
      row.push_back(v.pose.t(r));
      rows.push_back(row);
    }
    jv["pose"] = rows;
    j["views"].push_back(jv);
  }
  std::ofstream f(path);
  SDN_CHECK_CONFIG(bool(f), "rig: cannot write ", path);
  f << j.dump(2) << "\n";
}

Rig load_rig(const std::string& path) {
  std::ifstream f(path);
  SDN_CHECK_CONFIG(bool(f), "rig: cannot open ", path);
  json j;
  f >> j;
  SDN_CHECK_CONFIG(j.value("version", 0) == 1, "rig: unsupported schema version in ", path);
  Rig rig;
  for (const auto& jv : j.at("views")) {
    geometry::CameraView v;
    v.id = jv.at("id").get<int>();
    v.intrinsics.fx = jv.at("fx").get<double>();
    v.intrinsics.fy = jv.at("fy").get<double>();
    v.intrinsics.cx = jv.at("cx").get<double>();
    v.intrinsics.cy = jv.at("cy").get<double>();
    v.intrinsics.width = jv.at("width").get<int>();
    v.intrinsics.height = jv.at("height").get<int>();
    v.intrinsics.omega = jv.at("omega").get<double>();
    const auto& rows = jv.at("pose");
    SDN_CHECK_CONFIG(rows.size() == 3, "rig: pose must have 3 rows");
    for (int r = 0; r < 3; ++r) {
      SDN_CHECK_CONFIG(rows[r].size() == 4, "rig: pose rows must have 4 entries");
      for (int c = 0; c < 3; ++c) v.pose.R(r, c) = rows[r][c].get<double>();
      v.pose.t(r) = rows[r][3].get<double>();
    }
    rig.views.push_back(v);
  }
  rig.validate();
  return rig;
}

// ---- procedural textures and intersections ----

namespace {

double lattice_hash(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t salt) {
  const std::uint64_t h = hash_mix(hash_mix(std::uint64_t(x) * 0x9e3779b97f4a7c15ull + salt,
                                            std::uint64_t(y) + 0x7f4a7c15ull),
                                   std::uint64_t(z) + 0x2545f4914f6cdd1dull);
  return double(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Trilinear value noise in [0, 1].
double value_noise3(const Eigen::Vector3d& p, std::uint64_t salt) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const std::int64_t ix = std::int64_t(fx), iy = std::int64_t(fy), iz = std::int64_t(fz);
  const double tx = smoothstep(p.x() - fx), ty = smoothstep(p.y() - fy),
               tz = smoothstep(p.z() - fz);
  double acc = 0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += w * lattice_hash(ix + dx, iy + dy, iz + dz, salt);
      }
  return acc;
}

Eigen::Vector3d albedo(const Texture& tex, const Eigen::Vector3d& p) {
  const double n1 = value_noise3(p * tex.scale, tex.salt);
  const double n2 = value_noise3(p * (2.7 * tex.scale), tex.salt ^ 0x5bull);
  const double t = std::clamp(0.7 * n1 + 0.3 * n2, 0.0, 1.0);
  return tex.base + t * (tex.accent - tex.base);
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal{0, 0, -1};
  const Primitive* prim = nullptr;
};

// Ray p(t) = o + t*d where d has unit z in camera space, so t is the z-depth.
void intersect(const Primitive& prim, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
               Hit& best) {
  constexpr double kMinT = 1e-6;
  switch (prim.kind) {
    case Primitive::Kind::Plane: {
      const double denom = prim.normal.dot(d);
      if (std::abs(denom) < 1e-12) return;
      const double t = prim.normal.dot(prim.point - o) / denom;
      if (t <= kMinT || t >= best.t) return;
      const Eigen::Vector3d q = o + t * d - prim.point;
      if (std::abs(q.dot(prim.axis_u)) > prim.half_u ||
          std::abs(q.dot(prim.axis_v)) > prim.half_v)
        return;
      best.t = t;
      best.normal = prim.normal;
      best.prim = &prim;
      return;
    }
    case Primitive::Kind::Sphere: {
      const Eigen::Vector3d oc = o - prim.center;
      const double a = d.squaredNorm();
      const double b = 2.0 * oc.dot(d);
      const double c = oc.squaredNorm() - prim.radius * prim.radius;
      const double disc = b * b - 4 * a * c;
      if (disc < 0) return;
      const double sq = std::sqrt(disc);
      double t = (-b - sq) / (2 * a);
      if (t <= kMinT) t = (-b + sq) / (2 * a);
      if (t <= kMinT || t >= best.t) return;
      best.t = t;
      best.normal = (o + t * d - prim.center).normalized();
      best.prim = &prim;
      return;
    }
    case Primitive::Kind::Box: {
      const Eigen::Vector3d ob = prim.rot.transpose() * (o - prim.center);
      const Eigen::Vector3d db = prim.rot.transpose() * d;
      double t0 = kMinT, t1 = best.t;
      int axis = -1;
      double sign = 1;
      for (int i = 0; i < 3; ++i) {
        if (std::abs(db[i]) < 1e-12) {
          if (std::abs(ob[i]) > prim.half[i]) return;
          continue;
        }
        double ta = (-prim.half[i] - ob[i]) / db[i];
        double tb = (prim.half[i] - ob[i]) / db[i];
        double s = -1;
        if (ta > tb) {
          std::swap(ta, tb);
          s = 1;
        }
        if (ta > t0) {
          t0 = ta;
          axis = i;
          sign = s;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return;
      }
      if (axis < 0) return;  // ray origin inside the box
      Eigen::Vector3d nb{0, 0, 0};
      nb[axis] = sign;
      best.t = t0;
      best.normal = prim.rot * nb;
      best.prim = &prim;
      return;
    }
  }
}

Eigen::Vector3d palette_color(Rng& rng) {
  return Eigen::Vector3d(rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95),
                         rng.uniform(0.15, 0.95));
}

}  // namespace

Scene make_scene(std::uint64_t seed) {
  Rng rng(hash_mix(seed, 0x7363656eull));
  Scene scene;
  scene.ambient = rng.uniform(0.3, 0.4);
  scene.light_dir =
      Eigen::Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), -1.0).normalized();

  // backdrop: large, gently tilted plane behind the objects
  Primitive back;
  back.kind = Primitive::Kind::Plane;
  back.normal =
      Eigen::Vector3d(rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), -1.0).normalized();
  back.point = Eigen::Vector3d(0, 0, rng.uniform(2.2, 2.5));
  back.axis_u = Eigen::Vector3d(0, 1, 0).cross(back.normal).normalized();
  back.axis_v = back.normal.cross(back.axis_u).normalized();
  back.half_u = back.half_v = 4.0;
  back.tex.base = palette_color(rng);
  back.tex.accent = palette_color(rng);
  back.tex.scale = rng.uniform(1.2, 2.5);
  back.tex.salt = rng.next_u64();
  scene.primitives.push_back(back);

  const int n_objects = 1 + int(rng.next_below(3));
  for (int i = 0; i < n_objects; ++i) {
    const double kind_draw = rng.uniform();
    Primitive prim;
    const double z = rng.uniform(1.25, 1.95);
    const double spread = 0.22 * z;
    const Eigen::Vector3d center(rng.uniform(-spread, spread), rng.uniform(-spread, spread), z);
    if (kind_draw < 0.45) {
      prim.kind = Primitive::Kind::Sphere;
      prim.center = center;
      prim.radius = rng.uniform(0.16, 0.34);
    } else if (kind_draw < 0.8) {
      prim.kind = Primitive::Kind::Box;
      prim.center = center;
      prim.half = Eigen::Vector3d(rng.uniform(0.1, 0.24), rng.uniform(0.1, 0.24),
                                  rng.uniform(0.1, 0.24));
      const Eigen::Vector3d axis =
          Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
      prim.rot = Eigen::AngleAxisd(rng.uniform(0, 3.14159), axis).toRotationMatrix();
    } else {
      // tilted floating plane patch
      prim.kind = Primitive::Kind::Plane;
      prim.point = center;
      prim.normal =
          Eigen::Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), -1.0).normalized();
      prim.axis_u = Eigen::Vector3d(0, 1, 0).cross(prim.normal).normalized();
      prim.axis_v = prim.normal.cross(prim.axis_u).normalized();
      prim.half_u = rng.uniform(0.18, 0.4);
      prim.half_v = rng.uniform(0.18, 0.4);
    }
    prim.tex.base = palette_color(rng);
    prim.tex.accent = palette_color(rng);
    prim.tex.scale = rng.uniform(1.5, 3.5);
    prim.tex.salt = rng.next_u64();
    scene.primitives.push_back(prim);
  }
  return scene;
}

std::pair<Image<float>, Image<float>> render_view(const Scene& scene,
                                                  const geometry::CameraView& view,
                                                  double depth_threshold) {
  const auto& intr = view.intrinsics;
  Image<float> depth(intr.width, intr.height, 1);
  Image<float> color(intr.width, intr.height, 3);
  const Eigen::Vector3d bg(0.04, 0.045, 0.05);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x)
      for (int c = 0; c < 3; ++c) color(x, y, c) = float(bg[c]);
  if (scene.primitives.empty()) return {depth, color};

  const Eigen::Vector3d light = scene.light_dir.normalized();
  parallel_for(intr.height, [&](std::int64_t y) {
    for (int x = 0; x < intr.width; ++x) {
      const Eigen::Vector3d ray_cam =
          geometry::pixel_ray(geometry::Vec2<double>(double(x), double(y)), intr);
      const Eigen::Vector3d d = view.pose.R * ray_cam;  // unit z in camera space
      Hit hit;
      for (const auto& prim : scene.primitives) intersect(prim, view.pose.t, d, hit);
      if (!hit.prim || hit.t > depth_threshold) continue;  // out of range stays invalid
      depth(x, int(y)) = float(hit.t);
      const Eigen::Vector3d p = view.pose.t + hit.t * d;
      // orient the normal toward the viewer for shading stability
      Eigen::Vector3d n = hit.normal;
      if (n.dot(d) > 0) n = -n;
      const double diffuse = std::max(0.0, n.dot(-light));
      const double shade = scene.ambient + (1.0 - scene.ambient) * diffuse;
      const Eigen::Vector3d c = albedo(hit.prim->tex, p) * shade;
      for (int ch = 0; ch < 3; ++ch) color(x, int(y), ch) = float(std::clamp(c[ch], 0.0, 1.0));
    }
  });
  return {depth, color};
}

Image<float> corrupt(const Image<float>& clean_depth, const NoiseSpec& spec,
                     const geometry::CameraView& view, double depth_threshold) {
  spec.validate();
  Rng rng(hash_mix(spec.seed, std::uint64_t(view.id) + 0x636f7272ull));
  Image<float> out(clean_depth.width(), clean_depth.height(), 1);
  for (int y = 0; y < clean_depth.height(); ++y)
    for (int x = 0; x < clean_depth.width(); ++x) {
      const double d = clean_depth(x, y);
      if (!(d > 0)) continue;
      if (rng.uniform() < spec.dropout_rate) continue;  // dropout -> invalid
      const double ray_len =
          geometry::pixel_ray(geometry::Vec2<double>(double(x), double(y)), view.intrinsics)
              .norm();
      const double sigma = spec.sigma_base + spec.sigma_slope * d * d;
      const double ray = d * ray_len + sigma * rng.normal();
      const double dz = ray / ray_len;
      if (dz <= 0 || dz > depth_threshold) continue;  // out-of-range becomes invalid
      out(x, y) = float(dz);
    }
  return out;
}

// ---- datasets ----

namespace {

json noise_json(const NoiseSpec& spec) {
  json j;
  j["dropout_rate"] = spec.dropout_rate;
  j["sigma_base"] = spec.sigma_base;
  j["sigma_slope"] = spec.sigma_slope;
  j["seed"] = spec.seed;
  return j;
}

NoiseSpec noise_from_json(const json& j) {
  NoiseSpec spec;
  spec.dropout_rate = j.at("dropout_rate").get<double>();
  spec.sigma_base = j.at("sigma_base").get<double>();
  spec.sigma_slope = j.at("sigma_slope").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
  return spec;
}

std::string scene_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

}  // namespace

std::string generate_dataset(int n_scenes, const Rig& rig, const NoiseSpec& noise,
                             std::uint64_t seed, const std::string& out_dir,
                             double depth_threshold) {
  SDN_CHECK_CONFIG(n_scenes >= 0, "dataset: scene count must be >= 0");
  rig.validate();
  noise.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  SDN_CHECK_CONFIG(!ec, "dataset: cannot create ", out_dir);
  save_rig((fs::path(out_dir) / "rig.json").string(), rig);

  std::vector<std::string> dirs;
  for (int s = 0; s < n_scenes; ++s) {
    const std::string dir = scene_dir_name(s);
    const fs::path scene_path = fs::path(out_dir) / dir;
    fs::create_directories(scene_path, ec);
    SDN_CHECK_CONFIG(!ec, "dataset: cannot create ", scene_path.string());
    const Scene scene = make_scene(hash_mix(seed, std::uint64_t(s)));
    NoiseSpec scene_noise = noise;
    scene_noise.seed = hash_mix(hash_mix(noise.seed, seed), std::uint64_t(s));
    for (const auto& view : rig.views) {
      auto [gt, color] = render_view(scene, view, depth_threshold);
      auto noisy = corrupt(gt, scene_noise, view, depth_threshold);
      const std::string suffix = "_v" + std::to_string(view.id);
      write_pfm((scene_path / ("depth_gt" + suffix + ".pfm")).string(), gt);
      write_pfm((scene_path / ("depth_noisy" + suffix + ".pfm")).string(), noisy);
      write_ppm((scene_path / ("color" + suffix + ".ppm")).string(), color);
      write_pgm((scene_path / ("mask" + suffix + ".pgm")).string(), mask_from_depth(noisy));
    }
    dirs.push_back(dir);
  }

  json manifest;
  manifest["version"] = 1;
  manifest["seed"] = seed;
  manifest["scene_count"] = n_scenes;
  manifest["depth_threshold"] = depth_threshold;
  manifest["noise"] = noise_json(noise);
  manifest["rig"] = "rig.json";
  manifest["samples"] = dirs;
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream f(manifest_path);
  SDN_CHECK_CONFIG(bool(f), "dataset: cannot write ", manifest_path);
  f << manifest.dump(2) << "\n";
  return manifest_path;
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream f(root / "manifest.json");
  SDN_CHECK_CONFIG(bool(f), "dataset: cannot open manifest in ", dir);
  json manifest;
  f >> manifest;
  SDN_CHECK_CONFIG(manifest.value("version", 0) == 1, "dataset: unsupported manifest version");
  Dataset ds;
  ds.root = dir;
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.depth_threshold = manifest.at("depth_threshold").get<double>();
  ds.noise = noise_from_json(manifest.at("noise"));
  ds.rig = load_rig((root / manifest.at("rig").get<std::string>()).string());
  for (const auto& s : manifest.at("samples")) ds.sample_dirs.push_back(s.get<std::string>());
  return ds;
}

Sample load_sample(const Dataset& ds, std::size_t index) {
  SDN_CHECK_CONFIG(index < ds.sample_dirs.size(), "dataset: sample index out of range");
  const fs::path dir = fs::path(ds.root) / ds.sample_dirs[index];
  Sample sample;
  for (const auto& view : ds.rig.views) {
    const std::string suffix = "_v" + std::to_string(view.id);
    Frame<float> frame;
    frame.depth = read_pfm((dir / ("depth_noisy" + suffix + ".pfm")).string());
    frame.color = read_ppm((dir / ("color" + suffix + ".ppm")).string());
    frame.mask = read_pgm((dir / ("mask" + suffix + ".pgm")).string());
    sample.gt_depth.push_back(read_pfm((dir / ("depth_gt" + suffix + ".pfm")).string()));
    sample.frames.push_back(std::move(frame));
  }
  return sample;
}

}  // namespace sdn::dataio
