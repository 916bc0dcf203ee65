#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sdn/dataio.hpp"

using namespace sdn;
using namespace sdn::testing;
namespace geo = sdn::geometry;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_SUITE_BEGIN("dataio");

TEST_CASE("pfm round trip is bit exact and the header is canonical") {
  const auto dir = temp_dir("sdn_pfm");
  Rng rng(1);
  Image<float> depth(13, 7, 1);
  for (auto& v : depth.raw()) v = rng.uniform() < 0.3 ? 0.f : float(rng.uniform(0.1, 3.0));
  const auto path = (dir / "d.pfm").string();
  dataio::write_pfm(path, depth);
  auto back = dataio::read_pfm(path);
  REQUIRE(back.width() == 13);
  REQUIRE(back.height() == 7);
  CHECK(back.raw() == depth.raw());

  const std::string bytes = read_file(path);
  CHECK(bytes.substr(0, 3) == "Pf\n");
  CHECK(bytes.find("13 7\n-1.0\n") != std::string::npos);
  CHECK(bytes.size() == std::string("Pf\n13 7\n-1.0\n").size() + 13 * 7 * 4);
  fs::remove_all(dir);
}

TEST_CASE("ppm and pgm round trips preserve quantized payloads") {
  const auto dir = temp_dir("sdn_ppm");
  Rng rng(2);
  Image<float> color(9, 5, 3);
  for (auto& v : color.raw()) v = float(std::round(rng.uniform() * 255.0) / 255.0);
  const auto cpath = (dir / "c.ppm").string();
  dataio::write_ppm(cpath, color);
  auto cback = dataio::read_ppm(cpath);
  for (std::size_t i = 0; i < color.raw().size(); ++i)
    CHECK(cback.raw()[i] == doctest::Approx(color.raw()[i]).epsilon(1e-6));

  MaskImage mask(9, 5, 1);
  for (auto& v : mask.raw()) v = rng.uniform() < 0.5 ? 1 : 0;
  const auto mpath = (dir / "m.pgm").string();
  dataio::write_pgm(mpath, mask);
  auto mback = dataio::read_pgm(mpath);
  CHECK(mback.raw() == mask.raw());
  fs::remove_all(dir);
}

TEST_CASE("frontal plane renders as a constant depth map") {
  dataio::Scene scene;
  dataio::Primitive plane;
  plane.kind = dataio::Primitive::Kind::Plane;
  plane.point = Eigen::Vector3d(0, 0, 2.0);
  plane.normal = Eigen::Vector3d(0, 0, -1);
  plane.axis_u = Eigen::Vector3d(1, 0, 0);
  plane.axis_v = Eigen::Vector3d(0, 1, 0);
  plane.half_u = plane.half_v = 10.0;
  scene.primitives.push_back(plane);

  geo::CameraView view{0, make_intrinsics(32, 32), geo::Pose{}};
  auto [depth, color] = dataio::render_view(scene, view);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) CHECK(depth(x, y) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("empty scene renders all-invalid depth") {
  dataio::Scene scene;
  geo::CameraView view{0, make_intrinsics(16, 16), geo::Pose{}};
  auto [depth, color] = dataio::render_view(scene, view);
  for (float v : depth.raw()) CHECK(v == 0.f);
}

TEST_CASE("sphere center depth equals distance minus radius") {
  dataio::Scene scene;
  dataio::Primitive sph;
  sph.kind = dataio::Primitive::Kind::Sphere;
  sph.center = Eigen::Vector3d(0, 0, 1.7);
  sph.radius = 0.3;
  scene.primitives.push_back(sph);
  geo::CameraView view{0, make_intrinsics(33, 33), geo::Pose{}};
  auto [depth, color] = dataio::render_view(scene, view);
  // the optical axis passes through pixel (cx, cy) = (16.5, 16.5); sample the
  // nearest pixel and allow for the sub-pixel offset
  CHECK(depth(16, 16) == doctest::Approx(1.4).epsilon(1e-3));
}

TEST_CASE("box depth matches the slab geometry on the optical axis") {
  dataio::Scene scene;
  dataio::Primitive box;
  box.kind = dataio::Primitive::Kind::Box;
  box.center = Eigen::Vector3d(0, 0, 2.0);
  box.half = Eigen::Vector3d(0.25, 0.25, 0.25);
  scene.primitives.push_back(box);
  geo::CameraView view{0, make_intrinsics(32, 32), geo::Pose{}};
  auto [depth, color] = dataio::render_view(scene, view);
  CHECK(depth(16, 16) == doctest::Approx(1.75).epsilon(1e-3));
}

TEST_CASE("corrupt with a zero spec is the identity") {
  geo::CameraView view{0, make_intrinsics(32, 32), geo::Pose{}};
  Rng rng(3);
  Image<float> clean(32, 32, 1);
  for (auto& v : clean.raw()) v = rng.uniform() < 0.2 ? 0.f : float(rng.uniform(0.5, 2.8));
  dataio::NoiseSpec spec;
  spec.dropout_rate = 0.0;
  spec.sigma_base = 0.0;
  spec.sigma_slope = 0.0;
  auto noisy = dataio::corrupt(clean, spec, view);
  CHECK(noisy.raw() == clean.raw());
}

TEST_CASE("dropout of 0.6 keeps about 40% of the pixels") {
  geo::CameraView view{0, make_intrinsics(320, 320), geo::Pose{}};
  Image<float> clean(320, 320, 1, 2.0f);  // 102400 valid pixels
  dataio::NoiseSpec spec;
  spec.dropout_rate = 0.6;
  spec.seed = 77;
  auto noisy = dataio::corrupt(clean, spec, view);
  std::int64_t kept = 0;
  for (float v : noisy.raw())
    if (v > 0) ++kept;
  const double frac = double(kept) / double(clean.size());
  CHECK(frac > 0.38);
  CHECK(frac < 0.42);
}

TEST_CASE("ray-noise magnitude matches sigma(d) within 5%") {
  geo::CameraView view{0, make_intrinsics(320, 320), geo::Pose{}};
  Image<float> clean(320, 320, 1, 2.0f);
  dataio::NoiseSpec spec;
  spec.dropout_rate = 0.0;
  spec.sigma_base = 0.002;
  spec.sigma_slope = 0.003;
  spec.seed = 99;
  auto noisy = dataio::corrupt(clean, spec, view);
  const double sigma_expect = 0.002 + 0.003 * 4.0;  // sigma(2)
  double sum = 0, sum2 = 0;
  std::int64_t n = 0;
  for (int y = 0; y < 320; ++y)
    for (int x = 0; x < 320; ++x) {
      if (!(noisy(x, y) > 0)) continue;
      const double ray_len =
          geo::pixel_ray(geo::Vec2<double>(x, y), view.intrinsics).norm();
      const double r = (double(noisy(x, y)) - 2.0) * ray_len;  // residual along the ray
      sum += r;
      sum2 += r * r;
      ++n;
    }
  REQUIRE(n > 100000);
  const double var = sum2 / double(n) - (sum / double(n)) * (sum / double(n));
  const double stddev = std::sqrt(var);
  CHECK(stddev == doctest::Approx(sigma_expect).epsilon(0.05));
}

TEST_CASE("corrupt never yields negative or beyond-threshold depths") {
  geo::CameraView view{0, make_intrinsics(64, 64), geo::Pose{}};
  Rng rng(5);
  Image<float> clean(64, 64, 1);
  for (auto& v : clean.raw()) v = float(rng.uniform(0.05, 2.99));
  dataio::NoiseSpec spec;
  spec.dropout_rate = 0.3;
  spec.sigma_base = 0.3;  // exaggerated noise to stress the clamps
  spec.sigma_slope = 0.2;
  spec.seed = 11;
  auto noisy = dataio::corrupt(clean, spec, view, 3.0);
  for (float v : noisy.raw()) {
    CHECK(v >= 0.f);
    CHECK(v <= 3.f);
  }
}

TEST_CASE("rig: json round trip and validation") {
  const auto dir = temp_dir("sdn_rig");
  auto rig = dataio::make_default_rig(4, 64, 64);
  REQUIRE(rig.views.size() == 4);
  // baselines within the 0.2-0.5 m design envelope
  for (std::size_t i = 0; i < rig.views.size(); ++i)
    for (std::size_t j = i + 1; j < rig.views.size(); ++j) {
      const double b = (rig.views[i].pose.t - rig.views[j].pose.t).norm();
      CHECK(b >= 0.2);
      CHECK(b <= 0.5);
    }

  const auto path = (dir / "rig.json").string();
  dataio::save_rig(path, rig);
  auto back = dataio::load_rig(path);
  REQUIRE(back.views.size() == rig.views.size());
  for (std::size_t i = 0; i < rig.views.size(); ++i) {
    CHECK(back.views[i].id == rig.views[i].id);
    CHECK((back.views[i].pose.R - rig.views[i].pose.R).norm() <= 1e-12);
    CHECK((back.views[i].pose.t - rig.views[i].pose.t).norm() <= 1e-12);
    CHECK(back.views[i].intrinsics.fx == rig.views[i].intrinsics.fx);
    CHECK(back.views[i].intrinsics.omega == rig.views[i].intrinsics.omega);
  }

  // duplicate ids are rejected
  auto bad = rig;
  bad.views[1].id = bad.views[0].id;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("dataset generation is deterministic and supports zero scenes") {
  const auto dir_a = temp_dir("sdn_ds_a");
  const auto dir_b = temp_dir("sdn_ds_b");
  auto rig = dataio::make_default_rig(2, 16, 16);
  dataio::NoiseSpec spec;
  spec.seed = 5;

  auto ma = dataio::generate_dataset(2, rig, spec, 123, dir_a.string());
  auto mb = dataio::generate_dataset(2, rig, spec, 123, dir_b.string());
  CHECK(read_file(ma) == read_file(mb));
  // payload files are byte-identical too
  CHECK(read_file(dir_a / "scene_0001" / "depth_noisy_v1.pfm") ==
        read_file(dir_b / "scene_0001" / "depth_noisy_v1.pfm"));
  CHECK(read_file(dir_a / "scene_0000" / "color_v0.ppm") ==
        read_file(dir_b / "scene_0000" / "color_v0.ppm"));

  const auto dir_c = temp_dir("sdn_ds_c");
  auto mc = dataio::generate_dataset(0, rig, spec, 9, dir_c.string());
  auto ds = dataio::load_dataset(dir_c.string());
  CHECK(ds.sample_dirs.empty());

  // loading a sample round-trips the frames
  auto loaded = dataio::load_dataset(dir_a.string());
  REQUIRE(loaded.sample_dirs.size() == 2);
  auto sample = dataio::load_sample(loaded, 0);
  REQUIRE(sample.frames.size() == 2);
  CHECK(sample.frames[0].depth.width() == 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      CHECK((sample.frames[0].mask(x, y) != 0) == (sample.frames[0].depth(x, y) > 0));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}

TEST_CASE("generated scenes are co-visible across the rig") {
  auto rig = dataio::make_default_rig(4, 64, 64);
  auto scene = dataio::make_scene(321);
  std::vector<Image<float>> depths;
  for (const auto& v : rig.views) depths.push_back(dataio::render_view(scene, v).first);

  for (std::size_t s = 0; s < rig.views.size(); ++s) {
    std::int64_t valid = 0, transferable = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (!(depths[s](x, y) > 0)) continue;
        ++valid;
        for (std::size_t t = 0; t < rig.views.size(); ++t) {
          if (t == s) continue;
          auto tr = geo::transfer(geo::Vec2<double>(x, y), double(depths[s](x, y)),
                                  rig.views[s], rig.views[t]);
          if (tr && tr->pixel.x() >= 0 && tr->pixel.x() <= 63 && tr->pixel.y() >= 0 &&
              tr->pixel.y() <= 63) {
            ++transferable;
            break;
          }
        }
      }
    REQUIRE(valid > 0);
    CHECK(double(transferable) / double(valid) >= 0.3);
  }
}

TEST_CASE("ground-truth depth is multi-view consistent on unoccluded pixels") {
  auto rig = dataio::make_default_rig(4, 64, 64);
  auto scene = dataio::make_scene(654);
  std::vector<Image<float>> depths;
  std::vector<Image<float>> colors;
  for (const auto& v : rig.views) {
    auto [d, c] = dataio::render_view(scene, v);
    depths.push_back(d);
    colors.push_back(c);
  }

  std::int64_t agreeing = 0, tested = 0;
  double color_err_sum = 0;
  std::int64_t color_n = 0;
  for (std::size_t s = 0; s < rig.views.size(); ++s)
    for (std::size_t t = 0; t < rig.views.size(); ++t) {
      if (s == t) continue;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          if (!(depths[s](x, y) > 0)) continue;
          auto tr = geo::transfer(geo::Vec2<double>(x, y), double(depths[s](x, y)),
                                  rig.views[s], rig.views[t]);
          if (!tr) continue;
          const int tx = int(std::lround(tr->pixel.x()));
          const int ty = int(std::lround(tr->pixel.y()));
          if (tx < 1 || tx >= 63 || ty < 1 || ty >= 63) continue;
          if (!(depths[t](tx, ty) > 0)) continue;
          double quant = 0;
          for (auto [ox, oy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
            if (depths[t](tx + ox, ty + oy) > 0)
              quant = std::max(quant,
                               std::abs(double(depths[t](tx + ox, ty + oy)) -
                                        double(depths[t](tx, ty))));
          ++tested;
          const double diff = tr->depth - double(depths[t](tx, ty));
          // a transferred point may be occluded (behind the target surface)
          // but must never land in front of it
          CHECK(diff >= -(2.0 * quant + 1e-4));
          if (std::abs(diff) <= 2.0 * quant + 1e-4) {
            ++agreeing;
            // photoconsistency on co-visible, unoccluded pixels (bilinear)
            const double fx = tr->pixel.x() - std::floor(tr->pixel.x());
            const double fy = tr->pixel.y() - std::floor(tr->pixel.y());
            const int x0 = int(std::floor(tr->pixel.x()));
            const int y0 = int(std::floor(tr->pixel.y()));
            for (int c = 0; c < 3; ++c) {
              const double sampled =
                  (1 - fx) * (1 - fy) * colors[t](x0, y0, c) +
                  fx * (1 - fy) * colors[t](x0 + 1, y0, c) +
                  (1 - fx) * fy * colors[t](x0, y0 + 1, c) +
                  fx * fy * colors[t](x0 + 1, y0 + 1, c);
              color_err_sum += std::abs(sampled - double(colors[s](x, y, c)));
              ++color_n;
            }
          }
        }
    }
  REQUIRE(tested > 5000);
  CHECK(double(agreeing) / double(tested) > 0.6);
  CHECK(color_err_sum / double(color_n) < 2.0 / 255.0);
}

TEST_SUITE_END();
