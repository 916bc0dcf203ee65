#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "sdn/model.hpp"

using namespace sdn;
using namespace sdn::testing;
using nn::Tensor;

namespace {

Tensor<double> random_norm_depth(int H, int W, Rng& rng, double sparsity = 0.4) {
  std::vector<double> d(std::size_t(H) * W, 0.0);
  for (auto& v : d) v = rng.uniform() < sparsity ? rng.uniform(0.2, 0.9) : 0.0;
  return Tensor<double>::constant({1, 1, H, W}, std::move(d));
}

Tensor<double> mask_of(const Tensor<double>& depth) {
  std::vector<double> m(depth.numel());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = depth.value()[i] > 0 ? 1.0 : 0.0;
  return Tensor<double>::constant(depth.shape(), std::move(m));
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("forward preserves the input shape") {
  model::ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.height = 64;
  cfg.width = 64;
  model::DenoiseModel<double> m(cfg, 1);
  Rng rng(2);
  auto x = random_norm_depth(64, 64, rng);
  auto [y, om] = m.forward_graph(x, mask_of(x));
  CHECK(y.shape() == std::vector<int>{1, 1, 64, 64});
  CHECK(om.shape() == std::vector<int>{1, 1, 64, 64});
}

TEST_CASE("channel progression doubles at every downsampling") {
  model::ModelConfig cfg;
  cfg.base_channels = 16;
  model::DenoiseModel<float> m(cfg, 3);
  auto params = m.named_parameters();
  auto shape_of = [&](const std::string& name) -> std::vector<int> {
    for (auto& [n, t] : params)
      if (n == name) return t.shape();
    REQUIRE(false);
    return {};
  };
  CHECK(shape_of("enc1.weight")[0] == 16);   // full resolution: 16
  CHECK(shape_of("enc2.weight")[0] == 32);   // downsampling 1: 16 -> 32
  CHECK(shape_of("enc5.weight")[0] == 64);   // downsampling 2: 32 -> 64
  CHECK(shape_of("enc8.weight")[0] == 128);  // downsampling 3: 64 -> 128
  CHECK(shape_of("enc2.weight")[1] == 16);
  CHECK(shape_of("enc5.weight")[1] == 32);
  CHECK(shape_of("enc8.weight")[1] == 64);
}

TEST_CASE("same seed gives identical parameters, different seed differs") {
  model::ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.height = 16;
  cfg.width = 16;
  model::DenoiseModel<double> a(cfg, 42), b(cfg, 42), c(cfg, 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_diff_seed = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].value() != pb[i].value()) all_equal = false;
    if (pa[i].value() != pc[i].value()) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("all-zero mask still produces a defined (zero) output") {
  model::ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.height = 16;
  cfg.width = 16;
  model::DenoiseModel<double> m(cfg, 7);
  auto x = Tensor<double>::constant({1, 1, 16, 16}, std::vector<double>(256, 0.0));
  auto zeros = Tensor<double>::constant({1, 1, 16, 16}, std::vector<double>(256, 0.0));
  auto [y, om] = m.forward_graph(x, zeros);
  for (double v : y.value()) CHECK(v == 0.0);
  for (double v : om.value()) CHECK(v == 0.0);
}

TEST_CASE("untrained network stays finite over random inputs") {
  model::ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.height = 32;
  cfg.width = 32;
  model::DenoiseModel<float> m(cfg, 11);
  Rng rng(100);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> d(1024, 0.f);
    for (auto& v : d) v = rng.uniform() < 0.4 ? float(rng.uniform(0.05, 1.0)) : 0.f;
    std::vector<float> mk(1024);
    for (std::size_t i = 0; i < d.size(); ++i) mk[i] = d[i] > 0 ? 1.f : 0.f;
    auto x = Tensor<float>::constant({1, 1, 32, 32}, std::move(d));
    auto msk = Tensor<float>::constant({1, 1, 32, 32}, std::move(mk));
    auto [y, om] = m.forward_graph(x, msk);
    for (float v : y.value()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("indivisible input sizes are rejected with the divisibility named") {
  model::ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.height = 20;  // not divisible by 8
  cfg.width = 16;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible by 8"), ConfigError);

  cfg.height = 16;
  model::DenoiseModel<double> m(cfg, 1);
  auto x = Tensor<double>::constant({1, 1, 20, 16}, std::vector<double>(320, 0.5));
  auto mk = Tensor<double>::constant({1, 1, 20, 16}, std::vector<double>(320, 1.0));
  CHECK_THROWS_WITH_AS(m.forward_graph(x, mk), doctest::Contains("divisible by 8"), ConfigError);
}

TEST_CASE("NaN input is rejected") {
  model::ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.height = 16;
  cfg.width = 16;
  model::DenoiseModel<double> m(cfg, 1);
  std::vector<double> d(256, 0.5);
  d[7] = std::nan("");
  auto x = Tensor<double>::constant({1, 1, 16, 16}, std::move(d));
  auto mk = Tensor<double>::constant({1, 1, 16, 16}, std::vector<double>(256, 1.0));
  CHECK_THROWS_AS(m.forward_graph(x, mk), ConfigError);
}

TEST_CASE("weights trained at one size run at a larger size (fully convolutional)") {
  model::ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.height = 64;
  cfg.width = 64;
  model::DenoiseModel<float> m(cfg, 5);
  Rng rng(6);
  std::vector<float> d(std::size_t(96) * 96, 0.f);
  for (auto& v : d) v = rng.uniform() < 0.5 ? float(rng.uniform(0.1, 1.0)) : 0.f;
  std::vector<float> mk(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mk[i] = d[i] > 0 ? 1.f : 0.f;
  auto x = Tensor<float>::constant({1, 1, 96, 96}, std::move(d));
  auto msk = Tensor<float>::constant({1, 1, 96, 96}, std::move(mk));
  auto [y, om] = m.forward_graph(x, msk);
  CHECK(y.shape() == std::vector<int>{1, 1, 96, 96});
  for (float v : y.value()) REQUIRE(std::isfinite(v));
}

TEST_CASE("denoise clamps to [0, threshold] and zeroes outside the propagated mask") {
  model::ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.height = 16;
  cfg.width = 16;
  cfg.depth_threshold = 3.0;
  model::DenoiseModel<double> m(cfg, 9);
  Rng rng(8);
  Image<double> depth(16, 16, 1, 0.0);
  // valid block only in the top-left corner
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) depth(x, y) = rng.uniform(0.5, 2.5);
  auto mask = mask_from_depth(depth);
  auto [out, om] = m.denoise(depth, mask);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      CHECK(out(x, y) >= 0.0);
      CHECK(out(x, y) <= 3.0);
      if (!om(x, y)) CHECK(out(x, y) == 0.0);
    }
}

TEST_CASE("checkpoint round trip reproduces the forward pass") {
  namespace fs = std::filesystem;
  model::ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.height = 16;
  cfg.width = 16;
  model::DenoiseModel<float> a(cfg, 21);
  const auto path = (fs::temp_directory_path() / "sdn_model_rt.bin").string();
  a.save(path);
  model::DenoiseModel<float> b(cfg, 99);  // different init
  b.load(path);

  Rng rng(3);
  std::vector<float> d(256, 0.f);
  for (auto& v : d) v = rng.uniform() < 0.6 ? float(rng.uniform(0.1, 1.0)) : 0.f;
  std::vector<float> mk(256);
  for (std::size_t i = 0; i < 256; ++i) mk[i] = d[i] > 0 ? 1.f : 0.f;
  auto x = Tensor<float>::constant({1, 1, 16, 16}, d);
  auto msk = Tensor<float>::constant({1, 1, 16, 16}, mk);
  auto ya = a.forward_graph(x, msk).first;
  auto yb = b.forward_graph(x, msk).first;
  CHECK(ya.value() == yb.value());
  fs::remove(path);
}

TEST_CASE("model config file round trip") {
  namespace fs = std::filesystem;
  model::ModelConfig cfg;
  cfg.base_channels = 12;
  cfg.height = 48;
  cfg.width = 64;
  cfg.depth_threshold = 2.5;
  const auto path = (fs::temp_directory_path() / "sdn_model_cfg.txt").string();
  model::save_config(path, cfg);
  auto back = model::load_config(path);
  CHECK(back.base_channels == cfg.base_channels);
  CHECK(back.height == cfg.height);
  CHECK(back.width == cfg.width);
  CHECK(back.depth_threshold == doctest::Approx(cfg.depth_threshold));
  CHECK(back.kernel == cfg.kernel);
  fs::remove(path);
}

TEST_CASE("end-to-end tiny-model gradients match finite differences") {
  model::ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.height = 16;
  cfg.width = 16;
  model::DenoiseModel<double> m(cfg, 13);
  Rng rng(14);
  auto x = random_norm_depth(16, 16, rng, 0.6);
  auto msk = mask_of(x);
  // fixed random functional of the output keeps the root scalar
  std::vector<double> coeff(256);
  for (auto& v : coeff) v = rng.uniform(-1, 1);
  auto coeff_t = Tensor<double>::constant({1, 1, 16, 16}, coeff);

  auto scalar_fn = [&]() {
    auto [y, om] = m.forward_graph(x, msk);
    return nn::sum_all(nn::mul(y, coeff_t));
  };

  auto params = m.parameters();
  for (auto& p : params) p.zero_grad();
  auto root = scalar_fn();
  nn::backward(root);

  // sample a few parameters from every layer
  Rng pick(77);
  const double h = 1e-5;
  int checked = 0;
  for (auto& p : params) {
    for (int rep = 0; rep < 2; ++rep) {
      const std::size_t i = pick.next_below(p.numel());
      const double keep = p.value()[i];
      p.value()[i] = keep + h;
      const double fp = scalar_fn().item();
      p.value()[i] = keep - h;
      const double fm = scalar_fn().item();
      p.value()[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      const double an = p.grad()[i];
      if (std::abs(fd) > 1e-8 || std::abs(an) > 1e-8) {
        CHECK(rel_err(an, fd, 1e-6) < 1e-3);
        ++checked;
      }
    }
  }
  CHECK(checked > 20);
}

TEST_SUITE_END();
