#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sdn/nn.hpp"

using namespace sdn;
using namespace sdn::testing;
using nn::Tensor;

namespace {

// Plain dense convolution; partial_conv must match it when the mask is all
// ones.
std::vector<double> reference_conv(const std::vector<double>& x, int N, int Ci, int H, int W,
                                   const std::vector<double>& w, const std::vector<double>& b,
                                   int Co, int k, int s, int p, int& OH, int& OW) {
  OH = (H + 2 * p - k) / s + 1;
  OW = (W + 2 * p - k) / s + 1;
  std::vector<double> y(std::size_t(N) * Co * OH * OW, 0.0);
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = b[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                const int ih = oh * s + kh - p, iw = ow * s + kw - p;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += w[((std::size_t(co) * Ci + ci) * k + kh) * k + kw] *
                       x[((std::size_t(n) * Ci + ci) * H + ih) * W + iw];
              }
          y[((std::size_t(n) * Co + co) * OH + oh) * OW + ow] = acc;
        }
  return y;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Central finite differences of scalar_fn w.r.t. every element of `leaf`.
template <class Fn>
void fd_check_leaf(const Tensor<double>& leaf, Fn scalar_fn, double h = 1e-5, double tol = 1e-4) {
  leaf.zero_grad();
  auto root = scalar_fn();
  nn::backward(root);
  const auto analytic = leaf.grad();
  int checked = 0;
  for (std::size_t i = 0; i < leaf.numel(); ++i) {
    const double keep = leaf.value()[i];
    leaf.value()[i] = keep + h;
    const double fp = scalar_fn().item();
    leaf.value()[i] = keep - h;
    const double fm = scalar_fn().item();
    leaf.value()[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    if (std::abs(fd) > 1e-9 || std::abs(analytic[i]) > 1e-9) {
      CHECK(rel_err(analytic[i], fd, 1e-6) < tol);
      ++checked;
    }
  }
  CHECK(checked > 0);
  leaf.zero_grad();
}

}  // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("backward of y = 2x and gradient accumulation across passes") {
  auto x = Tensor<double>::leaf({1}, {3.0}, true);
  auto y = nn::mul_scalar(x, 2.0);
  CHECK(y.item() == 6.0);
  nn::backward(y);
  CHECK(x.grad()[0] == 2.0);
  nn::backward(y);  // accumulates
  CHECK(x.grad()[0] == 4.0);

  auto img = Tensor<double>::leaf({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  CHECK_THROWS_AS(nn::backward(img), UsageError);  // non-scalar root
}

TEST_CASE("randomized composite graph matches finite differences") {
  Rng rng(99);
  auto a = Tensor<double>::leaf({1, 2, 5, 5}, random_vec(50, rng, 0.2, 1.5), true);
  auto b = Tensor<double>::leaf({1, 2, 5, 5}, random_vec(50, rng, 0.3, 1.2), true);
  auto c = Tensor<double>::leaf({1, 1, 5, 5}, random_vec(25, rng, 0.5, 1.5), true);

  auto scalar_fn = [&]() {
    auto t1 = nn::mul(nn::elu(a, 1.0), nn::sqrt(b));
    auto t2 = nn::broadcast_mul(t1, c);
    auto t3 = nn::box3(nn::shift2d(t2, 1, -1));
    auto t4 = nn::concat_channels(t3, nn::abs(t2));
    auto t5 = nn::channel_sum(nn::tukey_rho(t4, 2.2));
    auto t6 = nn::add(nn::exp(nn::mul_scalar(t5, -0.2)), nn::rsqrt(nn::add_scalar(c, 1.0)));
    auto t7 = nn::upsample_nn(nn::slice_channels(nn::concat_channels(t6, t6), 1, 1), 2);
    auto t8 = nn::div(t7, nn::add_scalar(nn::square(t7), 1.0));
    return nn::sum_all(t8);
  };
  fd_check_leaf(a, scalar_fn);
  fd_check_leaf(b, scalar_fn);
  fd_check_leaf(c, scalar_fn);
}

TEST_CASE("elu closed forms and finite differences") {
  auto x = Tensor<double>::leaf({1, 1, 1, 4}, {0.0, -40.0, 1.5, -0.3}, true);
  auto y = nn::elu(x, 1.0);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == doctest::Approx(-1.0).epsilon(1e-12));  // asymptote -a
  CHECK(y.value()[2] == 1.5);
  CHECK(y.value()[3] == doctest::Approx(std::expm1(-0.3)).epsilon(1e-12));

  Rng rng(4);
  auto z = Tensor<double>::leaf({1, 1, 2, 4}, random_vec(8, rng, -2, 2), true);
  auto fn = [&]() { return nn::sum_all(nn::square(nn::elu(z, 1.0))); };
  fd_check_leaf(z, fn);
}

TEST_CASE("nearest-neighbor upsampling replicates blocks; gradient is the block sum") {
  auto x = Tensor<double>::leaf({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  auto y = nn::upsample_nn(x, 2);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 4, 4});
  const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(y.value() == expect);

  // top-left stride-2 subsampling undoes the upsampling
  for (int yy = 0; yy < 2; ++yy)
    for (int xx = 0; xx < 2; ++xx)
      CHECK(y.value()[(yy * 2) * 4 + xx * 2] == x.value()[yy * 2 + xx]);

  auto s = nn::sum_all(y);
  nn::backward(s);
  for (double g : x.grad()) CHECK(g == 4.0);
}

TEST_CASE("partial convolution equals dense convolution under an all-ones mask") {
  // Padded taps count as invalid, so the equality is exact wherever the
  // window lies fully inside the image; border windows match the standard
  // convolution rescaled by k^2 / (in-bounds taps).
  Rng rng(7);
  const int N = 2, Ci = 3, H = 6, W = 7, Co = 4, k = 3;
  auto x = Tensor<double>::leaf({N, Ci, H, W}, random_vec(std::size_t(N) * Ci * H * W, rng), true);
  auto mask =
      Tensor<double>::constant({N, 1, H, W}, std::vector<double>(std::size_t(N) * H * W, 1.0));
  for (int stride : {1, 2}) {
    auto layer = nn::make_partial_conv<double>(Ci, Co, k, stride, rng);
    auto [y, m2] = nn::partial_conv(x, mask, layer);
    int OH, OW;
    auto ref = reference_conv(x.value(), N, Ci, H, W, layer.weight.value(), layer.bias.value(),
                              Co, k, stride, k / 2, OH, OW);
    REQUIRE(y.shape() == std::vector<int>{N, Co, OH, OW});
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co)
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow) {
            int taps = 0;
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                const int ih = oh * stride + kh - k / 2, iw = ow * stride + kw - k / 2;
                if (ih >= 0 && ih < H && iw >= 0 && iw < W) ++taps;
              }
            const std::size_t i = ((std::size_t(n) * Co + co) * OH + oh) * OW + ow;
            const double bias = layer.bias.value()[co];
            const double expect = (ref[i] - bias) * (double(k * k) / taps) + bias;
            CHECK(y.value()[i] == doctest::Approx(expect).epsilon(1e-12));
            if (taps == k * k)  // interior: exact reduction to the dense conv
              CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
          }
    for (double v : m2.value()) CHECK(v == 1.0);
  }
}

TEST_CASE("partial convolution renormalizes by the valid-tap fraction") {
  Rng rng(8);
  auto x = Tensor<double>::leaf({1, 1, 3, 3}, random_vec(9, rng), true);
  std::vector<double> mv{1, 0, 1, 0, 1, 1, 0, 0, 1};  // 5 valid taps
  auto mask = Tensor<double>::constant({1, 1, 3, 3}, mv);
  auto layer = nn::make_partial_conv<double>(1, 1, 3, 1, rng);
  auto [y, m2] = nn::partial_conv(x, mask, layer);

  double masked_sum = 0;
  for (int yy = 0; yy < 3; ++yy)
    for (int xx = 0; xx < 3; ++xx)
      masked_sum += layer.weight.value()[yy * 3 + xx] * x.value()[yy * 3 + xx] * mv[yy * 3 + xx];
  const double expect = masked_sum * (9.0 / 5.0) + layer.bias.value()[0];
  CHECK(y.value()[4] == doctest::Approx(expect).epsilon(1e-12));

  // fully-invalid window: zero output, zero mask
  std::vector<double> mv2(9, 0.0);
  mv2[8] = 1.0;
  auto mask2 = Tensor<double>::constant({1, 1, 3, 3}, mv2);
  auto [y2, m22] = nn::partial_conv(x, mask2, layer);
  CHECK(y2.value()[0] == 0.0);
  CHECK(m22.value()[0] == 0.0);
  CHECK(m22.value()[4] == 1.0);  // center window reaches the valid pixel

  // non-binary masks are rejected
  auto bad = Tensor<double>::constant({1, 1, 3, 3}, std::vector<double>(9, 0.5));
  CHECK_THROWS_AS(nn::partial_conv(x, bad, layer), ConfigError);
}

TEST_CASE("partial convolution gradients match finite differences") {
  Rng rng(31);
  const int N = 1, Ci = 2, H = 5, W = 5, Co = 2;
  auto x = Tensor<double>::leaf({N, Ci, H, W}, random_vec(std::size_t(N) * Ci * H * W, rng), true);
  std::vector<double> mv(std::size_t(N) * H * W);
  for (auto& v : mv) v = rng.uniform() < 0.75 ? 1.0 : 0.0;
  auto mask = Tensor<double>::constant({N, 1, H, W}, mv);
  for (int stride : {1, 2}) {
    auto layer = nn::make_partial_conv<double>(Ci, Co, 3, stride, rng);
    auto fn = [&]() {
      auto [y, m2] = nn::partial_conv(x, mask, layer);
      return nn::sum_all(nn::square(y));
    };
    fd_check_leaf(x, fn);
    fd_check_leaf(layer.weight, fn);
    fd_check_leaf(layer.bias, fn);
  }
}

TEST_CASE("mask update is exactly the window dilation of the input mask") {
  Rng rng(12);
  const int H = 16, W = 16;
  std::vector<double> mv(H * W, 0.0);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) mv[y * W + x] = 1.0;
  auto mask = Tensor<double>::constant({1, 1, H, W}, mv);
  auto x = Tensor<double>::leaf({1, 1, H, W}, random_vec(H * W, rng), true);
  auto layer = nn::make_partial_conv<double>(1, 1, 3, 1, rng);
  auto [y, m2] = nn::partial_conv(x, mask, layer);
  for (int yy = 0; yy < H; ++yy)
    for (int xx = 0; xx < W; ++xx) {
      bool near = false;
      for (int j = -1; j <= 1 && !near; ++j)
        for (int i = -1; i <= 1; ++i) {
          const int sy = yy + j, sx = xx + i;
          if (sy >= 0 && sy < H && sx >= 0 && sx < W && mv[sy * W + sx] > 0) {
            near = true;
            break;
          }
        }
      CHECK(m2.value()[yy * W + xx] == (near ? 1.0 : 0.0));
      if (!near) CHECK(y.value()[yy * W + xx] == 0.0);
    }
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  auto p = Tensor<double>::leaf({1, 1, 1, 4}, {1, 2, 3, 4}, true);
  nn::Adam<double> opt({p}, {});
  p.grad();  // allocate zeros
  CHECK(opt.step());
  CHECK(p.value() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("adam: first unit-gradient step moves by about lr") {
  auto p = Tensor<double>::leaf({1}, {0.0}, true);
  nn::AdamConfig<double> cfg;
  cfg.lr = 2e-4;
  nn::Adam<double> opt({p}, cfg);
  p.grad()[0] = 1.0;
  CHECK(opt.step());
  CHECK(std::abs(-p.value()[0] - cfg.lr) <= cfg.lr * 1e-6);
}

TEST_CASE("adam: rejects non-finite gradients without touching state") {
  auto p = Tensor<double>::leaf({1}, {1.0}, true);
  nn::Adam<double> opt({p}, {});
  p.grad()[0] = std::nan("");
  CHECK_FALSE(opt.step());
  CHECK(p.value()[0] == 1.0);
  CHECK(opt.step_count() == 0);
}

TEST_CASE("adam: quadratic bowl converges within 5000 steps") {
  auto p = Tensor<double>::leaf({1, 1, 1, 2}, {2.0, -3.0}, true);
  nn::AdamConfig<double> cfg;
  cfg.lr = 0.01;
  nn::Adam<double> opt({p}, cfg);
  for (int i = 0; i < 5000; ++i) {
    auto loss = nn::sum_all(nn::square(p));
    nn::backward(loss);
    REQUIRE(opt.step());
    if (std::abs(p.value()[0]) < 1e-6 && std::abs(p.value()[1]) < 1e-6) break;
  }
  CHECK(std::abs(p.value()[0]) < 1e-6);
  CHECK(std::abs(p.value()[1]) < 1e-6);
}

TEST_CASE("xavier initialization hits the fan-based variance within 10%") {
  Rng rng(1234);
  const std::size_t fan_in = 9 * 64, fan_out = 9 * 64;
  std::vector<double> w(9 * 64 * 64);  // 36864 samples
  nn::xavier_fill(w, fan_in, fan_out, rng);
  double mean = 0;
  for (double v : w) mean += v;
  mean /= double(w.size());
  double var = 0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= double(w.size());
  const double target = 2.0 / double(fan_in + fan_out);
  CHECK(std::abs(var - target) <= 0.1 * target);
}

TEST_CASE("checkpoint round trip preserves names, shapes and payload") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "sdn_ckpt_test.bin";
  Rng rng(5);
  std::vector<nn::NamedArrayView> arrays(2);
  arrays[0].name = "enc1.weight";
  arrays[0].shape = {4, 1, 3, 3};
  arrays[0].data.resize(36);
  for (auto& v : arrays[0].data) v = float(rng.uniform(-1, 1));
  arrays[1].name = "enc1.bias";
  arrays[1].shape = {4};
  arrays[1].data = {0.1f, -0.2f, 0.3f, -0.4f};
  nn::save_checkpoint(path.string(), arrays);

  auto back = nn::load_checkpoint(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == arrays[0].name);
  CHECK(back[0].shape == arrays[0].shape);
  CHECK(back[0].data == arrays[0].data);
  CHECK(back[1].data == arrays[1].data);

  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPT" << '\n';
  }
  CHECK_THROWS_AS(nn::load_checkpoint(path.string()), ConfigError);
  fs::remove(path);
}

TEST_CASE("berhu joint: border, count and finite differences") {
  Rng rng(77);
  auto r = Tensor<double>::leaf({1, 1, 4, 4}, random_vec(16, rng, -2.0, 2.0), true);
  std::vector<double> mv(16, 1.0);
  mv[3] = 0.0;
  auto mask = Tensor<double>::constant({1, 1, 4, 4}, mv);

  double border = 0;
  std::int64_t count = 0;
  auto loss = nn::berhu_joint<double>({r}, {mask}, 0.2, &border, &count);
  (void)loss;
  CHECK(count == 15);
  double rmax = 0;
  for (int i = 0; i < 16; ++i)
    if (mv[i] > 0) rmax = std::max(rmax, std::abs(r.value()[i]));
  CHECK(border == doctest::Approx(0.2 * rmax).epsilon(1e-12));

  auto fn = [&]() { return nn::berhu_joint<double>({r}, {mask}, 0.2, nullptr, nullptr); };
  fd_check_leaf(r, fn);

  // two residual tensors share one border
  auto r2 = Tensor<double>::leaf({1, 1, 4, 4}, random_vec(16, rng, -3.0, 3.0), true);
  auto ones = Tensor<double>::constant({1, 1, 4, 4}, std::vector<double>(16, 1.0));
  auto fn2 = [&]() {
    return nn::berhu_joint<double>({r, r2}, {mask, ones}, 0.2, nullptr, nullptr);
  };
  fd_check_leaf(r, fn2);
  fd_check_leaf(r2, fn2);
}

TEST_SUITE_END();
