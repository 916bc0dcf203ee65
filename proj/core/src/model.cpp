#include "sdn/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace sdn::model {

void save_config(const std::string& path, const ModelConfig& cfg) {
  std::ofstream f(path);
  SDN_CHECK_CONFIG(bool(f), "model config: cannot write ", path);
  f << "base_channels=" << cfg.base_channels << "\n"
    << "height=" << cfg.height << "\n"
    << "width=" << cfg.width << "\n"
    << "depth_threshold=" << cfg.depth_threshold << "\n"
    << "kernel=" << cfg.kernel << "\n";
}

ModelConfig load_config(const std::string& path) {
  std::ifstream f(path);
  SDN_CHECK_CONFIG(bool(f), "model config: cannot open ", path);
  ModelConfig cfg;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "base_channels") cfg.base_channels = std::stoi(val);
    else if (key == "height") cfg.height = std::stoi(val);
    else if (key == "width") cfg.width = std::stoi(val);
    else if (key == "depth_threshold") cfg.depth_threshold = std::stod(val);
    else if (key == "kernel") cfg.kernel = std::stoi(val);
    else SDN_CHECK_CONFIG(false, "model config: unknown key '", key, "' in ", path);
  }
  cfg.validate();
  return cfg;
}

template <class T>
DenoiseModel<T>::DenoiseModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(hash_mix(seed, 0x6d6f64656cull));
  const int b = cfg_.base_channels;
  const int k = cfg_.kernel;
  auto conv = [&](const std::string& name, int ci, int co, int kernel, int stride) {
    layers_.emplace_back(name, nn::make_partial_conv<T>(ci, co, kernel, stride, rng));
  };

  // encoder: [conv, conv/2, conv] x3, channels double at each downsampling
  conv("enc1", 1, b, k, 1);
  conv("enc2", b, 2 * b, k, 2);
  conv("enc3", 2 * b, 2 * b, k, 1);
  conv("enc4", 2 * b, 2 * b, k, 1);
  conv("enc5", 2 * b, 4 * b, k, 2);
  conv("enc6", 4 * b, 4 * b, k, 1);
  conv("enc7", 4 * b, 4 * b, k, 1);
  conv("enc8", 4 * b, 8 * b, k, 2);
  conv("enc9", 8 * b, 8 * b, k, 1);
  // latent: 2 pre-activation residual blocks
  conv("lat1a", 8 * b, 8 * b, k, 1);
  conv("lat1b", 8 * b, 8 * b, k, 1);
  conv("lat2a", 8 * b, 8 * b, k, 1);
  conv("lat2b", 8 * b, 8 * b, k, 1);
  // decoder: head, 3 x (upsample conv + post-concat 1x1), tail, output
  conv("dec_head", 8 * b, 8 * b, k, 1);
  conv("up1", 8 * b, 4 * b, k, 1);
  conv("fuse1", 8 * b, 4 * b, 1, 1);
  conv("up2", 4 * b, 2 * b, k, 1);
  conv("fuse2", 4 * b, 2 * b, 1, 1);
  conv("up3", 2 * b, b, k, 1);
  conv("fuse3", 2 * b, b, 1, 1);
  conv("dec_tail", b, b, k, 1);
  conv("out", b, 1, k, 1);
}

template <class T>
const nn::PartialConv2d<T>& DenoiseModel<T>::layer(const std::string& name) const {
  for (const auto& [n, l] : layers_)
    if (n == name) return l;
  SDN_CHECK_USAGE(false, "model: no layer named ", name);
  throw;  // unreachable
}

template <class T>
std::pair<nn::Tensor<T>, nn::Tensor<T>> DenoiseModel<T>::forward_graph(
    const nn::Tensor<T>& x_norm, const nn::Tensor<T>& mask) const {
  SDN_CHECK_CONFIG(x_norm.shape().size() == 4 && x_norm.dim(1) == 1,
                   "model: input must be (N,1,H,W)");
  SDN_CHECK_CONFIG(x_norm.dim(2) % 8 == 0 && x_norm.dim(3) % 8 == 0,
                   "model: input size ", x_norm.dim(3), "x", x_norm.dim(2),
                   " must be divisible by 8");
  for (T v : x_norm.value())
    SDN_CHECK_CONFIG(std::isfinite(double(v)), "model: input contains non-finite values");

  const T a = T(1);  // ELU(a = 1)
  auto act = [&](const nn::Tensor<T>& t) { return nn::elu(t, a); };
  auto pc = [&](const char* name, const nn::Tensor<T>& x, const nn::Tensor<T>& m) {
    return nn::partial_conv(x, m, layer(name));
  };

  auto [e1, m1] = pc("enc1", x_norm, mask);
  e1 = act(e1);
  auto [e2, m2] = pc("enc2", e1, m1);
  e2 = act(e2);
  auto [e3, m3] = pc("enc3", e2, m2);
  e3 = act(e3);
  auto [e4, m4] = pc("enc4", e3, m3);
  e4 = act(e4);
  auto [e5, m5] = pc("enc5", e4, m4);
  e5 = act(e5);
  auto [e6, m6] = pc("enc6", e5, m5);
  e6 = act(e6);
  auto [e7, m7] = pc("enc7", e6, m6);
  e7 = act(e7);
  auto [e8, m8] = pc("enc8", e7, m7);
  e8 = act(e8);
  auto [e9, m9] = pc("enc9", e8, m8);
  e9 = act(e9);

  // skips: last feature at each resolution before the next downsampling
  const auto skip_full = e1;   // b channels, full res
  const auto skip_half = e4;   // 2b, 1/2
  const auto skip_quart = e7;  // 4b, 1/4
  const auto m_full = m1, m_half = m4, m_quart = m7;

  // latent residual blocks (pre-activation, identity mapping)
  auto x = e9;
  auto m = m9;
  for (const char* base : {"lat1", "lat2"}) {
    auto [h1, mh1] = nn::partial_conv(act(x), m, layer(std::string(base) + "a"));
    auto [h2, mh2] = nn::partial_conv(act(h1), mh1, layer(std::string(base) + "b"));
    x = nn::add(x, h2);
    m = nn::mask_union(m, mh2);
  }

  auto [d0, md0] = pc("dec_head", x, m);
  d0 = act(d0);
  x = d0;
  m = md0;

  struct Stage {
    const char* up;
    const char* fuse;
    const nn::Tensor<T>* skip;
    const nn::Tensor<T>* skip_mask;
  };
  const Stage stages[3] = {{"up1", "fuse1", &skip_quart, &m_quart},
                           {"up2", "fuse2", &skip_half, &m_half},
                           {"up3", "fuse3", &skip_full, &m_full}};
  for (const auto& st : stages) {
    x = nn::upsample_nn(x, 2);
    m = nn::mask_upsample(m, 2);
    auto [u, mu] = pc(st.up, x, m);
    u = act(u);
    SDN_CHECK_CONFIG(u.dim(2) == st.skip->dim(2) && u.dim(3) == st.skip->dim(3),
                     "model: skip connection resolution mismatch");
    x = nn::concat_channels(u, *st.skip);
    m = nn::mask_union(mu, *st.skip_mask);
    auto [f, mf] = pc(st.fuse, x, m);
    x = act(f);
    m = mf;
  }

  auto [t1, mt1] = pc("dec_tail", x, m);
  t1 = act(t1);
  auto [y, my] = pc("out", t1, mt1);  // linear output layer
  return {y, my};
}

template <class T>
std::pair<Image<T>, MaskImage> DenoiseModel<T>::denoise(const Image<T>& depth_m,
                                                        const MaskImage& mask) const {
  SDN_CHECK_CONFIG(depth_m.channels() == 1, "denoise: depth must be single-channel");
  SDN_CHECK_CONFIG(depth_m.width() == mask.width() && depth_m.height() == mask.height(),
                   "denoise: mask size mismatch");
  const int H = depth_m.height(), W = depth_m.width();
  const T thr = T(cfg_.depth_threshold);
  std::vector<T> x(std::size_t(H) * W), mv(std::size_t(H) * W);
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx) {
      const bool valid = mask(xx, y) != 0 && depth_m(xx, y) > T(0);
      mv[std::size_t(y) * W + xx] = valid ? T(1) : T(0);
      x[std::size_t(y) * W + xx] = valid ? depth_m(xx, y) / thr : T(0);
    }
  auto xt = nn::Tensor<T>::constant({1, 1, H, W}, std::move(x));
  auto mt = nn::Tensor<T>::constant({1, 1, H, W}, std::move(mv));
  auto [pred, out_mask] = forward_graph(xt, mt);

  Image<T> out(W, H, 1);
  MaskImage om(W, H, 1);
  const auto& pv = pred.value();
  const auto& omv = out_mask.value();
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx) {
      const std::size_t i = std::size_t(y) * W + xx;
      if (omv[i] > T(0)) {
        T d = pv[i] * thr;
        if (d < T(0)) d = T(0);
        if (d > thr) d = thr;
        out(xx, y) = d;
        om(xx, y) = 1;
      }
    }
  return {out, om};
}

template <class T>
std::vector<std::pair<std::string, nn::Tensor<T>>> DenoiseModel<T>::named_parameters() const {
  std::vector<std::pair<std::string, nn::Tensor<T>>> out;
  for (const auto& [name, l] : layers_) {
    out.emplace_back(name + ".weight", l.weight);
    out.emplace_back(name + ".bias", l.bias);
  }
  return out;
}

template <class T>
std::vector<nn::Tensor<T>> DenoiseModel<T>::parameters() const {
  std::vector<nn::Tensor<T>> out;
  for (const auto& [name, l] : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

template <class T>
std::size_t DenoiseModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

template <class T>
void DenoiseModel<T>::save(const std::string& path) const {
  std::vector<nn::NamedArrayView> arrays;
  for (const auto& [name, t] : named_parameters()) {
    nn::NamedArrayView a;
    a.name = name;
    a.shape = t.shape();
    a.data.resize(t.numel());
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = float(t.value()[i]);
    arrays.push_back(std::move(a));
  }
  nn::save_checkpoint(path, arrays);
}

template <class T>
void DenoiseModel<T>::load(const std::string& path) {
  const auto arrays = nn::load_checkpoint(path);
  auto params = named_parameters();
  SDN_CHECK_CONFIG(arrays.size() == params.size(), "checkpoint: expected ", params.size(),
                   " arrays, found ", arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    SDN_CHECK_CONFIG(arrays[i].name == params[i].first, "checkpoint: array ", i, " is '",
                     arrays[i].name, "', expected '", params[i].first, "'");
    SDN_CHECK_CONFIG(arrays[i].shape == params[i].second.shape(),
                     "checkpoint: shape mismatch for ", arrays[i].name);
    auto& v = params[i].second.value();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = T(arrays[i].data[j]);
  }
}

template class DenoiseModel<float>;
template class DenoiseModel<double>;

}  // namespace sdn::model
