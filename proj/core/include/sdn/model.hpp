#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sdn/image.hpp"
#include "sdn/nn.hpp"

namespace sdn::model {

struct ModelConfig {
  int base_channels = 16;
  int height = 64;
  int width = 64;
  double depth_threshold = 3.0;  // meters; also the input normalization scale
  int kernel = 3;

  void validate() const {
    SDN_CHECK_CONFIG(base_channels >= 4, "model: base_channels must be >= 4");
    SDN_CHECK_CONFIG(height % 8 == 0 && width % 8 == 0,
                     "model: input size ", width, "x", height,
                     " must be divisible by 8 (three stride-2 downsamplings)");
    SDN_CHECK_CONFIG(depth_threshold > 0, "model: depth threshold must be positive");
    SDN_CHECK_CONFIG(kernel % 2 == 1 && kernel >= 1, "model: kernel must be odd");
  }
};

// Key-value config file (one `key=value` per line).
void save_config(const std::string& path, const ModelConfig& cfg);
ModelConfig load_config(const std::string& path);

// Denoising autoencoder.
//
// Encoder: 9 partial convolutions grouped [conv, conv/2, conv] x3 (stride 2
// at layers 2, 5, 8), ELU after each, channels doubling at every
// downsampling. Latent: 2 pre-activation residual blocks
// (ELU-CONV-ELU-CONV + identity). Decoder: head conv, then 3 x
// (nearest-neighbor upsample -> conv -> concat skip -> 1x1 conv), a tail
// conv, and a linear 1-channel output conv - 9 convolutions in total, ELU on
// all but the output. Every convolution is partial; the validity mask enters
// with the input and is updated layer by layer.
template <class T>
class DenoiseModel {
 public:
  DenoiseModel(const ModelConfig& cfg, std::uint64_t seed);

  // Tape forward on normalized depth (depth / threshold, zeroed where
  // invalid). Input (N,1,H,W) with H, W divisible by 8 (not necessarily the
  // configured size; the network is fully convolutional). Returns the raw
  // prediction (same shape, normalized units, unclamped) and the propagated
  // output mask (constant).
  std::pair<nn::Tensor<T>, nn::Tensor<T>> forward_graph(const nn::Tensor<T>& x_norm,
                                                        const nn::Tensor<T>& mask) const;

  // Inference on a single depth map in meters. Output is clamped to
  // [0, threshold] outside the gradient path and zeroed where the propagated
  // mask is zero. Rejects NaN inputs and sizes not divisible by 8.
  std::pair<Image<T>, MaskImage> denoise(const Image<T>& depth_m, const MaskImage& mask) const;

  // Layer-ordered named parameters (weights and biases).
  std::vector<std::pair<std::string, nn::Tensor<T>>> named_parameters() const;
  std::vector<nn::Tensor<T>> parameters() const;
  std::size_t parameter_count() const;

  const ModelConfig& config() const { return cfg_; }

  void save(const std::string& checkpoint_path) const;
  void load(const std::string& checkpoint_path);

 private:
  ModelConfig cfg_;
  std::vector<std::pair<std::string, nn::PartialConv2d<T>>> layers_;

  const nn::PartialConv2d<T>& layer(const std::string& name) const;
};

using DenoiseModelF = DenoiseModel<float>;
using DenoiseModelD = DenoiseModel<double>;

}  // namespace sdn::model
