#pragma once

#include <string>
#include <vector>

#include "sdn/dataio.hpp"
#include "sdn/losses.hpp"
#include "sdn/model.hpp"
#include "sdn/nn.hpp"
#include "sdn/splat.hpp"

namespace sdn::trainer {

// Ablation variants: plain autoencoder, photometric only, photometric plus
// depth and/or surface priors.
enum class AblationMode { AE, P, PD, PN, PDN };

AblationMode parse_mode(const std::string& name);  // AE | P | PD | PN | PDN
std::string mode_name(AblationMode mode);          // canonical flag value
std::string mode_label(AblationMode mode);         // table label, e.g. "P+D+N"

// Zeroes the lambda weights of excluded terms and renormalizes the rest to
// sum to 1.
losses::LossWeights weights_for_mode(AblationMode mode, const losses::LossWeights& base);

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  int batch_size = 2;
  int iterations = 1000;
  losses::LossWeights weights;
  AblationMode mode = AblationMode::PDN;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  int base_channels = 16;
  int kernel = 3;

  void validate() const {
    SDN_CHECK_CONFIG(lr > 0, "train: lr must be positive");
    SDN_CHECK_CONFIG(batch_size >= 1, "train: batch_size must be >= 1");
    SDN_CHECK_CONFIG(iterations >= 0, "train: iterations must be >= 0");
    SDN_CHECK_CONFIG(checkpoint_every >= 1, "train: checkpoint_every must be >= 1");
    weights.validate();
  }
};

// Key-value config file; unknown keys are rejected.
void save_train_config(const std::string& path, const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path);

// One mini-batch item: the frames of all rig views.
template <class T>
struct BatchItem {
  std::vector<Frame<T>> frames;
};

// Builds the step graph for a batch and accumulates parameter gradients:
// every view is predicted once, every view is iterated as the splat target
// (P modes), and per-target photometric losses are backpropagated
// sequentially, followed by the shared priors. No optimizer update. When
// `only_targets` is given, photometric terms are restricted to those target
// view indices (decomposition testing).
template <class T>
losses::LossReport accumulate_step_gradients(model::DenoiseModel<T>& m,
                                             const std::vector<BatchItem<T>>& batch,
                                             const dataio::Rig& rig, const TrainConfig& cfg,
                                             double depth_threshold,
                                             const std::vector<int>* only_targets = nullptr);

// Gradient accumulation plus exactly one optimizer step. A non-finite loss
// skips the update (gradients cleared) and flags the report.
template <class T>
losses::LossReport train_step(model::DenoiseModel<T>& m, nn::Adam<T>& opt,
                              const std::vector<BatchItem<T>>& batch, const dataio::Rig& rig,
                              const TrainConfig& cfg, double depth_threshold);

struct TrainResult {
  std::string checkpoint_path;  // final (or initial when iterations == 0)
  std::string loss_log_path;
  std::string model_config_path;
  std::vector<losses::LossReport> history;
};

// Full training loop over a generated dataset; deterministic per seed.
// Writes model.cfg, checkpoint_initial.ckpt, periodic checkpoints, the final
// checkpoint and loss_log.csv under out_dir.
TrainResult train(const dataio::Dataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir);

// Inference: reads a PFM depth map, denoises with the checkpoint (model.cfg
// sits next to it unless given explicitly) and writes the result as PFM. The
// propagated validity mask is written as PGM when mask_out is non-empty.
void denoise_file(const std::string& depth_pfm, const std::string& checkpoint,
                  const std::string& out_pfm, const std::string& mask_out = "",
                  const std::string& model_config = "");

}  // namespace sdn::trainer
