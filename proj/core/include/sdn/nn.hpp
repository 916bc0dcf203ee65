#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sdn/check.hpp"
#include "sdn/rng.hpp"

namespace sdn::nn {

template <class T>
class Tensor;

// A node of the reverse-mode tape. `grad` persists and accumulates across
// backward() calls; `adj` is scratch for the pass in flight.
template <class T>
struct Node {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> adj;
  bool on_tape = false;
  std::vector<Tensor<T>> parents;
  std::function<void(Node<T>&)> backprop;

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= std::size_t(d);
    return n;
  }
};

// Handle to a tape node. Tensors are NCHW rasters or rank-1 scalars ({1}).
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(std::vector<int> shape, std::vector<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    SDN_CHECK_CONFIG(n->value.size() == n->numel(), "tensor: value size does not match shape");
    n->on_tape = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor constant(std::vector<int> shape, std::vector<T> value) {
    return leaf(std::move(shape), std::move(value), false);
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value.assign(n->numel(), T(0));
    n->on_tape = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return constant({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  Node<T>* node() const { return node_.get(); }
  const std::vector<int>& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->numel(); }
  std::vector<T>& value() const { return node_->value; }
  std::vector<T>& grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->numel(), T(0));
    return node_->grad;
  }
  bool on_tape() const { return node_->on_tape; }
  T item() const {
    SDN_CHECK_USAGE(node_->numel() == 1, "item(): tensor is not scalar");
    return node_->value[0];
  }
  void zero_grad() const { node_->grad.assign(node_->numel(), T(0)); }

  int dim(int i) const { return node_->shape[std::size_t(i)]; }

  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

// Generic op constructor: value precomputed by the caller, backprop scatters
// node.adj into the parents' adj buffers. Constants fold: if no parent is on
// the tape the node is a constant and keeps neither parents nor closure.
template <class T>
Tensor<T> make_op(std::vector<Tensor<T>> parents, std::vector<int> shape, std::vector<T> value,
                  std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  SDN_CHECK_CONFIG(n->value.size() == n->numel(), "make_op: value size does not match shape");
  bool tape = false;
  for (const auto& p : parents) tape = tape || p.on_tape();
  n->on_tape = tape;
  if (tape) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor<T>(std::move(n));
}

// Runs one reverse pass from a scalar root. Every visited node's persistent
// grad is incremented by this pass's adjoint, so repeated calls accumulate.
template <class T>
void backward(const Tensor<T>& root);

// ---- elementwise and shape ops ----

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);  // same shape
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);  // same shape
template <class T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <class T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <class T> Tensor<T> neg(const Tensor<T>& a);
template <class T> Tensor<T> abs(const Tensor<T>& a);
template <class T> Tensor<T> square(const Tensor<T>& a);
template <class T> Tensor<T> sqrt(const Tensor<T>& a);
template <class T> Tensor<T> rsqrt(const Tensor<T>& a);
template <class T> Tensor<T> exp(const Tensor<T>& a);
template <class T> Tensor<T> elu(const Tensor<T>& a, T alpha = T(1));

// Tukey biweight rho: (c^2/6)(1 - (1 - (x/c)^2)^3) inside |x| <= c, constant
// c^2/6 outside (zero gradient beyond the cutoff).
template <class T> Tensor<T> tukey_rho(const Tensor<T>& a, T c);

// NCHW broadcasting multiply: each dimension of b must equal a's or be 1 (and
// vice versa); gradients reduce over the broadcast dimensions.
template <class T> Tensor<T> broadcast_mul(const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> sum_all(const Tensor<T>& a);              // -> {1}
template <class T> Tensor<T> channel_sum(const Tensor<T>& a);          // -> (N,1,H,W)
template <class T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> slice_channels(const Tensor<T>& a, int first, int count);

// Spatial shift by (dy, dx) with zero fill: out(y, x) = in(y - dy, x - dx).
template <class T> Tensor<T> shift2d(const Tensor<T>& a, int dy, int dx);

// 3x3 box sum with zero padding (self-adjoint).
template <class T> Tensor<T> box3(const Tensor<T>& a);

// Nearest-neighbor upsampling by an integer factor.
template <class T> Tensor<T> upsample_nn(const Tensor<T>& a, int factor = 2);

// ---- partial convolution ----

template <class T>
struct PartialConv2d {
  Tensor<T> weight;  // (Co, Ci, k, k)
  Tensor<T> bias;    // (Co)
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_channels() const { return weight.dim(0); }
  int in_channels() const { return weight.dim(1); }
};

// Creates a layer with Xavier-uniform weights and zero bias.
template <class T>
PartialConv2d<T> make_partial_conv(int in_ch, int out_ch, int kernel, int stride, Rng& rng);

// y(p) = W^T (x . mask)|window * (k^2 / sum(mask window)) + b where the
// window has any valid tap, 0 otherwise. The mask is a (N,1,H,W) constant; it
// is broadcast across input channels. Returns the convolved tensor and the
// updated mask (1 iff the window saw a valid tap).
template <class T>
std::pair<Tensor<T>, Tensor<T>> partial_conv(const Tensor<T>& x, const Tensor<T>& mask,
                                             const PartialConv2d<T>& layer);

// Mask helpers (plain, mask tensors are never on the tape).
template <class T> Tensor<T> mask_upsample(const Tensor<T>& mask, int factor = 2);
template <class T> Tensor<T> mask_union(const Tensor<T>& a, const Tensor<T>& b);

// BerHu (inverse Huber) over a set of residual tensors with validity masks.
// The border c = fraction * max |r| is taken over all valid residuals of the
// batch; the value is the mean over valid elements. The gradient includes the
// border's dependence on the max element. Returns the loss scalar; optional
// out-params report the border and the valid count.
template <class T>
Tensor<T> berhu_joint(const std::vector<Tensor<T>>& residuals,
                      const std::vector<Tensor<T>>& masks, T fraction,
                      T* border_out = nullptr, std::int64_t* count_out = nullptr);

// ---- optimizer ----

template <class T>
struct AdamConfig {
  T lr = T(2e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.99);
  T eps = T(1e-8);
};

template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig<T> cfg);

  // One update from the accumulated gradients; clears them on success.
  // Returns false (and changes nothing) if any gradient is non-finite.
  bool step();

  void zero_grad();
  std::int64_t step_count() const { return t_; }
  const AdamConfig<T>& config() const { return cfg_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamConfig<T> cfg_;
  std::int64_t t_ = 0;
};

// ---- checkpoint io ----
// Binary format: magic "SDNCKPT1\n", then u32 array count, then per array:
// u32 name length, name bytes, u32 ndim, u32 dims..., payload of 32-bit
// little-endian IEEE-754 floats.

struct NamedArrayView {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::vector<NamedArrayView>& arrays);
std::vector<NamedArrayView> load_checkpoint(const std::string& path);

// Xavier-uniform fill: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <class T>
void xavier_fill(std::vector<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace sdn::nn
