#include "sdn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "sdn/threading.hpp"

namespace sdn::nn {

namespace {

template <class T>
std::vector<T>* adj_of(const Tensor<T>& p) {
  return p.on_tape() ? &p.node()->adj : nullptr;
}

template <class T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape();
}

template <class T, class F, class DF>
Tensor<T> unary_elementwise(const Tensor<T>& a, F f, DF df) {
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_op<T>(
      {a}, a.shape(), std::move(out), [df](Node<T>& n) {
        auto* pa = adj_of(n.parents[0]);
        if (!pa) return;
        const auto& x = n.parents[0].value();
        const auto& y = n.value;
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          (*pa)[i] += df(x[i], y[i], n.adj[i]);
      });
}

template <class T>
void check_4d(const Tensor<T>& a, const char* who) {
  SDN_CHECK_CONFIG(a.shape().size() == 4, who, ": tensor must be 4-D (NCHW)");
}

}  // namespace

template <class T>
void backward(const Tensor<T>& root) {
  SDN_CHECK_USAGE(root.numel() == 1, "backward: root must be a scalar");
  if (!root.on_tape()) return;

  // Iterative post-order DFS over the on-tape subgraph; the reverse of the
  // resulting order processes every node before its parents.
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> seen;
  struct Item {
    Node<T>* n;
    std::size_t next = 0;
  };
  std::vector<Item> stack;
  stack.push_back({root.node()});
  seen.insert(root.node());
  while (!stack.empty()) {
    Item& top = stack.back();
    if (top.next < top.n->parents.size()) {
      Node<T>* p = top.n->parents[top.next++].node();
      if (p->on_tape && seen.insert(p).second) stack.push_back({p});
    } else {
      topo.push_back(top.n);
      stack.pop_back();
    }
  }

  for (Node<T>* n : topo) n->adj.assign(n->numel(), T(0));
  root.node()->adj[0] = T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
  for (Node<T>* n : topo) {
    if (n->grad.empty()) n->grad.assign(n->numel(), T(0));
    for (std::size_t i = 0; i < n->adj.size(); ++i) n->grad[i] += n->adj[i];
    n->adj.clear();
    n->adj.shrink_to_fit();
  }
}

// ---- elementwise ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  SDN_CHECK_CONFIG(same_shape(a, b), "add: shape mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op<T>({a, b}, a.shape(), std::move(out), [](Node<T>& n) {
    for (int p = 0; p < 2; ++p)
      if (auto* pa = adj_of(n.parents[p]))
        for (std::size_t i = 0; i < n.adj.size(); ++i) (*pa)[i] += n.adj[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  SDN_CHECK_CONFIG(same_shape(a, b), "sub: shape mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op<T>({a, b}, a.shape(), std::move(out), [](Node<T>& n) {
    if (auto* pa = adj_of(n.parents[0]))
      for (std::size_t i = 0; i < n.adj.size(); ++i) (*pa)[i] += n.adj[i];
    if (auto* pb = adj_of(n.parents[1]))
      for (std::size_t i = 0; i < n.adj.size(); ++i) (*pb)[i] -= n.adj[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  SDN_CHECK_CONFIG(same_shape(a, b), "mul: shape mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op<T>({a, b}, a.shape(), std::move(out), [](Node<T>& n) {
    const auto& av = n.parents[0].value();
    const auto& bv = n.parents[1].value();
    if (auto* pa = adj_of(n.parents[0]))
      for (std::size_t i = 0; i < n.adj.size(); ++i) (*pa)[i] += n.adj[i] * bv[i];
    if (auto* pb = adj_of(n.parents[1]))
      for (std::size_t i = 0; i < n.adj.size(); ++i) (*pb)[i] += n.adj[i] * av[i];
  });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  SDN_CHECK_CONFIG(same_shape(a, b), "div: shape mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op<T>({a, b}, a.shape(), std::move(out), [](Node<T>& n) {
    const auto& bv = n.parents[1].value();
    const auto& y = n.value;
    if (auto* pa = adj_of(n.parents[0]))
      for (std::size_t i = 0; i < n.adj.size(); ++i) (*pa)[i] += n.adj[i] / bv[i];
    if (auto* pb = adj_of(n.parents[1]))
      for (std::size_t i = 0; i < n.adj.size(); ++i) (*pb)[i] -= n.adj[i] * y[i] / bv[i];
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary_elementwise(
      a, [s](T x) { return x + s; }, [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary_elementwise(
      a, [s](T x) { return x * s; }, [s](T, T, T g) { return g * s; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary_elementwise(
      a, [](T x) { return std::abs(x); },
      [](T x, T, T g) { return x > T(0) ? g : (x < T(0) ? -g : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return unary_elementwise(
      a, [](T x) { return x * x; }, [](T x, T, T g) { return T(2) * x * g; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary_elementwise(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y, T g) { return g / (T(2) * y); });
}

template <class T>
Tensor<T> rsqrt(const Tensor<T>& a) {
  return unary_elementwise(
      a, [](T x) { return T(1) / std::sqrt(x); },
      [](T, T y, T g) { return g * T(-0.5) * y * y * y; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary_elementwise(
      a, [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <class T>
Tensor<T> elu(const Tensor<T>& a, T alpha) {
  return unary_elementwise(
      a, [alpha](T x) { return x > T(0) ? x : alpha * (std::exp(x) - T(1)); },
      [alpha](T x, T y, T g) { return x > T(0) ? g : g * (y + alpha); });
}

template <class T>
Tensor<T> tukey_rho(const Tensor<T>& a, T c) {
  SDN_CHECK_CONFIG(c > T(0), "tukey_rho: c must be positive");
  const T sat = c * c / T(6);
  return unary_elementwise(
      a,
      [c, sat](T x) {
        if (std::abs(x) >= c) return sat;
        const T t = T(1) - (x / c) * (x / c);
        return sat * (T(1) - t * t * t);
      },
      [c](T x, T, T g) {
        if (std::abs(x) >= c) return T(0);
        const T t = T(1) - (x / c) * (x / c);
        return g * x * t * t;
      });
}

// ---- broadcasting ----

template <class T>
Tensor<T> broadcast_mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_4d(a, "broadcast_mul");
  check_4d(b, "broadcast_mul");
  int od[4];
  for (int i = 0; i < 4; ++i) {
    const int da = a.dim(i), db = b.dim(i);
    SDN_CHECK_CONFIG(da == db || da == 1 || db == 1, "broadcast_mul: incompatible shapes");
    od[i] = std::max(da, db);
  }
  const auto index_of = [](const std::vector<int>& shape, const int* idx) {
    std::size_t lin = 0;
    for (int i = 0; i < 4; ++i) {
      const int ii = shape[std::size_t(i)] == 1 ? 0 : idx[i];
      lin = lin * std::size_t(shape[std::size_t(i)]) + std::size_t(ii);
    }
    return lin;
  };
  std::vector<T> out(std::size_t(od[0]) * od[1] * od[2] * od[3]);
  {
    const auto& av = a.value();
    const auto& bv = b.value();
    std::size_t o = 0;
    int idx[4];
    for (idx[0] = 0; idx[0] < od[0]; ++idx[0])
      for (idx[1] = 0; idx[1] < od[1]; ++idx[1])
        for (idx[2] = 0; idx[2] < od[2]; ++idx[2])
          for (idx[3] = 0; idx[3] < od[3]; ++idx[3])
            out[o++] = av[index_of(a.shape(), idx)] * bv[index_of(b.shape(), idx)];
  }
  std::vector<int> oshape{od[0], od[1], od[2], od[3]};
  return make_op<T>({a, b}, oshape, std::move(out), [index_of, oshape](Node<T>& n) {
    const auto& av = n.parents[0].value();
    const auto& bv = n.parents[1].value();
    auto* pa = adj_of(n.parents[0]);
    auto* pb = adj_of(n.parents[1]);
    const auto& ash = n.parents[0].shape();
    const auto& bsh = n.parents[1].shape();
    std::size_t o = 0;
    int idx[4];
    for (idx[0] = 0; idx[0] < oshape[0]; ++idx[0])
      for (idx[1] = 0; idx[1] < oshape[1]; ++idx[1])
        for (idx[2] = 0; idx[2] < oshape[2]; ++idx[2])
          for (idx[3] = 0; idx[3] < oshape[3]; ++idx[3], ++o) {
            const T g = n.adj[o];
            const std::size_t ia = index_of(ash, idx);
            const std::size_t ib = index_of(bsh, idx);
            if (pa) (*pa)[ia] += g * bv[ib];
            if (pb) (*pb)[ib] += g * av[ia];
          }
  });
}

// ---- reductions and shape ops ----

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.value()) s += v;
  return make_op<T>({a}, {1}, {s}, [](Node<T>& n) {
    if (auto* pa = adj_of(n.parents[0])) {
      const T g = n.adj[0];
      for (auto& v : *pa) v += g;
    }
  });
}

template <class T>
Tensor<T> channel_sum(const Tensor<T>& a) {
  check_4d(a, "channel_sum");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const std::size_t hw = std::size_t(H) * W;
  std::vector<T> out(std::size_t(N) * hw, T(0));
  const auto& av = a.value();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = av.data() + (std::size_t(n) * C + c) * hw;
      T* dst = out.data() + std::size_t(n) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
  return make_op<T>({a}, {N, 1, H, W}, std::move(out), [N, C, hw](Node<T>& n) {
    if (auto* pa = adj_of(n.parents[0])) {
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c) {
          T* dst = pa->data() + (std::size_t(b) * C + c) * hw;
          const T* g = n.adj.data() + std::size_t(b) * hw;
          for (std::size_t i = 0; i < hw; ++i) dst[i] += g[i];
        }
    }
  });
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  check_4d(a, "concat_channels");
  check_4d(b, "concat_channels");
  SDN_CHECK_CONFIG(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                   "concat_channels: N/H/W mismatch");
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  const std::size_t hw = std::size_t(H) * W;
  std::vector<T> out(std::size_t(N) * (Ca + Cb) * hw);
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + std::size_t(n) * (Ca + Cb) * hw,
                a.value().data() + std::size_t(n) * Ca * hw, Ca * hw * sizeof(T));
    std::memcpy(out.data() + (std::size_t(n) * (Ca + Cb) + Ca) * hw,
                b.value().data() + std::size_t(n) * Cb * hw, Cb * hw * sizeof(T));
  }
  return make_op<T>({a, b}, {N, Ca + Cb, H, W}, std::move(out), [N, Ca, Cb, hw](Node<T>& n) {
    auto* pa = adj_of(n.parents[0]);
    auto* pb = adj_of(n.parents[1]);
    for (int b = 0; b < N; ++b) {
      const T* ga = n.adj.data() + std::size_t(b) * (Ca + Cb) * hw;
      const T* gb = ga + std::size_t(Ca) * hw;
      if (pa) {
        T* dst = pa->data() + std::size_t(b) * Ca * hw;
        for (std::size_t i = 0; i < std::size_t(Ca) * hw; ++i) dst[i] += ga[i];
      }
      if (pb) {
        T* dst = pb->data() + std::size_t(b) * Cb * hw;
        for (std::size_t i = 0; i < std::size_t(Cb) * hw; ++i) dst[i] += gb[i];
      }
    }
  });
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, int first, int count) {
  check_4d(a, "slice_channels");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  SDN_CHECK_CONFIG(first >= 0 && count > 0 && first + count <= C, "slice_channels: bad range");
  const std::size_t hw = std::size_t(H) * W;
  std::vector<T> out(std::size_t(N) * count * hw);
  for (int n = 0; n < N; ++n)
    std::memcpy(out.data() + std::size_t(n) * count * hw,
                a.value().data() + (std::size_t(n) * C + first) * hw, count * hw * sizeof(T));
  return make_op<T>({a}, {N, count, H, W}, std::move(out), [N, C, first, count, hw](Node<T>& n) {
    if (auto* pa = adj_of(n.parents[0])) {
      for (int b = 0; b < N; ++b) {
        T* dst = pa->data() + (std::size_t(b) * C + first) * hw;
        const T* g = n.adj.data() + std::size_t(b) * count * hw;
        for (std::size_t i = 0; i < std::size_t(count) * hw; ++i) dst[i] += g[i];
      }
    }
  });
}

template <class T>
Tensor<T> shift2d(const Tensor<T>& a, int dy, int dx) {
  check_4d(a, "shift2d");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  std::vector<T> out(a.numel(), T(0));
  const auto& av = a.value();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= H) continue;
        for (int x = 0; x < W; ++x) {
          const int sx = x - dx;
          if (sx < 0 || sx >= W) continue;
          out[((std::size_t(n) * C + c) * H + y) * W + x] =
              av[((std::size_t(n) * C + c) * H + sy) * W + sx];
        }
      }
  return make_op<T>({a}, a.shape(), std::move(out), [N, C, H, W, dy, dx](Node<T>& n) {
    if (auto* pa = adj_of(n.parents[0])) {
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y) {
            const int sy = y - dy;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < W; ++x) {
              const int sx = x - dx;
              if (sx < 0 || sx >= W) continue;
              (*pa)[((std::size_t(b) * C + c) * H + sy) * W + sx] +=
                  n.adj[((std::size_t(b) * C + c) * H + y) * W + x];
            }
          }
    }
  });
}

namespace {
template <class T>
void box3_kernel(const T* src, T* dst, int H, int W) {
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      T s = T(0);
      for (int j = -1; j <= 1; ++j) {
        const int sy = y + j;
        if (sy < 0 || sy >= H) continue;
        for (int i = -1; i <= 1; ++i) {
          const int sx = x + i;
          if (sx < 0 || sx >= W) continue;
          s += src[sy * W + sx];
        }
      }
      dst[y * W + x] = s;
    }
}
}  // namespace

template <class T>
Tensor<T> box3(const Tensor<T>& a) {
  check_4d(a, "box3");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  std::vector<T> out(a.numel());
  for (int nc = 0; nc < N * C; ++nc)
    box3_kernel(a.value().data() + std::size_t(nc) * H * W, out.data() + std::size_t(nc) * H * W,
                H, W);
  return make_op<T>({a}, a.shape(), std::move(out), [N, C, H, W](Node<T>& n) {
    if (auto* pa = adj_of(n.parents[0])) {
      std::vector<T> tmp(std::size_t(H) * W);
      for (int nc = 0; nc < N * C; ++nc) {
        box3_kernel(n.adj.data() + std::size_t(nc) * H * W, tmp.data(), H, W);
        T* dst = pa->data() + std::size_t(nc) * H * W;
        for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] += tmp[i];
      }
    }
  });
}

template <class T>
Tensor<T> upsample_nn(const Tensor<T>& a, int factor) {
  check_4d(a, "upsample_nn");
  SDN_CHECK_CONFIG(factor >= 1, "upsample_nn: factor must be >= 1");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int OH = H * factor, OW = W * factor;
  std::vector<T> out(std::size_t(N) * C * OH * OW);
  const auto& av = a.value();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = av.data() + std::size_t(nc) * H * W;
    T* dst = out.data() + std::size_t(nc) * OH * OW;
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) dst[y * OW + x] = src[(y / factor) * W + x / factor];
  }
  return make_op<T>({a}, {N, C, OH, OW}, std::move(out), [N, C, H, W, factor](Node<T>& n) {
    if (auto* pa = adj_of(n.parents[0])) {
      const int OH = H * factor, OW = W * factor;
      for (int nc = 0; nc < N * C; ++nc) {
        const T* g = n.adj.data() + std::size_t(nc) * OH * OW;
        T* dst = pa->data() + std::size_t(nc) * H * W;
        for (int y = 0; y < OH; ++y)
          for (int x = 0; x < OW; ++x) dst[(y / factor) * W + x / factor] += g[y * OW + x];
      }
    }
  });
}

// ---- partial convolution ----

template <class T>
PartialConv2d<T> make_partial_conv(int in_ch, int out_ch, int kernel, int stride, Rng& rng) {
  SDN_CHECK_CONFIG(kernel % 2 == 1 && kernel >= 1, "partial conv: kernel must be odd");
  SDN_CHECK_CONFIG(stride == 1 || stride == 2, "partial conv: stride must be 1 or 2");
  std::vector<T> w(std::size_t(out_ch) * in_ch * kernel * kernel);
  xavier_fill(w, std::size_t(in_ch) * kernel * kernel, std::size_t(out_ch) * kernel * kernel, rng);
  PartialConv2d<T> layer;
  layer.weight = Tensor<T>::leaf({out_ch, in_ch, kernel, kernel}, std::move(w), true);
  layer.bias = Tensor<T>::leaf({out_ch}, std::vector<T>(std::size_t(out_ch), T(0)), true);
  layer.kernel = kernel;
  layer.stride = stride;
  layer.pad = kernel / 2;
  return layer;
}

namespace {

struct ConvDims {
  int N, Ci, H, W, Co, k, s, p, OH, OW;
};

// Output-column range for which iw = ow*s + kw - p stays inside [0, W).
inline void ow_range(int kw, int p, int s, int W, int OW, int& lo, int& hi) {
  const int num = p - kw;
  lo = num > 0 ? (num + s - 1) / s : 0;
  const int last = W - 1 - kw + p;
  hi = last < 0 ? 0 : std::min(OW, last / s + 1);
  if (hi < lo) hi = lo;
}

}  // namespace

template <class T>
std::pair<Tensor<T>, Tensor<T>> partial_conv(const Tensor<T>& x, const Tensor<T>& mask,
                                             const PartialConv2d<T>& layer) {
  check_4d(x, "partial_conv");
  check_4d(mask, "partial_conv mask");
  SDN_CHECK_CONFIG(!mask.on_tape(), "partial_conv: mask must not require gradients");
  SDN_CHECK_CONFIG(mask.dim(0) == x.dim(0) && mask.dim(1) == 1 && mask.dim(2) == x.dim(2) &&
                       mask.dim(3) == x.dim(3),
                   "partial_conv: mask shape must be (N,1,H,W) matching x");
  SDN_CHECK_CONFIG(x.dim(1) == layer.in_channels(), "partial_conv: channel mismatch");
  for (T v : mask.value())
    SDN_CHECK_CONFIG(v == T(0) || v == T(1), "partial_conv: mask must be binary");

  ConvDims d;
  d.N = x.dim(0);
  d.Ci = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Co = layer.out_channels();
  d.k = layer.kernel;
  d.s = layer.stride;
  d.p = layer.pad;
  d.OH = (d.H + 2 * d.p - d.k) / d.s + 1;
  d.OW = (d.W + 2 * d.p - d.k) / d.s + 1;
  SDN_CHECK_CONFIG(d.OH > 0 && d.OW > 0, "partial_conv: output would be empty");

  const std::size_t hw = std::size_t(d.H) * d.W;
  const std::size_t ohw = std::size_t(d.OH) * d.OW;

  // Window sums of the mask -> renormalization gamma and the updated mask.
  auto gamma = std::make_shared<std::vector<T>>(std::size_t(d.N) * ohw, T(0));
  std::vector<T> mask_out(std::size_t(d.N) * ohw, T(0));
  {
    const auto& mv = mask.value();
    for (int n = 0; n < d.N; ++n) {
      const T* m = mv.data() + std::size_t(n) * hw;
      T* g = gamma->data() + std::size_t(n) * ohw;
      T* mo = mask_out.data() + std::size_t(n) * ohw;
      for (int oh = 0; oh < d.OH; ++oh)
        for (int ow = 0; ow < d.OW; ++ow) {
          T s = T(0);
          for (int kh = 0; kh < d.k; ++kh) {
            const int ih = oh * d.s + kh - d.p;
            if (ih < 0 || ih >= d.H) continue;
            for (int kw = 0; kw < d.k; ++kw) {
              const int iw = ow * d.s + kw - d.p;
              if (iw < 0 || iw >= d.W) continue;
              s += m[ih * d.W + iw];
            }
          }
          if (s > T(0)) {
            g[oh * d.OW + ow] = T(d.k * d.k) / s;
            mo[oh * d.OW + ow] = T(1);
          }
        }
    }
  }

  // Masked input, kept for the weight gradient.
  auto xm = std::make_shared<std::vector<T>>(x.numel());
  {
    const auto& xv = x.value();
    const auto& mv = mask.value();
    for (int n = 0; n < d.N; ++n)
      for (int c = 0; c < d.Ci; ++c) {
        const T* xs = xv.data() + (std::size_t(n) * d.Ci + c) * hw;
        const T* ms = mv.data() + std::size_t(n) * hw;
        T* dst = xm->data() + (std::size_t(n) * d.Ci + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] = xs[i] * ms[i];
      }
  }

  std::vector<T> y(std::size_t(d.N) * d.Co * ohw);
  {
    const auto& wv = layer.weight.value();
    const auto& bv = layer.bias.value();
    parallel_for(std::int64_t(d.N) * d.Co, [&](std::int64_t idx) {
      const int n = int(idx / d.Co);
      const int co = int(idx % d.Co);
      T* out = y.data() + (std::size_t(n) * d.Co + co) * ohw;
      std::fill(out, out + ohw, T(0));
      for (int ci = 0; ci < d.Ci; ++ci) {
        const T* xs = xm->data() + (std::size_t(n) * d.Ci + ci) * hw;
        for (int kh = 0; kh < d.k; ++kh) {
          const T* wrow = wv.data() + ((std::size_t(co) * d.Ci + ci) * d.k + kh) * d.k;
          for (int oh = 0; oh < d.OH; ++oh) {
            const int ih = oh * d.s + kh - d.p;
            if (ih < 0 || ih >= d.H) continue;
            const T* xrow = xs + std::size_t(ih) * d.W;
            T* orow = out + std::size_t(oh) * d.OW;
            for (int kw = 0; kw < d.k; ++kw) {
              const T w = wrow[kw];
              int lo, hi;
              ow_range(kw, d.p, d.s, d.W, d.OW, lo, hi);
              const int off = kw - d.p;
              if (d.s == 1) {
                const T* xr = xrow + off;
                for (int ow = lo; ow < hi; ++ow) orow[ow] += w * xr[ow];
              } else {
                for (int ow = lo; ow < hi; ++ow) orow[ow] += w * xrow[ow * d.s + off];
              }
            }
          }
        }
      }
      const T* g = gamma->data() + std::size_t(n) * ohw;
      const T b = bv[std::size_t(co)];
      for (std::size_t i = 0; i < ohw; ++i) out[i] = g[i] > T(0) ? out[i] * g[i] + b : T(0);
    });
  }

  Tensor<T> mask_next = Tensor<T>::constant({d.N, 1, d.OH, d.OW}, std::move(mask_out));

  Tensor<T> out = make_op<T>(
      {x, layer.weight, layer.bias}, {d.N, d.Co, d.OH, d.OW}, std::move(y),
      [d, xm, gamma, mask, hw, ohw](Node<T>& node) {
        // dL/d(pre-normalization conv) = g * gamma
        std::vector<T> gpre(node.adj.size());
        for (int n = 0; n < d.N; ++n) {
          const T* g = gamma->data() + std::size_t(n) * ohw;
          for (int co = 0; co < d.Co; ++co) {
            const T* a = node.adj.data() + (std::size_t(n) * d.Co + co) * ohw;
            T* dst = gpre.data() + (std::size_t(n) * d.Co + co) * ohw;
            for (std::size_t i = 0; i < ohw; ++i) dst[i] = a[i] * g[i];
          }
        }

        if (auto* pb = adj_of(node.parents[2])) {
          for (int co = 0; co < d.Co; ++co) {
            T acc = T(0);
            for (int n = 0; n < d.N; ++n) {
              const T* a = node.adj.data() + (std::size_t(n) * d.Co + co) * ohw;
              const T* g = gamma->data() + std::size_t(n) * ohw;
              for (std::size_t i = 0; i < ohw; ++i)
                if (g[i] > T(0)) acc += a[i];
            }
            (*pb)[std::size_t(co)] += acc;
          }
        }

        if (auto* pw = adj_of(node.parents[1])) {
          parallel_for(d.Co, [&](std::int64_t co) {
            for (int ci = 0; ci < d.Ci; ++ci)
              for (int kh = 0; kh < d.k; ++kh)
                for (int kw = 0; kw < d.k; ++kw) {
                  T acc = T(0);
                  int lo, hi;
                  ow_range(kw, d.p, d.s, d.W, d.OW, lo, hi);
                  const int off = kw - d.p;
                  for (int n = 0; n < d.N; ++n) {
                    const T* xs = xm->data() + (std::size_t(n) * d.Ci + ci) * hw;
                    const T* gp = gpre.data() + (std::size_t(n) * d.Co + co) * ohw;
                    for (int oh = 0; oh < d.OH; ++oh) {
                      const int ih = oh * d.s + kh - d.p;
                      if (ih < 0 || ih >= d.H) continue;
                      const T* xrow = xs + std::size_t(ih) * d.W;
                      const T* grow = gp + std::size_t(oh) * d.OW;
                      if (d.s == 1) {
                        const T* xr = xrow + off;
                        for (int ow = lo; ow < hi; ++ow) acc += grow[ow] * xr[ow];
                      } else {
                        for (int ow = lo; ow < hi; ++ow) acc += grow[ow] * xrow[ow * d.s + off];
                      }
                    }
                  }
                  (*pw)[((std::size_t(co) * d.Ci + ci) * d.k + kh) * d.k + kw] += acc;
                }
          });
        }

        if (auto* px = adj_of(node.parents[0])) {
          const auto& wv = node.parents[1].value();
          const auto& mv = mask.value();
          parallel_for(std::int64_t(d.N) * d.Ci, [&](std::int64_t idx) {
            const int n = int(idx / d.Ci);
            const int ci = int(idx % d.Ci);
            std::vector<T> gx(hw, T(0));
            for (int co = 0; co < d.Co; ++co) {
              const T* gp = gpre.data() + (std::size_t(n) * d.Co + co) * ohw;
              for (int kh = 0; kh < d.k; ++kh) {
                const T* wrow = wv.data() + ((std::size_t(co) * d.Ci + ci) * d.k + kh) * d.k;
                for (int oh = 0; oh < d.OH; ++oh) {
                  const int ih = oh * d.s + kh - d.p;
                  if (ih < 0 || ih >= d.H) continue;
                  T* xrow = gx.data() + std::size_t(ih) * d.W;
                  const T* grow = gp + std::size_t(oh) * d.OW;
                  for (int kw = 0; kw < d.k; ++kw) {
                    const T w = wrow[kw];
                    int lo, hi;
                    ow_range(kw, d.p, d.s, d.W, d.OW, lo, hi);
                    const int off = kw - d.p;
                    if (d.s == 1) {
                      T* xr = xrow + off;
                      for (int ow = lo; ow < hi; ++ow) xr[ow] += w * grow[ow];
                    } else {
                      for (int ow = lo; ow < hi; ++ow) xrow[ow * d.s + off] += w * grow[ow];
                    }
                  }
                }
              }
            }
            const T* ms = mv.data() + std::size_t(n) * hw;
            T* dst = px->data() + (std::size_t(n) * d.Ci + ci) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] += gx[i] * ms[i];
          });
        }
      });
  return {out, mask_next};
}

template <class T>
Tensor<T> mask_upsample(const Tensor<T>& mask, int factor) {
  Tensor<T> m = upsample_nn(mask, factor);
  SDN_CHECK_CONFIG(!m.on_tape(), "mask_upsample: mask must be constant");
  return m;
}

template <class T>
Tensor<T> mask_union(const Tensor<T>& a, const Tensor<T>& b) {
  SDN_CHECK_CONFIG(!a.on_tape() && !b.on_tape(), "mask_union: masks must be constant");
  SDN_CHECK_CONFIG(a.shape() == b.shape(), "mask_union: shape mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (a.value()[i] > T(0) || b.value()[i] > T(0)) ? T(1) : T(0);
  return Tensor<T>::constant(a.shape(), std::move(out));
}

// ---- BerHu ----

template <class T>
Tensor<T> berhu_joint(const std::vector<Tensor<T>>& residuals, const std::vector<Tensor<T>>& masks,
                      T fraction, T* border_out, std::int64_t* count_out) {
  SDN_CHECK_CONFIG(!residuals.empty() && residuals.size() == masks.size(),
                   "berhu_joint: need matching residual/mask lists");
  SDN_CHECK_CONFIG(fraction > T(0) && fraction < T(1), "berhu_joint: fraction out of (0,1)");
  std::int64_t count = 0;
  T rmax = T(0);
  std::size_t arg_tensor = 0, arg_elem = 0;
  for (std::size_t t = 0; t < residuals.size(); ++t) {
    SDN_CHECK_CONFIG(residuals[t].shape() == masks[t].shape(), "berhu_joint: mask shape mismatch");
    SDN_CHECK_CONFIG(!masks[t].on_tape(), "berhu_joint: masks must be constant");
    const auto& rv = residuals[t].value();
    const auto& mv = masks[t].value();
    for (std::size_t i = 0; i < rv.size(); ++i) {
      if (!(mv[i] > T(0))) continue;
      ++count;
      const T a = std::abs(rv[i]);
      if (a > rmax) {
        rmax = a;
        arg_tensor = t;
        arg_elem = i;
      }
    }
  }
  const T c = fraction * rmax;
  if (border_out) *border_out = c;
  if (count_out) *count_out = count;

  T sum = T(0);
  T S = T(0);  // sum over quadratic-branch elements of d(elem)/dc
  if (count > 0 && c > T(0)) {
    for (std::size_t t = 0; t < residuals.size(); ++t) {
      const auto& rv = residuals[t].value();
      const auto& mv = masks[t].value();
      for (std::size_t i = 0; i < rv.size(); ++i) {
        if (!(mv[i] > T(0))) continue;
        const T a = std::abs(rv[i]);
        if (a <= c) {
          sum += a;
        } else {
          sum += (rv[i] * rv[i] + c * c) / (T(2) * c);
          S += T(0.5) - rv[i] * rv[i] / (T(2) * c * c);
        }
      }
    }
  }
  const T loss = count > 0 ? sum / T(count) : T(0);

  std::vector<Tensor<T>> parents = residuals;
  return make_op<T>(
      std::move(parents), {1}, {loss},
      [masks, c, count, S, arg_tensor, arg_elem, fraction](Node<T>& n) {
        if (count == 0) return;
        const T g = n.adj[0] / T(count);
        for (std::size_t t = 0; t < n.parents.size(); ++t) {
          auto* pr = adj_of(n.parents[t]);
          if (!pr) continue;
          const auto& rv = n.parents[t].value();
          const auto& mv = masks[t].value();
          for (std::size_t i = 0; i < rv.size(); ++i) {
            if (!(mv[i] > T(0))) continue;
            const T r = rv[i];
            const T a = std::abs(r);
            if (a <= c)
              (*pr)[i] += g * (r > T(0) ? T(1) : (r < T(0) ? T(-1) : T(0)));
            else
              (*pr)[i] += g * r / c;
          }
        }
        // border term: c = fraction * |r_argmax|
        if (c > T(0)) {
          if (auto* pr = adj_of(n.parents[arg_tensor])) {
            const T r = n.parents[arg_tensor].value()[arg_elem];
            const T sgn = r > T(0) ? T(1) : T(-1);
            (*pr)[arg_elem] += g * S * fraction * sgn;
          }
        }
      });
}

// ---- Adam ----

template <class T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig<T> cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <class T>
bool Adam<T>::step() {
  for (const auto& p : params_)
    for (T g : p.grad())
      if (!std::isfinite(double(g))) return false;
  ++t_;
  const T bc1 = T(1) - std::pow(cfg_.beta1, T(t_));
  const T bc2 = T(1) - std::pow(cfg_.beta2, T(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& val = params_[i].value();
    auto& g = params_[i].grad();
    for (std::size_t j = 0; j < val.size(); ++j) {
      m_[i][j] = cfg_.beta1 * m_[i][j] + (T(1) - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (T(1) - cfg_.beta2) * g[j] * g[j];
      const T mhat = m_[i][j] / bc1;
      const T vhat = v_[i][j] / bc2;
      val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  zero_grad();
  return true;
}

template <class T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- checkpoint io ----

namespace {
constexpr char kMagic[] = "SDNCKPT1\n";

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  SDN_CHECK_CONFIG(bool(f), "checkpoint: truncated file");
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedArrayView>& arrays) {
  static_assert(sizeof(float) == 4, "float must be 32-bit");
  std::ofstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "checkpoint: cannot open for writing: ", path);
  f.write(kMagic, sizeof(kMagic) - 1);
  write_u32(f, std::uint32_t(arrays.size()));
  for (const auto& a : arrays) {
    write_u32(f, std::uint32_t(a.name.size()));
    f.write(a.name.data(), std::streamsize(a.name.size()));
    write_u32(f, std::uint32_t(a.shape.size()));
    std::size_t n = 1;
    for (int d : a.shape) {
      write_u32(f, std::uint32_t(d));
      n *= std::size_t(d);
    }
    SDN_CHECK_CONFIG(n == a.data.size(), "checkpoint: shape/data mismatch for ", a.name);
    f.write(reinterpret_cast<const char*>(a.data.data()), std::streamsize(n * 4));
  }
  SDN_CHECK_CONFIG(bool(f), "checkpoint: write failed: ", path);
}

std::vector<NamedArrayView> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SDN_CHECK_CONFIG(bool(f), "checkpoint: cannot open: ", path);
  char magic[sizeof(kMagic) - 1];
  f.read(magic, sizeof(magic));
  SDN_CHECK_CONFIG(bool(f) && std::memcmp(magic, kMagic, sizeof(magic)) == 0,
                   "checkpoint: bad magic in ", path);
  const std::uint32_t count = read_u32(f);
  std::vector<NamedArrayView> arrays(count);
  for (auto& a : arrays) {
    const std::uint32_t name_len = read_u32(f);
    a.name.resize(name_len);
    f.read(a.name.data(), name_len);
    const std::uint32_t ndim = read_u32(f);
    a.shape.resize(ndim);
    std::size_t n = 1;
    for (auto& d : a.shape) {
      d = int(read_u32(f));
      n *= std::size_t(d);
    }
    a.data.resize(n);
    f.read(reinterpret_cast<char*>(a.data.data()), std::streamsize(n * 4));
    SDN_CHECK_CONFIG(bool(f), "checkpoint: truncated payload in ", path);
  }
  return arrays;
}

template <class T>
void xavier_fill(std::vector<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  for (auto& v : w) v = T(rng.uniform(-a, a));
}

// ---- explicit instantiations ----

#define SDN_NN_INSTANTIATE(T)                                                                  \
  template void backward<T>(const Tensor<T>&);                                                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                       \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                       \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                 \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                 \
  template Tensor<T> square<T>(const Tensor<T>&);                                              \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                                \
  template Tensor<T> rsqrt<T>(const Tensor<T>&);                                               \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                 \
  template Tensor<T> elu<T>(const Tensor<T>&, T);                                              \
  template Tensor<T> tukey_rho<T>(const Tensor<T>&, T);                                        \
  template Tensor<T> broadcast_mul<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                             \
  template Tensor<T> channel_sum<T>(const Tensor<T>&);                                         \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int);                            \
  template Tensor<T> shift2d<T>(const Tensor<T>&, int, int);                                   \
  template Tensor<T> box3<T>(const Tensor<T>&);                                                \
  template Tensor<T> upsample_nn<T>(const Tensor<T>&, int);                                    \
  template PartialConv2d<T> make_partial_conv<T>(int, int, int, int, Rng&);                    \
  template std::pair<Tensor<T>, Tensor<T>> partial_conv<T>(const Tensor<T>&, const Tensor<T>&, \
                                                           const PartialConv2d<T>&);           \
  template Tensor<T> mask_upsample<T>(const Tensor<T>&, int);                                  \
  template Tensor<T> mask_union<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> berhu_joint<T>(const std::vector<Tensor<T>>&,                             \
                                    const std::vector<Tensor<T>>&, T, T*, std::int64_t*);      \
  template class Adam<T>;                                                                      \
  template void xavier_fill<T>(std::vector<T>&, std::size_t, std::size_t, Rng&);

SDN_NN_INSTANTIATE(float)
SDN_NN_INSTANTIATE(double)

#undef SDN_NN_INSTANTIATE

}  // namespace sdn::nn
