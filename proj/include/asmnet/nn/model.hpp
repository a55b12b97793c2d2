/**
 * @file model.hpp
 * @brief The member network: a small 3D encoder-decoder with skip
 * connections, trained with a soft Dice loss.
 *
 * Layout for depth L and base width f (width(l) = f * 2^l):
 *
 *   encoder l = 0..L-1 : [conv3 -> ReLU] x2, dropout, (skip), maxpool 2
 *   bottleneck         : [conv3 -> ReLU] x2 at width(L), dropout
 *   decoder l = L-1..0 : nearest x2 up-sample, concat(up, skip), [conv3 -> ReLU] x2
 *   head               : conv1 -> C, softmax over classes
 *
 * Encoder and bottleneck convolutions form the descending path, the only
 * part copied between neighbouring members.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/nn/tensor.hpp"
#include "asmnet/tiling.hpp"
#include "asmnet/volume.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace asmnet::nn {

struct ModelHyperparams {
  int in_channels = 2;
  int num_classes = 6;
  int base_filters = 4;
  int depth = 2;
  double dropout = 0.5;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double dice_epsilon = 1e-5;

  void validate() const {
    require(in_channels >= 1, Errc::parameter, "in_channels must be >= 1");
    require(num_classes >= 2, Errc::parameter, "num_classes must be >= 2");
    require(base_filters >= 1, Errc::parameter, "base_filters must be >= 1");
    require(depth >= 1 && depth <= 6, Errc::parameter, "depth must be in [1, 6]");
    require(dropout >= 0.0 && dropout < 1.0, Errc::parameter, "dropout must be in [0, 1)");
  }

  /// Tile edge lengths must survive `depth` halvings.
  bool accepts_tile(Dims d) const {
    const int m = 1 << depth;
    return d.valid() && d.x % m == 0 && d.y % m == 0 && d.z % m == 0;
  }

  int width(int level) const { return base_filters << level; }

  friend bool operator==(const ModelHyperparams &, const ModelHyperparams &) = default;
};

struct ConvLayer {
  std::string name;
  int cin = 0, cout = 0, ksize = 3;
  bool descending = false;
};

inline std::vector<ConvLayer> architecture(const ModelHyperparams &h) {
  h.validate();
  std::vector<ConvLayer> layers;
  const int L = h.depth;
  for (int l = 0; l < L; ++l) {
    const int cin = l == 0 ? h.in_channels : h.width(l - 1);
    layers.push_back({"enc" + std::to_string(l) + ".conv1", cin, h.width(l), 3, true});
    layers.push_back({"enc" + std::to_string(l) + ".conv2", h.width(l), h.width(l), 3, true});
  }
  layers.push_back({"bottleneck.conv1", h.width(L - 1), h.width(L), 3, true});
  layers.push_back({"bottleneck.conv2", h.width(L), h.width(L), 3, true});
  for (int l = L - 1; l >= 0; --l) {
    layers.push_back({"dec" + std::to_string(l) + ".conv1", h.width(l + 1) + h.width(l), h.width(l), 3, false});
    layers.push_back({"dec" + std::to_string(l) + ".conv2", h.width(l), h.width(l), 3, false});
  }
  layers.push_back({"head", h.width(0), h.num_classes, 1, false});
  return layers;
}

template <typename T> struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
  bool descending = false;

  friend bool operator==(const NamedArray &, const NamedArray &) = default;
};

/// Ordered named parameter arrays: "<layer>.weight" (cout, cin, k, k, k) then "<layer>.bias" (cout).
template <typename T> struct BasicWeights {
  ModelHyperparams hyper;
  std::vector<NamedArray<T>> arrays;

  const NamedArray<T> &operator[](std::string_view name) const {
    for (const auto &a : arrays)
      if (a.name == name)
        return a;
    fail(Errc::parameter, "no weight array named " + std::string(name));
  }
  NamedArray<T> &operator[](std::string_view name) {
    return const_cast<NamedArray<T> &>(std::as_const(*this)[name]);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto &a : arrays)
      n += a.values.size();
    return n;
  }

  bool same_layout(const BasicWeights &o) const {
    if (!(hyper == o.hyper) || arrays.size() != o.arrays.size())
      return false;
    for (std::size_t i = 0; i < arrays.size(); ++i)
      if (arrays[i].name != o.arrays[i].name || arrays[i].shape != o.arrays[i].shape ||
          arrays[i].values.size() != o.arrays[i].values.size())
        return false;
    return true;
  }

  bool all_finite() const {
    for (const auto &a : arrays)
      for (T v : a.values)
        if (!std::isfinite(v))
          return false;
    return true;
  }

  friend bool operator==(const BasicWeights &, const BasicWeights &) = default;
};

using ModelWeights = BasicWeights<float>;

template <typename U, typename T> BasicWeights<U> cast_weights(const BasicWeights<T> &w) {
  BasicWeights<U> out;
  out.hyper = w.hyper;
  for (const auto &a : w.arrays)
    out.arrays.push_back({a.name, a.shape, std::vector<U>(a.values.begin(), a.values.end()), a.descending});
  return out;
}

/// All-zero arrays with the layout of `w`.
template <typename U, typename T> BasicWeights<U> zeros_like(const BasicWeights<T> &w) {
  BasicWeights<U> out;
  out.hyper = w.hyper;
  for (const auto &a : w.arrays)
    out.arrays.push_back({a.name, a.shape, std::vector<U>(a.values.size(), U(0)), a.descending});
  return out;
}

/// He-normal kernels (variance 2 / fan_in), zero biases; deterministic for a seed.
inline ModelWeights init_model(const ModelHyperparams &h, std::uint64_t seed) {
  ModelWeights w;
  w.hyper = h;
  std::mt19937_64 rng(seed);
  for (const auto &layer : architecture(h)) {
    const int taps = taps_of(layer.ksize);
    const double sd = std::sqrt(2.0 / double(layer.cin * taps));
    std::normal_distribution<double> normal(0.0, sd);
    NamedArray<float> kernel{layer.name + ".weight", {layer.cout, layer.cin, layer.ksize, layer.ksize, layer.ksize}, {}, layer.descending};
    kernel.values.resize(static_cast<std::size_t>(layer.cout) * layer.cin * taps);
    for (auto &v : kernel.values)
      v = static_cast<float>(normal(rng));
    w.arrays.push_back(std::move(kernel));
    w.arrays.push_back({layer.name + ".bias", {layer.cout}, std::vector<float>(static_cast<std::size_t>(layer.cout), 0.f), layer.descending});
  }
  return w;
}

/// Weights of `dst` with every descending-path array replaced by the one in `src`.
inline ModelWeights copy_descending_path(const ModelWeights &src, const ModelWeights &dst) {
  if (!(src.hyper == dst.hyper) || !src.same_layout(dst))
    fail(Errc::transfer, "descending-path transfer requires identical hyperparameters");
  ModelWeights out = dst;
  for (std::size_t i = 0; i < out.arrays.size(); ++i)
    if (src.arrays[i].descending)
      out.arrays[i].values = src.arrays[i].values;
  return out;
}

enum class Mode { deterministic, train };

template <typename T> struct BlockCache {
  Tensor<T> input, a1, a2, out;
  std::vector<T> mask; ///< inverted-dropout multipliers; empty when dropout was off
};

template <typename T> struct ForwardCache {
  ModelHyperparams hyper;
  Dims tile;
  std::uint64_t fingerprint = 0;
  bool valid = false;
  std::vector<BlockCache<T>> enc, dec; ///< indexed by level
  std::vector<std::vector<std::int32_t>> pool_argmax;
  BlockCache<T> bottleneck;
  Tensor<T> probs;
};

template <typename T> struct ForwardResult {
  std::vector<T> probs; ///< class-major, C x tile voxels (x fastest)
  ForwardCache<T> cache;
};

namespace detail {

template <typename T> std::uint64_t fingerprint(const BasicWeights<T> &w) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto &a : w.arrays) {
    const auto *bytes = reinterpret_cast<const unsigned char *>(a.values.data());
    const std::size_t n = a.values.size() * sizeof(T);
    for (std::size_t i = 0; i < n; ++i)
      h = (h ^ bytes[i]) * 1099511628211ull;
  }
  return h;
}

template <typename T> ConvParams<T> conv_params(const BasicWeights<T> &w, std::size_t layer, const ConvLayer &spec) {
  return {spec.cout, spec.cin, spec.ksize, w.arrays[2 * layer].values, w.arrays[2 * layer + 1].values};
}

template <typename T> Tensor<T> conv_relu(const Tensor<T> &in, const ConvParams<T> &p) {
  Tensor<T> out(p.cout, in.shape.dims);
  kernel::conv_forward(in, p, out);
  kernel::relu_inplace(out);
  return out;
}

template <typename T> void apply_dropout(BlockCache<T> &blk, double rate, Mode mode, std::mt19937_64 *rng) {
  blk.out = blk.a2;
  if (mode != Mode::train || rate <= 0.0)
    return;
  require(rng != nullptr, Errc::parameter, "train mode needs a random generator");
  const T keep_scale = T(1.0 / (1.0 - rate));
  // 24-bit uniform draws: keep when u >= rate.
  const auto threshold = static_cast<std::uint64_t>(std::ceil(rate * double(1u << 24)));
  blk.mask.resize(blk.out.data.size());
  for (std::size_t i = 0; i < blk.mask.size(); ++i)
    blk.mask[i] = ((*rng)() >> 40) >= threshold ? keep_scale : T(0);
  for (std::size_t i = 0; i < blk.mask.size(); ++i)
    blk.out.data[i] *= blk.mask[i];
}

template <typename T>
void run_block(BlockCache<T> &blk, const BasicWeights<T> &w, const std::vector<ConvLayer> &arch, std::size_t first,
               double rate, Mode mode, std::mt19937_64 *rng, bool dropout) {
  blk.a1 = conv_relu(blk.input, conv_params(w, first, arch[first]));
  blk.a2 = conv_relu(blk.a1, conv_params(w, first + 1, arch[first + 1]));
  if (dropout)
    apply_dropout(blk, rate, mode, rng);
  else
    blk.out = blk.a2;
}

/// Back-propagates through [conv -> ReLU] x2 (+ dropout); returns the input gradient when asked.
template <typename T>
Tensor<T> block_backward(const BlockCache<T> &blk, Tensor<T> g, const BasicWeights<T> &w,
                         const std::vector<ConvLayer> &arch, std::size_t first, BasicWeights<T> &grads,
                         bool need_input_grad) {
  if (!blk.mask.empty())
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] *= blk.mask[i];
  kernel::relu_backward(blk.a2, g);
  const auto p2 = conv_params(w, first + 1, arch[first + 1]);
  kernel::conv_backward_params<T>(blk.a1, g, p2, grads.arrays[2 * (first + 1)].values,
                                  grads.arrays[2 * (first + 1) + 1].values);
  Tensor<T> g1(p2.cin, g.shape.dims);
  kernel::conv_backward_input(g, p2, g1);
  kernel::relu_backward(blk.a1, g1);
  const auto p1 = conv_params(w, first, arch[first]);
  kernel::conv_backward_params<T>(blk.input, g1, p1, grads.arrays[2 * first].values,
                                  grads.arrays[2 * first + 1].values);
  if (!need_input_grad)
    return {};
  Tensor<T> g0(p1.cin, g.shape.dims);
  kernel::conv_backward_input(g1, p1, g0);
  return g0;
}

inline Dims level_dims(Dims tile, int level) { return {tile.x >> level, tile.y >> level, tile.z >> level}; }

} // namespace detail

/**
 * Runs the network on one tile. In train mode inverted dropout (scale
 * 1/(1-p)) follows every descending block; deterministic mode skips it.
 */
template <typename T>
ForwardResult<T> forward(const BasicWeights<T> &w, const TileArray &x, Mode mode, std::mt19937_64 *rng = nullptr) {
  const auto &h = w.hyper;
  require(x.channels == h.in_channels, Errc::parameter,
          "input has " + std::to_string(x.channels) + " channels, model expects " + std::to_string(h.in_channels));
  require(h.accepts_tile(x.dims), Errc::parameter,
          "tile " + to_string(x.dims) + " is not divisible by 2^" + std::to_string(h.depth));
  require(x.data.size() == static_cast<std::size_t>(x.channels) * x.dims.count(), Errc::parameter,
          "tile data length does not match its shape");
  const auto arch = architecture(h);
  const int L = h.depth;

  ForwardResult<T> res;
  auto &cache = res.cache;
  cache.hyper = h;
  cache.tile = x.dims;
  cache.fingerprint = detail::fingerprint(w);
  cache.enc.resize(static_cast<std::size_t>(L));
  cache.dec.resize(static_cast<std::size_t>(L));
  cache.pool_argmax.resize(static_cast<std::size_t>(L));

  Tensor<T> cur(x.channels, x.dims);
  for (int c = 0; c < x.channels; ++c)
    for (int z = 0; z < x.dims.z; ++z)
      for (int y = 0; y < x.dims.y; ++y)
        for (int xx = 0; xx < x.dims.x; ++xx)
          cur.at(c, xx, y, z) = static_cast<T>(x.at(c, xx, y, z));

  std::size_t layer = 0;
  for (int l = 0; l < L; ++l, layer += 2) {
    auto &blk = cache.enc[static_cast<std::size_t>(l)];
    blk.input = std::move(cur);
    detail::run_block(blk, w, arch, layer, h.dropout, mode, rng, true);
    cur = Tensor<T>(blk.out.channels, detail::level_dims(x.dims, l + 1));
    kernel::maxpool_forward(blk.out, cur, cache.pool_argmax[static_cast<std::size_t>(l)]);
  }
  cache.bottleneck.input = std::move(cur);
  detail::run_block(cache.bottleneck, w, arch, layer, h.dropout, mode, rng, true);
  layer += 2;

  const Tensor<T> *below = &cache.bottleneck.out;
  for (int l = L - 1; l >= 0; --l, layer += 2) {
    auto &blk = cache.dec[static_cast<std::size_t>(l)];
    const auto &skip = cache.enc[static_cast<std::size_t>(l)].out;
    blk.input = Tensor<T>(below->channels + skip.channels, skip.shape.dims);
    kernel::upsample_forward(*below, blk.input, 0);
    std::copy(skip.data.begin(), skip.data.end(),
              blk.input.data.begin() + static_cast<std::ptrdiff_t>(below->channels) * skip.shape.total);
    detail::run_block(blk, w, arch, layer, 0.0, mode, rng, false);
    below = &blk.out;
  }

  Tensor<T> logits(h.num_classes, x.dims);
  kernel::conv_forward(*below, detail::conv_params(w, layer, arch[layer]), logits);

  // Softmax over classes, accumulated in double.
  const auto C = static_cast<std::size_t>(h.num_classes);
  const std::size_t N = x.dims.count();
  cache.probs = Tensor<T>(h.num_classes, x.dims);
  res.probs.assign(C * N, T(0));
  std::vector<double> e(C);
  std::size_t v = 0;
  for (int z = 0; z < x.dims.z; ++z)
    for (int y = 0; y < x.dims.y; ++y)
      for (int xx = 0; xx < x.dims.x; ++xx, ++v) {
        const auto q = logits.shape.index(xx, y, z);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c)
          mx = std::max(mx, double(logits.channel(static_cast<int>(c))[q]));
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          e[c] = std::exp(double(logits.channel(static_cast<int>(c))[q]) - mx);
          sum += e[c];
        }
        if (!std::isfinite(sum) || !std::isfinite(mx))
          fail(Errc::numeric, "non-finite activation in forward pass");
        for (std::size_t c = 0; c < C; ++c) {
          const T p = static_cast<T>(e[c] / sum);
          cache.probs.channel(static_cast<int>(c))[q] = p;
          res.probs[c * N + v] = p;
        }
      }
  cache.valid = true;
  return res;
}

/// Gradients of the loss with respect to every weight array, given d loss / d probs (class-major).
template <typename T>
BasicWeights<T> backward(const BasicWeights<T> &w, const ForwardCache<T> &cache, std::span<const T> dprobs) {
  require(cache.valid, Errc::usage, "backward needs the cache of a forward pass");
  require(cache.hyper == w.hyper && cache.fingerprint == detail::fingerprint(w), Errc::usage,
          "stale forward cache: weights changed since the forward pass");
  const auto &h = w.hyper;
  const auto C = static_cast<std::size_t>(h.num_classes);
  const Dims tile = cache.tile;
  const std::size_t N = tile.count();
  require(dprobs.size() == C * N, Errc::parameter, "gradient size does not match the cached output");
  const auto arch = architecture(h);
  const int L = h.depth;
  auto grads = zeros_like<T>(w);

  // Softmax Jacobian: dz_c = p_c (dp_c - sum_k p_k dp_k).
  Tensor<T> glogits(h.num_classes, tile);
  std::size_t v = 0;
  for (int z = 0; z < tile.z; ++z)
    for (int y = 0; y < tile.y; ++y)
      for (int x = 0; x < tile.x; ++x, ++v) {
        const auto q = glogits.shape.index(x, y, z);
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          dot += double(cache.probs.channel(static_cast<int>(c))[q]) * double(dprobs[c * N + v]);
        for (std::size_t c = 0; c < C; ++c) {
          const double p = cache.probs.channel(static_cast<int>(c))[q];
          glogits.channel(static_cast<int>(c))[q] = static_cast<T>(p * (double(dprobs[c * N + v]) - dot));
        }
      }

  std::size_t layer = arch.size() - 1;
  const auto head = detail::conv_params(w, layer, arch[layer]);
  const Tensor<T> &head_in = cache.dec[0].out;
  kernel::conv_backward_params<T>(head_in, glogits, head, grads.arrays[2 * layer].values,
                                  grads.arrays[2 * layer + 1].values);
  Tensor<T> g(head.cin, tile);
  kernel::conv_backward_input(glogits, head, g);

  std::vector<Tensor<T>> gskip(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    layer -= 2;
    const auto &blk = cache.dec[static_cast<std::size_t>(l)];
    Tensor<T> gcat = detail::block_backward(blk, std::move(g), w, arch, layer, grads, true);
    const int up_channels = h.width(l + 1);
    auto &gs = gskip[static_cast<std::size_t>(l)];
    gs = Tensor<T>(h.width(l), gcat.shape.dims);
    std::copy(gcat.data.begin() + static_cast<std::ptrdiff_t>(up_channels) * gcat.shape.total, gcat.data.end(),
              gs.data.begin());
    g = Tensor<T>(up_channels, detail::level_dims(tile, l + 1));
    kernel::upsample_backward(gcat, g, 0);
  }

  layer -= 2;
  g = detail::block_backward(cache.bottleneck, std::move(g), w, arch, layer, grads, true);

  for (int l = L - 1; l >= 0; --l) {
    layer -= 2;
    Tensor<T> gout = std::move(gskip[static_cast<std::size_t>(l)]);
    kernel::maxpool_backward(g, cache.pool_argmax[static_cast<std::size_t>(l)], gout);
    g = detail::block_backward(cache.enc[static_cast<std::size_t>(l)], std::move(gout), w, arch, layer, grads, l > 0);
  }
  return grads;
}

struct DiceResult {
  double loss = 0.0;
  std::vector<double> grad; ///< d loss / d probs, same layout as the inputs
};

/**
 * Soft multi-class Dice loss over class-major arrays:
 *   loss = 1 - (1/C) sum_c (2 sum_v p g + eps) / (sum_v p + sum_v g + eps)
 * Targets may be soft (MixUp); sums run in double.
 */
template <typename P, typename G>
DiceResult dice_loss(std::span<const P> probs, std::span<const G> target, int num_classes, double eps = 1e-5) {
  require(probs.size() == target.size(), Errc::parameter, "prediction and target sizes differ");
  require(num_classes >= 1 && probs.size() % static_cast<std::size_t>(num_classes) == 0, Errc::parameter,
          "size is not a multiple of the class count");
  const auto C = static_cast<std::size_t>(num_classes);
  const std::size_t N = probs.size() / C;
  DiceResult r;
  r.grad.resize(probs.size());
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t v = 0; v < N; ++v) {
      const double p = probs[c * N + v], g = target[c * N + v];
      if (!std::isfinite(p) || !std::isfinite(g))
        fail(Errc::numeric, "non-finite value in dice_loss input");
      inter += p * g;
      sp += p;
      sg += g;
    }
    const double num = 2.0 * inter + eps, den = sp + sg + eps;
    total += num / den;
    for (std::size_t v = 0; v < N; ++v) {
      const double g = target[c * N + v];
      r.grad[c * N + v] = -(2.0 * g * den - num) / (den * den) / double(C);
    }
  }
  r.loss = 1.0 - total / double(C);
  return r;
}

/// One-hot class-major encoding of a label tile.
inline std::vector<float> one_hot(const LabelMap &labels) {
  const auto C = static_cast<std::size_t>(labels.num_classes);
  const std::size_t N = labels.dims.count();
  std::vector<float> out(C * N, 0.f);
  for (std::size_t v = 0; v < N; ++v)
    out[labels.data[v] * N + v] = 1.f;
  return out;
}

/// Class-major network output to a voxel-major probability volume.
template <typename T> ProbVolume to_prob_volume(std::span<const T> probs, Dims dims, int num_classes) {
  ProbVolume out(dims, num_classes);
  const std::size_t N = dims.count();
  const auto C = static_cast<std::size_t>(num_classes);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t v = 0; v < N; ++v)
      out.data[v * C + c] = static_cast<float>(probs[c * N + v]);
  return out;
}

/**
 * Test-time dropout: mean of `passes` dropout-active forward passes. With a
 * zero dropout rate this is the deterministic prediction.
 */
inline ProbVolume mc_dropout_predict(const ModelWeights &w, const TileArray &x, int passes, std::uint64_t seed) {
  require(passes >= 1, Errc::parameter, "mc_dropout_predict needs at least one pass");
  const auto C = static_cast<std::size_t>(w.hyper.num_classes);
  std::vector<double> mean(C * x.dims.count(), 0.0);
  std::mt19937_64 rng(seed);
  for (int pass = 0; pass < passes; ++pass) {
    const auto res = forward<float>(w, x, Mode::train, &rng);
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean[i] += res.probs[i];
  }
  for (auto &m : mean)
    m /= passes;
  return to_prob_volume<double>(mean, x.dims, w.hyper.num_classes);
}

} // namespace asmnet::nn
