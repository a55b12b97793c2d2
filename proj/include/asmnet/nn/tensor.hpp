/**
 * @file tensor.hpp
 * @brief Channel-major activations stored on a zero-padded grid, and the
 * dense kernels of the member network (3D convolution, pooling, up-sampling).
 *
 * Each channel holds a (nx+2)(ny+2)(nz+2) block whose one-voxel halo is kept
 * at zero. With that invariant a "same" 3x3x3 convolution becomes 27 shifted
 * multiply-adds over one contiguous range of the flattened block, which the
 * compiler vectorizes well.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/volume.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace asmnet::nn {

struct PaddedShape {
  Dims dims;
  std::ptrdiff_t px = 0, py = 0, pz = 0;
  std::ptrdiff_t plane = 0, total = 0;

  PaddedShape() = default;
  explicit PaddedShape(Dims d) : dims(d), px(d.x + 2), py(d.y + 2), pz(d.z + 2) {
    plane = px * py;
    total = plane * pz;
  }

  std::ptrdiff_t index(int x, int y, int z) const { return (z + 1) * plane + (y + 1) * px + (x + 1); }
  /// Flat range that contains every interior voxel and keeps all 27 taps in bounds.
  std::ptrdiff_t lo() const { return plane + px + 1; }
  std::ptrdiff_t hi() const { return total - lo(); }

  friend bool operator==(const PaddedShape &a, const PaddedShape &b) { return a.dims == b.dims; }
};

template <typename T> struct Tensor {
  int channels = 0;
  PaddedShape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, Dims d) : channels(c), shape(d), data(static_cast<std::size_t>(c) * static_cast<std::size_t>(shape.total), T(0)) {}

  T *channel(int c) { return data.data() + static_cast<std::ptrdiff_t>(c) * shape.total; }
  const T *channel(int c) const { return data.data() + static_cast<std::ptrdiff_t>(c) * shape.total; }
  T &at(int c, int x, int y, int z) { return channel(c)[shape.index(x, y, z)]; }
  const T &at(int c, int x, int y, int z) const { return channel(c)[shape.index(x, y, z)]; }

  void zero_halo() {
    const auto &s = shape;
    for (int c = 0; c < channels; ++c) {
      T *ch = channel(c);
      std::fill(ch, ch + s.plane, T(0));
      std::fill(ch + s.total - s.plane, ch + s.total, T(0));
      for (std::ptrdiff_t z = 1; z < s.pz - 1; ++z) {
        T *pl = ch + z * s.plane;
        std::fill(pl, pl + s.px, T(0));
        std::fill(pl + s.plane - s.px, pl + s.plane, T(0));
        for (std::ptrdiff_t y = 1; y < s.py - 1; ++y) {
          pl[y * s.px] = T(0);
          pl[y * s.px + s.px - 1] = T(0);
        }
      }
    }
  }
};

/// Convolution weights, layout [cout][cin][taps]; taps are 27 (3x3x3, z slowest) or 1.
template <typename T> struct ConvParams {
  int cout = 0, cin = 0, ksize = 3;
  std::span<const T> weight;
  std::span<const T> bias; ///< may be empty
};

inline int taps_of(int ksize) { return ksize * ksize * ksize; }

inline std::vector<std::ptrdiff_t> tap_offsets(const PaddedShape &s, int ksize) {
  std::vector<std::ptrdiff_t> off;
  const int r = ksize / 2;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        off.push_back(dz * s.plane + dy * s.px + dx);
  return off;
}

namespace kernel {

inline constexpr std::ptrdiff_t block = 256;
inline constexpr int lanes = 16;

/**
 * out[co] = bias[co] + sum_ci sum_tap w[co][ci][tap] * in[ci](p + off[tap])
 * over [lo, hi); the halo of `out` is re-zeroed afterwards.
 */
template <typename T> void conv_forward(const Tensor<T> &in, const ConvParams<T> &p, Tensor<T> &out) {
  const auto &s = in.shape;
  const int taps = taps_of(p.ksize);
  const auto off = tap_offsets(s, p.ksize);
  const std::ptrdiff_t lo = p.ksize == 1 ? 0 : s.lo(), hi = p.ksize == 1 ? s.total : s.hi();
  constexpr int co_block = 4;
  alignas(64) T acc[co_block][block];
  for (int co0 = 0; co0 < p.cout; co0 += co_block) {
    const int nco = std::min(co_block, p.cout - co0);
    for (std::ptrdiff_t p0 = lo; p0 < hi; p0 += block) {
      const std::ptrdiff_t n = std::min(block, hi - p0);
      for (int c = 0; c < nco; ++c) {
        const T b = p.bias.empty() ? T(0) : p.bias[static_cast<std::size_t>(co0 + c)];
        std::fill(acc[c], acc[c] + block, b);
      }
      for (int ci = 0; ci < p.cin; ++ci) {
        const T *src_ch = in.channel(ci) + p0;
        for (int t = 0; t < taps; ++t) {
          const T *src = src_ch + off[static_cast<std::size_t>(t)];
          const std::size_t widx = static_cast<std::size_t>(ci) * taps + t;
          const std::size_t wstride = static_cast<std::size_t>(p.cin) * taps;
          if (nco == co_block && n == block) {
            const T w0 = p.weight[(co0 + 0) * wstride + widx], w1 = p.weight[(co0 + 1) * wstride + widx],
                    w2 = p.weight[(co0 + 2) * wstride + widx], w3 = p.weight[(co0 + 3) * wstride + widx];
            for (std::ptrdiff_t b = 0; b < block; ++b) {
              const T v = src[b];
              acc[0][b] += w0 * v;
              acc[1][b] += w1 * v;
              acc[2][b] += w2 * v;
              acc[3][b] += w3 * v;
            }
          } else {
            for (int c = 0; c < nco; ++c) {
              const T w = p.weight[(co0 + c) * wstride + widx];
              for (std::ptrdiff_t b = 0; b < n; ++b)
                acc[c][b] += w * src[b];
            }
          }
        }
      }
      for (int c = 0; c < nco; ++c)
        std::copy(acc[c], acc[c] + n, out.channel(co0 + c) + p0);
    }
  }
  out.zero_halo();
}

/// Input gradient: the same correlation with transposed, mirrored taps.
template <typename T>
void conv_backward_input(const Tensor<T> &gout, const ConvParams<T> &p, Tensor<T> &gin) {
  const int taps = taps_of(p.ksize);
  std::vector<T> wt(p.weight.size());
  for (int co = 0; co < p.cout; ++co)
    for (int ci = 0; ci < p.cin; ++ci)
      for (int t = 0; t < taps; ++t)
        wt[(static_cast<std::size_t>(ci) * p.cout + co) * taps + (taps - 1 - t)] =
            p.weight[(static_cast<std::size_t>(co) * p.cin + ci) * taps + t];
  ConvParams<T> tp{p.cin, p.cout, p.ksize, wt, {}};
  conv_forward(gout, tp, gin);
}

/// dW[co][ci][tap] += sum_p gout[co](p) * in[ci](p + off[tap]); dB[co] += sum_p gout[co](p).
template <typename T>
void conv_backward_params(const Tensor<T> &in, const Tensor<T> &gout, const ConvParams<T> &p, std::span<T> dweight,
                          std::span<T> dbias) {
  const auto &s = in.shape;
  const int taps = taps_of(p.ksize);
  const auto off = tap_offsets(s, p.ksize);
  const std::ptrdiff_t lo = p.ksize == 1 ? 0 : s.lo(), hi = p.ksize == 1 ? s.total : s.hi();
  std::vector<double> dw(dweight.size(), 0.0), db(static_cast<std::size_t>(p.cout), 0.0);
  constexpr int co_block = 4;
  alignas(64) T lane[co_block][lanes];
  for (std::ptrdiff_t p0 = lo; p0 < hi; p0 += block) {
    const std::ptrdiff_t n = std::min(block, hi - p0);
    const std::ptrdiff_t nv = n - n % lanes;
    for (int co = 0; co < p.cout; ++co) {
      const T *g = gout.channel(co) + p0;
      double bsum = 0.0;
      for (std::ptrdiff_t b = 0; b < n; ++b)
        bsum += g[b];
      db[static_cast<std::size_t>(co)] += bsum;
    }
    for (int co0 = 0; co0 < p.cout; co0 += co_block) {
      const int nco = std::min(co_block, p.cout - co0);
      const T *g[co_block];
      for (int c = 0; c < co_block; ++c)
        g[c] = gout.channel(co0 + std::min(c, nco - 1)) + p0;
      for (int ci = 0; ci < p.cin; ++ci) {
        const T *src_ch = in.channel(ci) + p0;
        for (int t = 0; t < taps; ++t) {
          const T *src = src_ch + off[static_cast<std::size_t>(t)];
          for (int c = 0; c < co_block; ++c)
            std::fill(lane[c], lane[c] + lanes, T(0));
          for (std::ptrdiff_t b = 0; b < nv; b += lanes)
            for (int l = 0; l < lanes; ++l) {
              const T v = src[b + l];
              lane[0][l] += g[0][b + l] * v;
              lane[1][l] += g[1][b + l] * v;
              lane[2][l] += g[2][b + l] * v;
              lane[3][l] += g[3][b + l] * v;
            }
          for (int c = 0; c < nco; ++c) {
            T tail = 0;
            for (std::ptrdiff_t b = nv; b < n; ++b)
              tail += g[c][b] * src[b];
            double sum = tail;
            for (int l = 0; l < lanes; ++l)
              sum += lane[c][l];
            dw[(static_cast<std::size_t>(co0 + c) * p.cin + ci) * taps + t] += sum;
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < dw.size(); ++i)
    dweight[i] += static_cast<T>(dw[i]);
  if (!dbias.empty())
    for (std::size_t i = 0; i < db.size(); ++i)
      dbias[i] += static_cast<T>(db[i]);
}

/// 2x2x2 max pooling; `argmax` receives the flat input position chosen for each output element.
template <typename T>
void maxpool_forward(const Tensor<T> &in, Tensor<T> &out, std::vector<std::int32_t> &argmax) {
  const auto &si = in.shape;
  const auto &so = out.shape;
  argmax.assign(static_cast<std::size_t>(out.channels) * static_cast<std::size_t>(so.total), -1);
  for (int c = 0; c < in.channels; ++c) {
    const T *src = in.channel(c);
    T *dst = out.channel(c);
    std::int32_t *am = argmax.data() + static_cast<std::ptrdiff_t>(c) * so.total;
    for (int z = 0; z < so.dims.z; ++z)
      for (int y = 0; y < so.dims.y; ++y)
        for (int x = 0; x < so.dims.x; ++x) {
          std::ptrdiff_t best = si.index(2 * x, 2 * y, 2 * z);
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const std::ptrdiff_t q = si.index(2 * x + dx, 2 * y + dy, 2 * z + dz);
                if (src[q] > src[best])
                  best = q;
              }
          const auto o = so.index(x, y, z);
          dst[o] = src[best];
          am[o] = static_cast<std::int32_t>(best);
        }
  }
}

template <typename T>
void maxpool_backward(const Tensor<T> &gout, const std::vector<std::int32_t> &argmax, Tensor<T> &gin) {
  const auto &so = gout.shape;
  for (int c = 0; c < gout.channels; ++c) {
    const T *g = gout.channel(c);
    T *dst = gin.channel(c);
    const std::int32_t *am = argmax.data() + static_cast<std::ptrdiff_t>(c) * so.total;
    for (int z = 0; z < so.dims.z; ++z)
      for (int y = 0; y < so.dims.y; ++y)
        for (int x = 0; x < so.dims.x; ++x) {
          const auto o = so.index(x, y, z);
          dst[am[o]] += g[o];
        }
  }
}

/// Nearest-neighbour x2 up-sampling of `in` into channels [c0, c0 + in.channels) of `out`.
template <typename T> void upsample_forward(const Tensor<T> &in, Tensor<T> &out, int c0 = 0) {
  const auto &so = out.shape;
  const auto &si = in.shape;
  for (int c = 0; c < in.channels; ++c) {
    const T *src = in.channel(c);
    T *dst = out.channel(c0 + c);
    for (int z = 0; z < so.dims.z; ++z)
      for (int y = 0; y < so.dims.y; ++y) {
        T *row = dst + so.index(0, y, z);
        const T *srow = src + si.index(0, y / 2, z / 2);
        for (int x = 0; x < so.dims.x; ++x)
          row[x] = srow[x / 2];
      }
  }
}

/// Adjoint of upsample_forward: sums each 2x2x2 block of channels [c0, ...) of `gout`.
template <typename T> void upsample_backward(const Tensor<T> &gout, Tensor<T> &gin, int c0 = 0) {
  const auto &so = gout.shape;
  const auto &si = gin.shape;
  for (int c = 0; c < gin.channels; ++c) {
    const T *g = gout.channel(c0 + c);
    T *dst = gin.channel(c);
    for (int z = 0; z < so.dims.z; ++z)
      for (int y = 0; y < so.dims.y; ++y) {
        const T *row = g + so.index(0, y, z);
        T *drow = dst + si.index(0, y / 2, z / 2);
        for (int x = 0; x < so.dims.x; ++x)
          drow[x / 2] += row[x];
      }
  }
}

template <typename T> void relu_inplace(Tensor<T> &t) {
  for (auto &v : t.data)
    v = v > T(0) ? v : T(0);
}

/// g *= (y > 0)
template <typename T> void relu_backward(const Tensor<T> &y, Tensor<T> &g) {
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (!(y.data[i] > T(0)))
      g.data[i] = T(0);
}

} // namespace kernel
} // namespace asmnet::nn
