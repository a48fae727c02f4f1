#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vinet/tensor.hpp"

namespace vinet {

// Boundary-correct padding for equirectangular spherical maps followed by
// the symmetric flip/max convolution.
//
// Padding layout (P = pad width):
//   * the source map sits at the center of the (H+2P) x (W+2P) output;
//   * the P rows above/below reflect across the poles with the azimuth
//     shifted by half a period (crossing a pole lands on the meridian
//     phi + pi);
//   * the P columns left/right wrap cyclically in azimuth, over all
//     H + 2P rows.
// Every padded entry is a copy of some source entry.

/// Source cell (row, col) of padded cell (r, c); all zero-based. The
/// caller guarantees the argument ranges (see validate_pad_args).
inline std::pair<int, int> pad_source_cell(int r, int c, int height, int width,
                                           int pad) {
  int sr;
  int shift;
  if (r < pad) {  // above the north pole: reflect + half turn
    sr = pad - 1 - r;
    shift = width / 2;
  } else if (r < pad + height) {
    sr = r - pad;
    shift = 0;
  } else {  // below the south pole
    sr = 2 * height + pad - 1 - r;
    shift = width / 2;
  }
  int sc = (c - pad) % width;
  if (sc < 0) sc += width;
  sc = (sc + shift) % width;
  return {sr, sc};
}

inline void validate_pad_args(int height, int width, int pad) {
  if (width % 2 != 0) {
    throw std::invalid_argument(
        "spherical padding requires an even azimuth resolution");
  }
  if (pad < 0 || pad >= height || pad > width / 2) {
    throw std::invalid_argument(
        "pad width must satisfy 0 <= P < H and P <= W/2");
  }
}

/// Flat source index (into C x H x W) for every cell of the padded
/// C x (H+2P) x (W+2P) map.
inline std::vector<std::int32_t> pad_index_map(int channels, int height,
                                               int width, int pad) {
  validate_pad_args(height, width, pad);
  const int hp = height + 2 * pad, wp = width + 2 * pad;
  std::vector<std::int32_t> map(static_cast<size_t>(channels) * hp * wp);
  size_t o = 0;
  for (int c = 0; c < channels; ++c) {
    const std::int32_t base = c * height * width;
    for (int r = 0; r < hp; ++r) {
      for (int col = 0; col < wp; ++col) {
        const auto [sr, sc] = pad_source_cell(r, col, height, width, pad);
        map[o++] = base + sr * width + sc;
      }
    }
  }
  return map;
}

/// Differentiable spherical padding; P = 0 returns the input unchanged.
template <typename T>
Tensor<T> pad_spherical(Graph<T>& g, const Tensor<T>& x, int pad) {
  if (x.shape().rank != 3) {
    throw std::invalid_argument("pad_spherical: need a C x H x W map");
  }
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  validate_pad_args(h, w, pad);
  if (pad == 0) return x;
  return g.gather(x, pad_index_map(c, h, w, pad),
                  Shape::of(c, h + 2 * pad, w + 2 * pad));
}

/// Reverse the azimuth (last) axis of a C_out x C_in x K x K kernel.
template <typename T>
Tensor<T> flip_kernel(Graph<T>& g, const Tensor<T>& kernel) {
  if (kernel.shape().rank != 4) {
    throw std::invalid_argument("flip_kernel: need a 4-D kernel");
  }
  const int co = kernel.shape()[0], ci = kernel.shape()[1];
  const int kh = kernel.shape()[2], kw = kernel.shape()[3];
  std::vector<std::int32_t> map(static_cast<size_t>(co) * ci * kh * kw);
  size_t o = 0;
  for (int a = 0; a < co * ci * kh; ++a) {
    for (int j = 0; j < kw; ++j) map[o++] = a * kw + (kw - 1 - j);
  }
  return g.gather(kernel, map, kernel.shape());
}

/// Symmetric spherical convolution: pad with P = (K-1)/2, convolve with
/// the kernel and its horizontal flip, take the elementwise max. Output
/// is C_out x floor(H/s) x floor(W/s); stride 2 requires even H and W.
template <typename T>
Tensor<T> spa_sconv(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kernel,
                    int stride) {
  if (x.shape().rank != 3 || kernel.shape().rank != 4) {
    throw std::invalid_argument("spa_sconv: need C x H x W input and 4-D kernel");
  }
  const int h = x.shape()[1], w = x.shape()[2];
  const int k = kernel.shape()[2];
  if (stride != 1 && stride != 2) {
    throw std::invalid_argument("spa_sconv: stride must be 1 or 2");
  }
  if (stride == 2 && (h % 2 != 0 || w % 2 != 0)) {
    throw std::invalid_argument("spa_sconv: stride 2 needs even H and W");
  }
  const int pad = (k - 1) / 2;
  Tensor<T> padded = pad_spherical(g, x, pad);
  Tensor<T> a = g.conv2d_valid(padded, kernel, stride);
  Tensor<T> b = g.conv2d_valid(padded, flip_kernel(g, kernel), stride);
  return g.emax(a, b);
}

/// Nearest-neighbor 2x upsampling of a C x H x W map (used by the FPN
/// top-down pathway; preserves shift equivariance for even shifts).
template <typename T>
Tensor<T> upsample2x(Graph<T>& g, const Tensor<T>& x) {
  if (x.shape().rank != 3) {
    throw std::invalid_argument("upsample2x: need a C x H x W map");
  }
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<std::int32_t> map(static_cast<size_t>(c) * 4 * h * w);
  size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int r = 0; r < 2 * h; ++r) {
      for (int col = 0; col < 2 * w; ++col) {
        map[o++] = (ch * h + r / 2) * w + col / 2;
      }
    }
  }
  return g.gather(x, map, Shape::of(c, 2 * h, 2 * w));
}

}  // namespace vinet
