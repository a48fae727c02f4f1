#pragma once

// Independent oracles used by the unit and acceptance suites. These
// deliberately re-derive results from first principles (literal equation
// transcriptions, naive loops) and must stay decoupled from the library
// implementations they check.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace oracle {

// Spherical padding, transcribed pass-by-pass with one-based indices:
//   1) center copy          S_pad(h+P, w+P) = S(h, w)
//   2) inclination padding  S_pad(p, w+P)       = S_pad(2P - p + 1, w')
//                           S_pad(H+P+p, w+P)   = S_pad(H+P - p + 1, w')
//        with w' = w + W/2 + P if w <= W/2, else w - W/2 + P
//   3) azimuth padding      S_pad(h, p)         = S_pad(h, W + p)
//                           S_pad(h, W+P+p)     = S_pad(h, P + p)
// for p = 1..P, w = 1..W, and (pass 3) h = 1..H+2P.
inline std::vector<double> pad_spherical(const std::vector<double>& src, int C,
                                         int H, int W, int P) {
  const int HP = H + 2 * P, WP = W + 2 * P;
  std::vector<double> out(static_cast<size_t>(C) * HP * WP, 0.0);
  for (int c = 0; c < C; ++c) {
    // one-based accessors
    auto pad_at = [&](int h1, int w1) -> double& {
      return out[(static_cast<size_t>(c) * HP + (h1 - 1)) * WP + (w1 - 1)];
    };
    auto src_at = [&](int h1, int w1) -> double {
      return src[(static_cast<size_t>(c) * H + (h1 - 1)) * W + (w1 - 1)];
    };
    for (int h = 1; h <= H; ++h)
      for (int w = 1; w <= W; ++w) pad_at(h + P, w + P) = src_at(h, w);
    for (int p = 1; p <= P; ++p) {
      for (int w = 1; w <= W; ++w) {
        const int wp = (w <= W / 2) ? w + W / 2 + P : w - W / 2 + P;
        pad_at(p, w + P) = pad_at(2 * P - p + 1, wp);
        pad_at(H + P + p, w + P) = pad_at(H + P - p + 1, wp);
      }
    }
    for (int p = 1; p <= P; ++p) {
      for (int h = 1; h <= H + 2 * P; ++h) {
        pad_at(h, p) = pad_at(h, W + p);
        pad_at(h, W + P + p) = pad_at(h, P + p);
      }
    }
  }
  return out;
}

// Naive valid cross-correlation, quadruple loop.
inline std::vector<double> conv2d_valid(const std::vector<double>& x, int ci,
                                        int h, int w,
                                        const std::vector<double>& ker, int co,
                                        int k, int stride) {
  const int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(co) * ho * wo, 0.0);
  for (int oc = 0; oc < co; ++oc)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        double acc = 0.0;
        for (int c = 0; c < ci; ++c)
          for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw)
              acc += x[(static_cast<size_t>(c) * h + oh * stride + kh) * w +
                       ow * stride + kw] *
                     ker[((static_cast<size_t>(oc) * ci + c) * k + kh) * k + kw];
        out[(static_cast<size_t>(oc) * ho + oh) * wo + ow] = acc;
      }
  return out;
}

// Independent spherical binning: angles from atan2/acos, then the
// floor-based bin formulas.
inline void bin_of_point(double x, double y, double z, int H, int W, int* h,
                         int* w) {
  const double r = std::sqrt(x * x + y * y + z * z);
  const double theta = std::acos(std::min(1.0, std::max(-1.0, z / r)));
  double phi;
  if (theta < 1e-9 || theta > M_PI - 1e-9) {
    phi = 0.0;
  } else {
    phi = std::atan2(y, x);
    if (phi < 0) phi += 2 * M_PI;
  }
  *h = std::min(static_cast<int>(std::floor(theta / M_PI * H)), H - 1);
  *w = static_cast<int>(std::floor(phi / (2 * M_PI) * W)) % W;
}

// Cyclic shift of the azimuth axis of a C x H x W map by k columns:
// out(c, h, w) = in(c, h, (w - k) mod W).
inline std::vector<double> shift_columns(const std::vector<double>& x, int C,
                                         int H, int W, int k) {
  std::vector<double> out(x.size());
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        int src = (w - k) % W;
        if (src < 0) src += W;
        out[(static_cast<size_t>(c) * H + h) * W + w] =
            x[(static_cast<size_t>(c) * H + h) * W + src];
      }
  return out;
}

// Azimuth reflection out(c, h, w) = in(c, h, W-1-w).
inline std::vector<double> reflect_columns(const std::vector<double>& x, int C,
                                           int H, int W) {
  std::vector<double> out(x.size());
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        out[(static_cast<size_t>(c) * H + h) * W + w] =
            x[(static_cast<size_t>(c) * H + h) * W + (W - 1 - w)];
  return out;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Exhaustive feature-transformation oracle: anchors at the bin centers
// (theta=(h+0.5)/H*pi, phi=(w+0.5)/W*2pi), rotated by r_vp^T; each output
// anchor averages its k nearest rotated anchors with 1/d^2 weights (full
// scan and full sort per cell). A nearest distance under 1e-9 copies that
// anchor's feature verbatim.
inline std::vector<double> transform_features(const std::vector<double>& feat,
                                              int c, int h, int w,
                                              const Eigen::Matrix3d& r_vp,
                                              int k) {
  const int cells = h * w;
  std::vector<Eigen::Vector3d> anchors(static_cast<size_t>(cells));
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const double theta = (r + 0.5) / h * M_PI;
      const double phi = (col + 0.5) / w * 2.0 * M_PI;
      anchors[static_cast<size_t>(r) * w + col] = {
          std::cos(phi) * std::sin(theta), std::sin(phi) * std::sin(theta),
          std::cos(theta)};
    }
  }
  std::vector<Eigen::Vector3d> rotated(anchors.size());
  for (size_t i = 0; i < anchors.size(); ++i)
    rotated[i] = r_vp.transpose() * anchors[i];

  std::vector<double> out(feat.size(), 0.0);
  std::vector<std::pair<double, int>> dist(static_cast<size_t>(cells));
  for (int j = 0; j < cells; ++j) {
    for (int i = 0; i < cells; ++i) {
      dist[static_cast<size_t>(i)] = {
          (anchors[static_cast<size_t>(j)] - rotated[static_cast<size_t>(i)]).norm(),
          i};
    }
    std::sort(dist.begin(), dist.end());
    if (dist[0].first < 1e-9) {
      for (int ch = 0; ch < c; ++ch) {
        out[static_cast<size_t>(ch) * cells + j] =
            feat[static_cast<size_t>(ch) * cells + dist[0].second];
      }
      continue;
    }
    double total = 0.0;
    for (int q = 0; q < k; ++q) {
      total += 1.0 / (dist[static_cast<size_t>(q)].first *
                      dist[static_cast<size_t>(q)].first);
    }
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int q = 0; q < k; ++q) {
        acc += (1.0 / (dist[static_cast<size_t>(q)].first *
                       dist[static_cast<size_t>(q)].first)) *
               feat[static_cast<size_t>(ch) * cells +
                    dist[static_cast<size_t>(q)].second];
      }
      out[static_cast<size_t>(ch) * cells + j] = acc / total;
    }
  }
  return out;
}

}  // namespace oracle
