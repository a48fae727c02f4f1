#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vinet/common.hpp"

namespace vinet {

// Minimal dense-tensor arithmetic with reverse-mode differentiation.
//
// A Graph owns the nodes of one differentiation pass. Ops are Graph
// methods; each records a closure that adds into its parents' gradient
// buffers, so fan-out accumulates additively. A graph is confined to one
// thread from forward through backward; parameters enter as read-only
// external leaves, which makes concurrent per-sample graphs safe.

/// Tensor extents, up to 4 dimensions.
struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int rank = 0;

  static Shape of(int a) { return {{a, 1, 1, 1}, 1}; }
  static Shape of(int a, int b) { return {{a, b, 1, 1}, 2}; }
  static Shape of(int a, int b, int c) { return {{a, b, c, 1}, 3}; }
  static Shape of(int a, int b, int c, int e) { return {{a, b, c, e}, 4}; }

  std::int64_t count() const {
    std::int64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= d[i];
    return n;
  }
  int operator[](int i) const { return d[i]; }
  bool operator==(const Shape& o) const { return rank == o.rank && d == o.d; }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank; ++i) os << (i ? "x" : "") << d[i];
    os << ')';
    return os.str();
  }
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> storage;   // owned values; empty for external leaves
  const T* data = nullptr;  // points at storage or at external memory
  std::vector<T> grad;      // lazily allocated, same count as values
  bool needs_grad = false;
  std::function<void()> backward;

  std::span<const T> values() const {
    return {data, static_cast<size_t>(shape.count())};
  }
  T* ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<size_t>(shape.count()), T(0));
    return grad.data();
  }
};

/// Cheap handle to a graph node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::span<const T> values() const { return n_->values(); }
  const T* data() const { return n_->data; }
  T scalar() const { return n_->data[0]; }
  bool needs_grad() const { return n_->needs_grad; }

  /// Gradient buffer; valid after Graph::backward reached this node.
  std::span<const T> grad() const {
    return {n_->grad.data(), n_->grad.size()};
  }

 private:
  template <typename U>
  friend class Graph;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}
  std::shared_ptr<Node<T>> n_;
};

/// Fixed sparse interpolation table: each output cell takes a normalized
/// weighted sum of source cells. Built once per viewpoint rotation.
struct GatherPlan {
  int neighbors = 0;           // entries per output cell
  int cells = 0;               // output cell count
  std::vector<std::int32_t> index;  // cells * neighbors source cells
  std::vector<double> weight;       // cells * neighbors, rows sum to 1
};

template <typename T>
class Graph {
 public:
  using Mat =
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

  // ---- leaves -----------------------------------------------------------

  /// View over external memory (e.g. model parameters). The memory must
  /// outlive the graph and stay constant through forward and backward.
  Tensor<T> leaf(const Shape& shape, const T* data, bool needs_grad) {
    auto n = make_node(shape);
    n->data = data;
    n->needs_grad = needs_grad;
    return Tensor<T>(n);
  }

  Tensor<T> constant(const Shape& shape, std::vector<T> values) {
    return owned(shape, std::move(values), false);
  }

  Tensor<T> variable(const Shape& shape, std::vector<T> values) {
    return owned(shape, std::move(values), true);
  }

  // ---- elementwise ------------------------------------------------------

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return affine_pair("add", a, b, T(1), T(1));
  }

  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return affine_pair("sub", a, b, T(1), T(-1));
  }

  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch ", a, b);
    auto out = make_like(a.shape(), a.n_->needs_grad || b.n_->needs_grad);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out->storage.data();
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    finish(out, "mul");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *nb = b.n_.get(), *no = out.get();
      no->backward = [na, nb, no] {
        const T* g = no->grad.data();
        const auto cnt = no->shape.count();
        if (na->needs_grad) {
          T* ga = na->ensure_grad();
          const T* pb2 = nb->data;
          for (std::int64_t i = 0; i < cnt; ++i) ga[i] += g[i] * pb2[i];
        }
        if (nb->needs_grad) {
          T* gb = nb->ensure_grad();
          const T* pa2 = na->data;
          for (std::int64_t i = 0; i < cnt; ++i) gb[i] += g[i] * pa2[i];
        }
      };
    }
    return Tensor<T>(out);
  }

  Tensor<T> scale(const Tensor<T>& a, T c) {
    auto out = make_like(a.shape(), a.n_->needs_grad);
    const T* pa = a.data();
    T* po = out->storage.data();
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    finish(out, "scale");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no, c] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        const auto cnt = no->shape.count();
        for (std::int64_t i = 0; i < cnt; ++i) ga[i] += g[i] * c;
      };
    }
    return Tensor<T>(out);
  }

  Tensor<T> relu(const Tensor<T>& a) {
    auto out = make_like(a.shape(), a.n_->needs_grad);
    const T* pa = a.data();
    T* po = out->storage.data();
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
    finish(out, "relu");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        const T* pa2 = na->data;
        const auto cnt = no->shape.count();
        for (std::int64_t i = 0; i < cnt; ++i)
          if (pa2[i] > T(0)) ga[i] += g[i];
      };
    }
    return Tensor<T>(out);
  }

  Tensor<T> sigmoid(const Tensor<T>& a) {
    auto out = make_like(a.shape(), a.n_->needs_grad);
    const T* pa = a.data();
    T* po = out->storage.data();
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) po[i] = T(1) / (T(1) + std::exp(-pa[i]));
    finish(out, "sigmoid");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        const T* y = no->data;
        const auto cnt = no->shape.count();
        for (std::int64_t i = 0; i < cnt; ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
      };
    }
    return Tensor<T>(out);
  }

  Tensor<T> sqrt(const Tensor<T>& a) {
    auto out = make_like(a.shape(), a.n_->needs_grad);
    const T* pa = a.data();
    T* po = out->storage.data();
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::sqrt(pa[i]);
    finish(out, "sqrt");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        const T* y = no->data;
        const auto cnt = no->shape.count();
        for (std::int64_t i = 0; i < cnt; ++i) ga[i] += g[i] / (T(2) * y[i]);
      };
    }
    return Tensor<T>(out);
  }

  /// Elementwise max; on ties the gradient goes to the first operand.
  Tensor<T> emax(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "emax: shape mismatch ", a, b);
    auto out = make_like(a.shape(), a.n_->needs_grad || b.n_->needs_grad);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out->storage.data();
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] >= pb[i] ? pa[i] : pb[i];
    finish(out, "emax");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *nb = b.n_.get(), *no = out.get();
      no->backward = [na, nb, no] {
        const T* g = no->grad.data();
        const T* pa2 = na->data;
        const T* pb2 = nb->data;
        const auto cnt = no->shape.count();
        T* ga = na->needs_grad ? na->ensure_grad() : nullptr;
        T* gb = nb->needs_grad ? nb->ensure_grad() : nullptr;
        for (std::int64_t i = 0; i < cnt; ++i) {
          if (pa2[i] >= pb2[i]) {
            if (ga) ga[i] += g[i];
          } else if (gb) {
            gb[i] += g[i];
          }
        }
      };
    }
    return Tensor<T>(out);
  }

  // ---- reductions -------------------------------------------------------

  Tensor<T> sum(const Tensor<T>& a) {
    auto out = make_like(Shape::of(1), a.n_->needs_grad);
    const T* pa = a.data();
    T acc = T(0);
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
    out->storage[0] = acc;
    finish(out, "sum");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no] {
        T* ga = na->ensure_grad();
        const T g = no->grad[0];
        const auto cnt = na->shape.count();
        for (std::int64_t i = 0; i < cnt; ++i) ga[i] += g;
      };
    }
    return Tensor<T>(out);
  }

  Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.shape().count()));
  }

  /// C x H x W -> C, average over spatial positions.
  Tensor<T> global_avg_pool(const Tensor<T>& a) {
    require(a.shape().rank == 3, "global_avg_pool: need C x H x W, got ", a, a);
    const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    auto out = make_like(Shape::of(C), a.n_->needs_grad);
    const T* pa = a.data();
    const T inv = T(1) / static_cast<T>(H * W);
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int i = 0; i < H * W; ++i) acc += pa[c * H * W + i];
      out->storage[static_cast<size_t>(c)] = acc * inv;
    }
    finish(out, "global_avg_pool");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no, C, H, W, inv] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < H * W; ++i) ga[c * H * W + i] += g[c] * inv;
      };
    }
    return Tensor<T>(out);
  }

  /// Max over one spatial axis of C x H x W: axis 1 pools away H
  /// (giving C x W), axis 2 pools away W (giving C x H). Ties route the
  /// gradient to the lowest index.
  Tensor<T> axis_max_pool(const Tensor<T>& a, int axis) {
    require(a.shape().rank == 3, "axis_max_pool: need C x H x W, got ", a, a);
    if (axis != 1 && axis != 2) {
      throw std::invalid_argument("axis_max_pool: axis must be 1 (H) or 2 (W)");
    }
    const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    const int kept = axis == 1 ? W : H;
    const int pooled = axis == 1 ? H : W;
    auto out = make_like(Shape::of(C, kept), a.n_->needs_grad);
    auto arg = std::make_shared<std::vector<std::int32_t>>(
        static_cast<size_t>(C) * kept);
    const T* pa = a.data();
    for (int c = 0; c < C; ++c) {
      for (int j = 0; j < kept; ++j) {
        T best{};
        std::int32_t best_i = -1;
        for (int i = 0; i < pooled; ++i) {
          const int h = axis == 1 ? i : j;
          const int w = axis == 1 ? j : i;
          const T v = pa[(c * H + h) * W + w];
          if (best_i < 0 || v > best) {  // strict: ties keep lowest index
            best = v;
            best_i = i;
          }
        }
        out->storage[static_cast<size_t>(c) * kept + j] = best;
        (*arg)[static_cast<size_t>(c) * kept + j] = best_i;
      }
    }
    finish(out, "axis_max_pool");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no, arg, axis, C, H, W, kept] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        for (int c = 0; c < C; ++c) {
          for (int j = 0; j < kept; ++j) {
            const int i = (*arg)[static_cast<size_t>(c) * kept + j];
            const int h = axis == 1 ? i : j;
            const int w = axis == 1 ? j : i;
            ga[(c * H + h) * W + w] += g[static_cast<size_t>(c) * kept + j];
          }
        }
      };
    }
    return Tensor<T>(out);
  }

  // ---- shape plumbing ----------------------------------------------------

  Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
    require(shape.count() == a.shape().count(), "reshape: count mismatch ", a, a);
    auto out = make_like(shape, a.n_->needs_grad);
    std::copy_n(a.data(), static_cast<size_t>(shape.count()), out->storage.data());
    finish(out, "reshape");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        const auto cnt = no->shape.count();
        for (std::int64_t i = 0; i < cnt; ++i) ga[i] += g[i];
      };
    }
    return Tensor<T>(out);
  }

  Tensor<T> transpose2d(const Tensor<T>& a) {
    require(a.shape().rank == 2, "transpose2d: need a matrix, got ", a, a);
    const int r = a.shape()[0], c = a.shape()[1];
    auto out = make_like(Shape::of(c, r), a.n_->needs_grad);
    ConstMatMap ma(a.data(), r, c);
    MatMap(out->storage.data(), c, r) = ma.transpose();
    finish(out, "transpose2d");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no, r, c] {
        T* ga = na->ensure_grad();
        MatMap(ga, r, c) += ConstMatMap(no->grad.data(), c, r).transpose();
      };
    }
    return Tensor<T>(out);
  }

  /// Concatenate C_i x H x W inputs along the channel axis.
  Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_channels: no inputs", parts[0], parts[0]);
    const int H = parts[0].shape()[1], W = parts[0].shape()[2];
    int C = 0;
    bool needs = false;
    for (const auto& p : parts) {
      require(p.shape().rank == 3 && p.shape()[1] == H && p.shape()[2] == W,
              "concat_channels: resolution mismatch ", p, parts[0]);
      C += p.shape()[0];
      needs = needs || p.n_->needs_grad;
    }
    auto out = make_like(Shape::of(C, H, W), needs);
    size_t off = 0;
    for (const auto& p : parts) {
      const size_t n = static_cast<size_t>(p.shape().count());
      std::copy_n(p.data(), n, out->storage.data() + off);
      off += n;
    }
    finish(out, "concat_channels");
    if (needs) {
      std::vector<Node<T>*> srcs;
      srcs.reserve(parts.size());
      for (const auto& p : parts) srcs.push_back(p.n_.get());
      Node<T>* no = out.get();
      no->backward = [srcs, no] {
        const T* g = no->grad.data();
        size_t off2 = 0;
        for (const auto& s : srcs) {
          const size_t n = static_cast<size_t>(s->shape.count());
          if (s->needs_grad) {
            T* gs = s->ensure_grad();
            for (size_t i = 0; i < n; ++i) gs[i] += g[off2 + i];
          }
          off2 += n;
        }
      };
    }
    return Tensor<T>(out);
  }

  /// out[i] = in[src[i]]; backward scatter-adds. Also serves padding and
  /// nearest-neighbor upsampling via precomputed index maps.
  Tensor<T> gather(const Tensor<T>& a, const std::vector<std::int32_t>& src,
                   const Shape& out_shape) {
    require(out_shape.count() == static_cast<std::int64_t>(src.size()),
            "gather: index count mismatch ", a, a);
    auto out = make_like(out_shape, a.n_->needs_grad);
    const T* pa = a.data();
    for (size_t i = 0; i < src.size(); ++i) out->storage[i] = pa[src[i]];
    finish(out, "gather");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      auto idx = std::make_shared<std::vector<std::int32_t>>(src);
      no->backward = [na, no, idx] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        for (size_t i = 0; i < idx->size(); ++i) ga[(*idx)[i]] += g[i];
      };
    }
    return Tensor<T>(out);
  }

  /// Per-cell weighted gather over the spatial positions of C x H x W:
  /// out[c, j] = sum_k plan.weight[j,k] * in[c, plan.index[j,k]].
  /// The plan is treated as a constant (no gradient to the weights).
  Tensor<T> weighted_gather(const Tensor<T>& a,
                            const std::shared_ptr<const GatherPlan>& plan) {
    require(a.shape().rank == 3, "weighted_gather: need C x H x W, got ", a, a);
    const int C = a.shape()[0];
    const int cells = a.shape()[1] * a.shape()[2];
    require(plan->cells == cells, "weighted_gather: plan size mismatch ", a, a);
    auto out = make_like(a.shape(), a.n_->needs_grad);
    const T* pa = a.data();
    const int k = plan->neighbors;
    for (int c = 0; c < C; ++c) {
      const T* src = pa + static_cast<size_t>(c) * cells;
      T* dst = out->storage.data() + static_cast<size_t>(c) * cells;
      for (int j = 0; j < cells; ++j) {
        T acc = T(0);
        for (int i = 0; i < k; ++i) {
          acc += static_cast<T>(plan->weight[static_cast<size_t>(j) * k + i]) *
                 src[plan->index[static_cast<size_t>(j) * k + i]];
        }
        dst[j] = acc;
      }
    }
    finish(out, "weighted_gather");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *no = out.get();
      no->backward = [na, no, plan, C, cells, k] {
        T* ga = na->ensure_grad();
        const T* g = no->grad.data();
        for (int c = 0; c < C; ++c) {
          T* gsrc = ga + static_cast<size_t>(c) * cells;
          const T* gdst = g + static_cast<size_t>(c) * cells;
          for (int j = 0; j < cells; ++j) {
            for (int i = 0; i < k; ++i) {
              gsrc[plan->index[static_cast<size_t>(j) * k + i]] +=
                  static_cast<T>(plan->weight[static_cast<size_t>(j) * k + i]) *
                  gdst[j];
            }
          }
        }
      };
    }
    return Tensor<T>(out);
  }

  // ---- linear algebra ----------------------------------------------------

  /// Affine map along the trailing dimension: x is (k) or (n x k),
  /// weight is (m x k), bias is (m).
  Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    require(w.shape().rank == 2, "linear: weight must be a matrix, got ", w, w);
    const int m = w.shape()[0], k = w.shape()[1];
    require(b.shape().rank == 1 && b.shape()[0] == m,
            "linear: bias length mismatch ", b, w);
    const bool vec = x.shape().rank == 1;
    const int n = vec ? 1 : x.shape()[0];
    const int xk = vec ? x.shape()[0] : x.shape()[1];
    require(x.shape().rank <= 2 && xk == k, "linear: input width mismatch ", x, w);

    auto out = make_like(vec ? Shape::of(m) : Shape::of(n, m),
                         x.n_->needs_grad || w.n_->needs_grad || b.n_->needs_grad);
    ConstMatMap mx(x.data(), n, k);
    ConstMatMap mw(w.data(), m, k);
    MatMap mo(out->storage.data(), n, m);
    mo.noalias() = mx * mw.transpose();
    mo.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), m);
    finish(out, "linear");
    if (out->needs_grad) {
      Node<T>*nx = x.n_.get(), *nw = w.n_.get(), *nb = b.n_.get(), *no = out.get();
      no->backward = [nx, nw, nb, no, n, m, k] {
        ConstMatMap g(no->grad.data(), n, m);
        if (nx->needs_grad) {
          MatMap gx(nx->ensure_grad(), n, k);
          gx.noalias() += g * ConstMatMap(nw->data, m, k);
        }
        if (nw->needs_grad) {
          MatMap gw(nw->ensure_grad(), m, k);
          gw.noalias() += g.transpose() * ConstMatMap(nx->data, n, k);
        }
        if (nb->needs_grad) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(nb->ensure_grad(), m);
          gb += g.colwise().sum();
        }
      };
    }
    return Tensor<T>(out);
  }

  /// Plain matrix product (m x k) * (k x n).
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape().rank == 2 && b.shape().rank == 2 &&
                a.shape()[1] == b.shape()[0],
            "matmul: inner dimension mismatch ", a, b);
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    auto out = make_like(Shape::of(m, n), a.n_->needs_grad || b.n_->needs_grad);
    MatMap(out->storage.data(), m, n).noalias() =
        ConstMatMap(a.data(), m, k) * ConstMatMap(b.data(), k, n);
    finish(out, "matmul");
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *nb = b.n_.get(), *no = out.get();
      no->backward = [na, nb, no, m, k, n] {
        ConstMatMap g(no->grad.data(), m, n);
        if (na->needs_grad) {
          MatMap(na->ensure_grad(), m, k).noalias() +=
              g * ConstMatMap(nb->data, k, n).transpose();
        }
        if (nb->needs_grad) {
          MatMap(nb->ensure_grad(), k, n).noalias() +=
              ConstMatMap(na->data, m, k).transpose() * g;
        }
      };
    }
    return Tensor<T>(out);
  }

  /// Valid cross-correlation (no kernel mirroring): input C_in x H x W,
  /// kernel C_out x C_in x K x K (K odd), stride s >= 1.
  Tensor<T> conv2d_valid(const Tensor<T>& x, const Tensor<T>& ker, int stride) {
    require(x.shape().rank == 3 && ker.shape().rank == 4,
            "conv2d_valid: need C x H x W input and 4-D kernel ", x, ker);
    const int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int co = ker.shape()[0], kci = ker.shape()[1], kk = ker.shape()[2];
    require(ker.shape()[3] == kk && kci == ci,
            "conv2d_valid: kernel does not match input channels ", x, ker);
    if (kk % 2 == 0) throw std::invalid_argument("conv2d_valid: kernel size must be odd");
    if (stride < 1) throw std::invalid_argument("conv2d_valid: stride must be >= 1");
    if (kk > h || kk > w) {
      throw std::invalid_argument("conv2d_valid: kernel larger than input");
    }
    const int ho = (h - kk) / stride + 1;
    const int wo = (w - kk) / stride + 1;
    const int patch = ci * kk * kk;

    // im2col: columns are output positions, rows are patch entries.
    // The one-entry memo serves back-to-back convolutions of the same
    // input (the symmetric kernel pair reuses one patch matrix).
    std::shared_ptr<std::vector<T>> col;
    if (col_memo_.node == x.n_.get() && col_memo_.k == kk &&
        col_memo_.stride == stride) {
      col = col_memo_.col;
    } else {
      col = std::make_shared<std::vector<T>>(static_cast<size_t>(patch) * ho * wo);
      im2col(x.data(), ci, h, w, kk, stride, ho, wo, col->data());
      col_memo_ = {x.n_.get(), kk, stride, col};
    }

    auto out = make_like(Shape::of(co, ho, wo),
                         x.n_->needs_grad || ker.n_->needs_grad);
    MatMap(out->storage.data(), co, ho * wo).noalias() =
        ConstMatMap(ker.data(), co, patch) * ConstMatMap(col->data(), patch, ho * wo);
    finish(out, "conv2d_valid");
    if (out->needs_grad) {
      Node<T>*nx = x.n_.get(), *nk = ker.n_.get(), *no = out.get();
      no->backward = [nx, nk, no, col, ci, h, w, co, kk, stride, ho, wo, patch] {
        ConstMatMap g(no->grad.data(), co, ho * wo);
        if (nk->needs_grad) {
          MatMap(nk->ensure_grad(), co, patch).noalias() +=
              g * ConstMatMap(col->data(), patch, ho * wo).transpose();
        }
        if (nx->needs_grad) {
          std::vector<T> dcol(static_cast<size_t>(patch) * ho * wo);
          MatMap(dcol.data(), patch, ho * wo).noalias() =
              ConstMatMap(nk->data, co, patch).transpose() * g;
          col2im_add(dcol.data(), ci, h, w, kk, stride, ho, wo, nx->ensure_grad());
        }
      };
    }
    return Tensor<T>(out);
  }

  /// Per-channel spatial standardization of C x H x W followed by an
  /// affine map: y = (x - mean_c) / sqrt(var_c + 1e-5) * scale_c + shift_c.
  Tensor<T> instance_standardize(const Tensor<T>& x, const Tensor<T>& scale,
                                 const Tensor<T>& shift) {
    require(x.shape().rank == 3, "instance_standardize: need C x H x W ", x, x);
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    require(scale.shape().rank == 1 && scale.shape()[0] == C &&
                shift.shape() == scale.shape(),
            "instance_standardize: scale/shift must have C entries ", scale, x);
    if (H * W < 2) {
      throw std::invalid_argument("instance_standardize: needs H*W >= 2");
    }
    const int n = H * W;
    auto out = make_like(x.shape(), x.n_->needs_grad || scale.n_->needs_grad ||
                                        shift.n_->needs_grad);
    // cache x-hat and the inverse stddev for the backward pass
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(C) * n);
    auto inv_sd = std::make_shared<std::vector<T>>(C);
    const T eps = static_cast<T>(1e-5);
    const T* px = x.data();
    for (int c = 0; c < C; ++c) {
      const T* src = px + static_cast<size_t>(c) * n;
      T m = T(0);
      for (int i = 0; i < n; ++i) m += src[i];
      m /= static_cast<T>(n);
      T v = T(0);
      for (int i = 0; i < n; ++i) v += (src[i] - m) * (src[i] - m);
      v /= static_cast<T>(n);
      const T isd = T(1) / std::sqrt(v + eps);
      (*inv_sd)[static_cast<size_t>(c)] = isd;
      const T g = scale.data()[c], b = shift.data()[c];
      T* xh = xhat->data() + static_cast<size_t>(c) * n;
      T* dst = out->storage.data() + static_cast<size_t>(c) * n;
      for (int i = 0; i < n; ++i) {
        xh[i] = (src[i] - m) * isd;
        dst[i] = xh[i] * g + b;
      }
    }
    finish(out, "instance_standardize");
    if (out->needs_grad) {
      Node<T>*nx = x.n_.get(), *ns = scale.n_.get(), *nh = shift.n_.get(), *no = out.get();
      no->backward = [nx, ns, nh, no, xhat, inv_sd, C, n] {
        const T* g = no->grad.data();
        T* gs = ns->needs_grad ? ns->ensure_grad() : nullptr;
        T* gh = nh->needs_grad ? nh->ensure_grad() : nullptr;
        T* gx = nx->needs_grad ? nx->ensure_grad() : nullptr;
        for (int c = 0; c < C; ++c) {
          const T* gc = g + static_cast<size_t>(c) * n;
          const T* xh = xhat->data() + static_cast<size_t>(c) * n;
          T sum_g = T(0), sum_gx = T(0);
          for (int i = 0; i < n; ++i) {
            sum_g += gc[i];
            sum_gx += gc[i] * xh[i];
          }
          if (gs) gs[c] += sum_gx;
          if (gh) gh[c] += sum_g;
          if (gx) {
            const T k = ns->data[c] * (*inv_sd)[static_cast<size_t>(c)];
            const T mg = sum_g / static_cast<T>(n);
            const T mgx = sum_gx / static_cast<T>(n);
            T* gxc = gx + static_cast<size_t>(c) * n;
            for (int i = 0; i < n; ++i) gxc[i] += k * (gc[i] - mg - xh[i] * mgx);
          }
        }
      };
    }
    return Tensor<T>(out);
  }

  /// Gram-Schmidt decoding of the 6D rotation representation into a
  /// row-major 3x3 matrix whose columns are the orthonormal frame.
  Tensor<T> sixd_to_matrix(const Tensor<T>& x) {
    require(x.shape().count() == 6, "sixd_to_matrix: need 6 values, got ", x, x);
    const T* p = x.data();
    Eigen::Matrix<T, 3, 1> a(p[0], p[1], p[2]), b(p[3], p[4], p[5]);
    const T na = a.norm();
    if (na < T(1e-12)) {
      throw DegenerateInput("sixd_to_matrix: first triple is (numerically) zero");
    }
    Eigen::Matrix<T, 3, 1> b1 = a / na;
    const T d = b1.dot(b);
    Eigen::Matrix<T, 3, 1> u = b - d * b1;
    const T nu = u.norm();
    if (nu < T(1e-12)) {
      throw DegenerateInput("sixd_to_matrix: second triple parallel to the first");
    }
    Eigen::Matrix<T, 3, 1> b2 = u / nu;
    Eigen::Matrix<T, 3, 1> b3 = b1.cross(b2);

    auto out = make_like(Shape::of(3, 3), x.n_->needs_grad);
    for (int r = 0; r < 3; ++r) {
      out->storage[static_cast<size_t>(r) * 3 + 0] = b1[r];
      out->storage[static_cast<size_t>(r) * 3 + 1] = b2[r];
      out->storage[static_cast<size_t>(r) * 3 + 2] = b3[r];
    }
    finish(out, "sixd_to_matrix");
    if (out->needs_grad) {
      Node<T>*nx = x.n_.get(), *no = out.get();
      no->backward = [nx, no, b1, b2, b3, b, d, na, nu] {
        using V = Eigen::Matrix<T, 3, 1>;
        V g1, g2, g3;
        for (int r = 0; r < 3; ++r) {
          g1[r] = no->grad[static_cast<size_t>(r) * 3 + 0];
          g2[r] = no->grad[static_cast<size_t>(r) * 3 + 1];
          g3[r] = no->grad[static_cast<size_t>(r) * 3 + 2];
        }
        // b3 = b1 x b2
        V gb1 = g1 + b2.cross(g3);
        V gb2 = g2 + g3.cross(b1);
        // b2 = u / |u|
        V gu = (gb2 - b2 * b2.dot(gb2)) / nu;
        // u = b - (b1 . b) b1
        V gb = gu - b1 * b1.dot(gu);
        gb1 += -b * b1.dot(gu) - d * gu;
        // b1 = a / |a|
        V ga = (gb1 - b1 * b1.dot(gb1)) / na;
        T* gx = nx->ensure_grad();
        for (int i = 0; i < 3; ++i) {
          gx[i] += ga[i];
          gx[3 + i] += gb[i];
        }
      };
    }
    return Tensor<T>(out);
  }

  /// Mean focal loss over M independent binary scores. `targets` holds
  /// 0/1 labels; probabilities are clamped to [1e-7, 1 - 1e-7] before the
  /// log (the clamp also zeroes the gradient outside that range).
  Tensor<T> focal_loss(const Tensor<T>& y, const std::vector<std::uint8_t>& targets,
                       T alpha, T gamma) {
    require(y.shape().count() == static_cast<std::int64_t>(targets.size()),
            "focal_loss: label length mismatch ", y, y);
    const auto m = y.shape().count();
    const T lo = static_cast<T>(1e-7), hi = T(1) - static_cast<T>(1e-7);
    auto out = make_like(Shape::of(1), y.n_->needs_grad);
    const T* py = y.data();
    T acc = T(0);
    for (std::int64_t i = 0; i < m; ++i) {
      const T yc = std::clamp(py[i], lo, hi);
      const T yt = targets[static_cast<size_t>(i)] ? yc : T(1) - yc;
      acc += -alpha * std::pow(T(1) - yt, gamma) * std::log(yt);
    }
    out->storage[0] = acc / static_cast<T>(m);
    finish(out, "focal_loss");
    if (out->needs_grad) {
      Node<T>*ny = y.n_.get(), *no = out.get();
      auto tg = std::make_shared<std::vector<std::uint8_t>>(targets);
      no->backward = [ny, no, tg, alpha, gamma, lo, hi, m] {
        T* gy = ny->ensure_grad();
        const T g = no->grad[0] / static_cast<T>(m);
        const T* py2 = ny->data;
        for (std::int64_t i = 0; i < m; ++i) {
          if (py2[i] <= lo || py2[i] >= hi) continue;  // clamped: flat
          const T yt = (*tg)[static_cast<size_t>(i)] ? py2[i] : T(1) - py2[i];
          const T one_m = T(1) - yt;
          const T dpow = gamma == T(0) ? T(0)
                                       : gamma * std::pow(one_m, gamma - T(1));
          T d = -alpha * (std::pow(one_m, gamma) / yt - dpow * std::log(yt));
          if (!(*tg)[static_cast<size_t>(i)]) d = -d;  // y_t = 1 - y
          gy[i] += g * d;
        }
      };
    }
    return Tensor<T>(out);
  }

  // ---- driver ------------------------------------------------------------

  /// Reverse-mode accumulation from a scalar loss through every node
  /// reached by the chain rule. Gradients add across fan-out.
  void backward(const Tensor<T>& loss) {
    if (loss.shape().count() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  loss.shape().str());
    }
    loss.n_->ensure_grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* n = it->get();
      if (!n->grad.empty() && n->backward) n->backward();
    }
  }

  size_t node_count() const { return nodes_.size(); }
  void set_check_finite(bool v) { check_finite_ = v; }

 private:
  std::shared_ptr<Node<T>> make_node(const Shape& shape) {
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    nodes_.push_back(n);
    return n;
  }

  std::shared_ptr<Node<T>> make_like(const Shape& shape, bool needs_grad) {
    auto n = make_node(shape);
    n->storage.assign(static_cast<size_t>(shape.count()), T(0));
    n->data = n->storage.data();
    n->needs_grad = needs_grad;
    return n;
  }

  Tensor<T> owned(const Shape& shape, std::vector<T> values, bool needs_grad) {
    if (shape.count() != static_cast<std::int64_t>(values.size())) {
      throw std::invalid_argument("tensor literal does not match its shape " +
                                  shape.str());
    }
    auto n = make_node(shape);
    n->storage = std::move(values);
    n->data = n->storage.data();
    n->needs_grad = needs_grad;
    return Tensor<T>(n);
  }

  void finish(const std::shared_ptr<Node<T>>& n, const char* op) {
    if (!check_finite_) return;
    for (const T v : n->storage) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string(op) + " produced a non-finite value");
      }
    }
  }

  void require(bool ok, const char* msg, const Tensor<T>& a, const Tensor<T>& b) {
    if (!ok) {
      throw std::invalid_argument(std::string(msg) + a.shape().str() + " vs " +
                                  b.shape().str());
    }
  }

  /// out = da * a + db * b with constant coefficients.
  Tensor<T> affine_pair(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                        T da, T db) {
    require(a.shape() == b.shape(), "elementwise op: shape mismatch ", a, b);
    auto out = make_like(a.shape(), a.n_->needs_grad || b.n_->needs_grad);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out->storage.data();
    const auto n = a.shape().count();
    for (std::int64_t i = 0; i < n; ++i) po[i] = da * pa[i] + db * pb[i];
    finish(out, name);
    if (out->needs_grad) {
      Node<T>*na = a.n_.get(), *nb = b.n_.get(), *no = out.get();
      no->backward = [na, nb, no, da, db] {
        const T* g = no->grad.data();
        const auto cnt = no->shape.count();
        if (na->needs_grad) {
          T* ga = na->ensure_grad();
          for (std::int64_t i = 0; i < cnt; ++i) ga[i] += g[i] * da;
        }
        if (nb->needs_grad) {
          T* gb = nb->ensure_grad();
          for (std::int64_t i = 0; i < cnt; ++i) gb[i] += g[i] * db;
        }
      };
    }
    return Tensor<T>(out);
  }

  static void im2col(const T* x, int ci, int h, int w, int k, int stride,
                     int ho, int wo, T* col) {
    for (int c = 0; c < ci; ++c) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          T* row = col + (static_cast<size_t>(c) * k * k + kh * k + kw) *
                             (static_cast<size_t>(ho) * wo);
          for (int oh = 0; oh < ho; ++oh) {
            const T* src = x + (static_cast<size_t>(c) * h + oh * stride + kh) * w +
                           kw;
            T* dst = row + static_cast<size_t>(oh) * wo;
            if (stride == 1) {
              std::copy_n(src, wo, dst);
            } else {
              for (int ow = 0; ow < wo; ++ow) dst[ow] = src[ow * stride];
            }
          }
        }
      }
    }
  }

  static void col2im_add(const T* col, int ci, int h, int w, int k, int stride,
                         int ho, int wo, T* x) {
    for (int c = 0; c < ci; ++c) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const T* row = col + (static_cast<size_t>(c) * k * k + kh * k + kw) *
                                   (static_cast<size_t>(ho) * wo);
          for (int oh = 0; oh < ho; ++oh) {
            T* dst = x + (static_cast<size_t>(c) * h + oh * stride + kh) * w + kw;
            const T* src = row + static_cast<size_t>(oh) * wo;
            for (int ow = 0; ow < wo; ++ow) dst[ow * stride] += src[ow];
          }
        }
      }
    }
  }

  struct ColMemo {
    const Node<T>* node = nullptr;
    int k = 0;
    int stride = 0;
    std::shared_ptr<std::vector<T>> col;
  };

  std::vector<std::shared_ptr<Node<T>>> nodes_;
  ColMemo col_memo_;
  bool check_finite_;
};

}  // namespace vinet
