#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "vinet/config.hpp"
#include "vinet/geometry.hpp"
#include "vinet/io.hpp"
#include "vinet/rng.hpp"
#include "vinet/spa_sconv.hpp"
#include "vinet/sphermap.hpp"
#include "vinet/tensor.hpp"

namespace vinet {

// VI-Net assembly: multi-stream spherical FPN encoder, V-Branch viewpoint
// classifier, feature transformation under the predicted viewpoint, and
// the I-Branch rotation regressor. All learned operators run on the
// Graph<T> substrate, so every forward pass is differentiable end to end
// (the argmax-decoded viewpoint rotation enters as a constant).

struct StreamSpec {
  std::string name;
  int channels = 1;
};

struct FpnConfig {
  std::array<int, 4> stage_widths{16, 32, 64, 128};
  int fpn_channels = 64;   // C, channels of the output feature map S
  int vp_channels = 128;   // C_vp, V-branch lift width
  int input_height = 64;   // H0; the FPN output S is at (H0/2, W0/2)
  int input_width = 64;    // W0
  int knn = 3;             // interpolation neighbors in the feature transform
  int ib_blocks = 3;       // stride-2 blocks in the I-branch
  bool direct_head = false;  // ablation: flatten S and regress R directly
  std::vector<StreamSpec> streams{{"radial", 1}, {"color", 3}};

  /// Desk-scale profile (half the paper widths for C and C_vp).
  static FpnConfig tiny();
  /// Paper-scale profile: ResNet18 widths, C=128, C_vp=256, 64x64 input.
  static FpnConfig paper();
  /// Minimal profile for end-to-end finite-difference checks.
  static FpnConfig micro();
  static FpnConfig profile(const std::string& name);

  int out_height() const { return input_height / 2; }
  int out_width() const { return input_width / 2; }

  void validate() const;
  KeyValues to_keyvalues() const;
  static FpnConfig from_keyvalues(const KeyValues& kv);
  /// Apply profile/overrides found in kv on top of this config.
  void apply_overrides(const KeyValues& kv);
};

enum class ParamInit { kFanInUniform, kOnes, kZeros, kSixdIdentity };

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::kZeros;
  std::vector<T> value;

  std::int64_t count() const { return shape.count(); }
};

/// Owns parameters with stable addresses and unique names, in creation
/// order (the order fixes both initialization draws and checkpoint layout).
template <typename T>
class ParamSet {
 public:
  Parameter<T>* add(const std::string& name, const Shape& shape, ParamInit init) {
    for (const auto* p : order_) {
      if (p->name == name) {
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
      }
    }
    store_.push_back(Parameter<T>{
        name, shape, init,
        std::vector<T>(static_cast<size_t>(shape.count()), T(0))});
    order_.push_back(&store_.back());
    return &store_.back();
  }

  const std::vector<Parameter<T>*>& all() const { return order_; }

  Parameter<T>* find(const std::string& name) {
    for (auto* p : order_) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto* p : order_) n += p->count();
    return n;
  }

  /// Fan-in-scaled uniform draws for kernels/weights, ones for norm
  /// scales, zeros for biases/shifts; draws happen in creation order.
  void initialize(RngStream& rng) {
    for (auto* p : order_) {
      switch (p->init) {
        case ParamInit::kZeros:
          std::fill(p->value.begin(), p->value.end(), T(0));
          break;
        case ParamInit::kOnes:
          std::fill(p->value.begin(), p->value.end(), T(1));
          break;
        case ParamInit::kSixdIdentity: {
          // identity rotation in the 6D encoding; keeps the decoded
          // rotation well-defined whatever the incoming features are
          const T id[6] = {T(1), T(0), T(0), T(0), T(1), T(0)};
          for (size_t i = 0; i < p->value.size(); ++i) p->value[i] = id[i % 6];
          break;
        }
        case ParamInit::kFanInUniform: {
          std::int64_t fan_in = 1;
          for (int i = 1; i < p->shape.rank; ++i) fan_in *= p->shape[i];
          const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
          for (auto& v : p->value)
            v = static_cast<T>(rng.uniform(-bound, bound));
          break;
        }
      }
    }
  }

 private:
  std::deque<Parameter<T>> store_;
  std::vector<Parameter<T>*> order_;
};

/// Per-forward-pass context: binds parameters to graph leaves exactly once
/// so that fan-out within the pass accumulates gradients correctly.
template <typename T>
struct FwdCtx {
  Graph<T>& g;
  bool want_grads = true;
  std::unordered_map<const Parameter<T>*, Tensor<T>> bound;

  explicit FwdCtx(Graph<T>& graph, bool grads = true)
      : g(graph), want_grads(grads) {}

  Tensor<T> use(const Parameter<T>* p) {
    auto it = bound.find(p);
    if (it != bound.end()) return it->second;
    Tensor<T> t = g.leaf(p->shape, p->value.data(), want_grads);
    bound.emplace(p, t);
    return t;
  }

  /// Per-sample gradient of a parameter after backward (empty span if the
  /// parameter was not reached).
  std::span<const T> grad_of(const Parameter<T>* p) const {
    auto it = bound.find(p);
    if (it == bound.end()) return {};
    return it->second.grad();
  }
};

// ---- layers ---------------------------------------------------------------

/// spa_sconv, optionally followed by per-channel standardization and relu.
template <typename T>
struct SpaConvUnit {
  Parameter<T>* kernel = nullptr;
  Parameter<T>* scale = nullptr;  // normalization present iff non-null
  Parameter<T>* shift = nullptr;
  int stride = 1;
  bool relu = false;

  void create(ParamSet<T>& ps, const std::string& name, int c_in, int c_out,
              int k, int stride_, bool norm, bool relu_) {
    kernel = ps.add(name + ".kernel", Shape::of(c_out, c_in, k, k),
                    ParamInit::kFanInUniform);
    if (norm) {
      scale = ps.add(name + ".scale", Shape::of(c_out), ParamInit::kOnes);
      shift = ps.add(name + ".shift", Shape::of(c_out), ParamInit::kZeros);
    }
    stride = stride_;
    relu = relu_;
  }

  Tensor<T> forward(FwdCtx<T>& ctx, const Tensor<T>& x) const {
    Tensor<T> y = spa_sconv(ctx.g, x, ctx.use(kernel), stride);
    if (scale) y = ctx.g.instance_standardize(y, ctx.use(scale), ctx.use(shift));
    if (relu) y = ctx.g.relu(y);
    return y;
  }
};

template <typename T>
struct ResidualBlock {
  SpaConvUnit<T> conv1, conv2, skip;
  bool has_skip = false;

  void create(ParamSet<T>& ps, const std::string& name, int c_in, int c_out,
              int stride) {
    conv1.create(ps, name + ".conv1", c_in, c_out, 3, stride, true, true);
    conv2.create(ps, name + ".conv2", c_out, c_out, 3, 1, true, false);
    has_skip = (stride != 1 || c_in != c_out);
    if (has_skip) {
      skip.create(ps, name + ".skip", c_in, c_out, 1, stride, true, false);
    }
  }

  Tensor<T> forward(FwdCtx<T>& ctx, const Tensor<T>& x) const {
    Tensor<T> main = conv2.forward(ctx, conv1.forward(ctx, x));
    Tensor<T> res = has_skip ? skip.forward(ctx, x) : x;
    return ctx.g.relu(ctx.g.add(main, res));
  }
};

/// ResNet18-shaped spherical encoder: stem at full resolution, four
/// stages of two residual blocks, stride-2 between stages.
template <typename T>
struct StreamEncoder {
  SpaConvUnit<T> stem;
  std::array<std::array<ResidualBlock<T>, 2>, 4> stages;

  void create(ParamSet<T>& ps, const std::string& name, int c0,
              const std::array<int, 4>& widths) {
    stem.create(ps, name + ".stem", c0, widths[0], 3, 1, true, true);
    int c_in = widths[0];
    for (int s = 0; s < 4; ++s) {
      const int stride = s == 0 ? 1 : 2;
      stages[s][0].create(ps, name + ".stage" + std::to_string(s + 1) + ".block0",
                          c_in, widths[s], stride);
      stages[s][1].create(ps, name + ".stage" + std::to_string(s + 1) + ".block1",
                          widths[s], widths[s], 1);
      c_in = widths[s];
    }
  }

  std::array<Tensor<T>, 4> forward(FwdCtx<T>& ctx, const Tensor<T>& x) const {
    std::array<Tensor<T>, 4> out;
    Tensor<T> cur = stem.forward(ctx, x);
    for (int s = 0; s < 4; ++s) {
      cur = stages[s][0].forward(ctx, cur);
      cur = stages[s][1].forward(ctx, cur);
      out[s] = cur;
    }
    return out;
  }
};

/// Two linear layers applied per position / per bin.
template <typename T>
struct Mlp {
  Parameter<T>*w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;

  void create(ParamSet<T>& ps, const std::string& name, int in, int hidden,
              int out, ParamInit out_bias_init = ParamInit::kZeros) {
    w1 = ps.add(name + ".fc1.weight", Shape::of(hidden, in),
                ParamInit::kFanInUniform);
    b1 = ps.add(name + ".fc1.bias", Shape::of(hidden), ParamInit::kZeros);
    w2 = ps.add(name + ".fc2.weight", Shape::of(out, hidden),
                ParamInit::kFanInUniform);
    b2 = ps.add(name + ".fc2.bias", Shape::of(out), out_bias_init);
  }

  /// x: (n x in) or (in); relu between the layers.
  Tensor<T> forward(FwdCtx<T>& ctx, const Tensor<T>& x) const {
    Tensor<T> h = ctx.g.relu(ctx.g.linear(x, ctx.use(w1), ctx.use(b1)));
    return ctx.g.linear(h, ctx.use(w2), ctx.use(b2));
  }
};

// C x H x W -> (H*W) x C view for per-position MLPs, and back.
template <typename T>
Tensor<T> map_to_rows(Graph<T>& g, const Tensor<T>& x) {
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  return g.transpose2d(g.reshape(x, Shape::of(c, h * w)));
}

template <typename T>
Tensor<T> rows_to_map(Graph<T>& g, const Tensor<T>& rows, int h, int w) {
  const int c = rows.shape()[1];
  return g.reshape(g.transpose2d(rows), Shape::of(c, h, w));
}

// ---- heads ----------------------------------------------------------------

template <typename T>
struct VBranchOut {
  Tensor<T> y_phi;    // W sigmoid scores
  Tensor<T> y_theta;  // H sigmoid scores
  int w_max = 0, h_max = 0;
  ViewpointAngles angles;
  Rotation r_vp;
};

/// Decoupled binary classification of the zenith direction: a two-layer
/// per-position MLP lifts S to C_vp channels; max-pooling over
/// inclination (azimuth) feeds a per-bin MLP + sigmoid for the azimuth
/// (inclination) scores.
template <typename T>
struct VBranch {
  Mlp<T> lift;
  Mlp<T> phi_head, theta_head;

  void create(ParamSet<T>& ps, int c, int c_vp) {
    lift.create(ps, "vbranch.lift", c, c_vp, c_vp);
    phi_head.create(ps, "vbranch.phi", c_vp, c_vp, 1);
    theta_head.create(ps, "vbranch.theta", c_vp, c_vp, 1);
  }

  VBranchOut<T> forward(FwdCtx<T>& ctx, const Tensor<T>& feature) const {
    Graph<T>& g = ctx.g;
    const int h = feature.shape()[1], w = feature.shape()[2];
    Tensor<T> lifted = g.relu(lift.forward(ctx, map_to_rows(g, feature)));
    Tensor<T> s_vp = rows_to_map(g, lifted, h, w);  // C_vp x H x W

    // azimuth: pool away inclination -> C_vp x W -> per-bin scores
    Tensor<T> f_phi = g.transpose2d(g.axis_max_pool(s_vp, 1));   // W x C_vp
    Tensor<T> y_phi = g.sigmoid(g.reshape(phi_head.forward(ctx, f_phi), Shape::of(w)));
    // inclination: pool away azimuth
    Tensor<T> f_theta = g.transpose2d(g.axis_max_pool(s_vp, 2));  // H x C_vp
    Tensor<T> y_theta =
        g.sigmoid(g.reshape(theta_head.forward(ctx, f_theta), Shape::of(h)));

    VBranchOut<T> out;
    out.y_phi = y_phi;
    out.y_theta = y_theta;
    out.w_max = argmax_lowest(y_phi.values());
    out.h_max = argmax_lowest(y_theta.values());
    out.angles = {decode_azimuth(out.w_max, w), decode_inclination(out.h_max, h)};
    out.r_vp = viewpoint_rotation(out.angles);
    return out;
  }

  static int argmax_lowest(std::span<const T> v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
      if (v[i] > v[best]) best = static_cast<int>(i);  // ties keep lowest
    }
    return best;
  }
};

/// Unit directions at the centers of all H x W spherical bins, in
/// (h, w) row-major order.
std::vector<Eigen::Vector3d> anchor_grid(int height, int width);

/// Interpolation plan realizing the feature transformation: anchors are
/// rotated by r_vp^T and each canonical anchor takes the inverse-square-
/// distance weighted average of its k nearest rotated anchors. A nearest
/// distance below 1e-9 short-circuits to a verbatim copy, which makes the
/// identity rotation an exact identity map.
std::shared_ptr<const GatherPlan> make_transform_plan(const Rotation& r_vp,
                                                      int height, int width,
                                                      int k);

/// Spherical feature map resampling under a viewpoint rotation (the
/// rotation is a constant; gradients flow through the fixed weights).
template <typename T>
Tensor<T> transform_features(Graph<T>& g, const Tensor<T>& feature,
                             const Rotation& r_vp, int k) {
  const int h = feature.shape()[1], w = feature.shape()[2];
  return g.weighted_gather(feature, make_transform_plan(r_vp, h, w, k));
}

/// In-plane head: stride-2 spherical conv blocks shrink S_ip, the result
/// is flattened and a two-layer MLP regresses the 6D rotation encoding.
template <typename T>
struct IBranch {
  std::vector<SpaConvUnit<T>> blocks;
  Mlp<T> head;
  int flat_size = 0;

  void create(ParamSet<T>& ps, int c, int height, int width, int n_blocks) {
    int h = height, w = width;
    blocks.resize(static_cast<size_t>(n_blocks));
    for (int i = 0; i < n_blocks; ++i) {
      if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument(
            "i-branch: resolution must halve evenly through every block");
      }
      blocks[static_cast<size_t>(i)].create(
          ps, "ibranch.block" + std::to_string(i), c, c, 3, 2, true, true);
      h /= 2;
      w /= 2;
    }
    flat_size = c * h * w;
    head.create(ps, "ibranch.head", flat_size, c, 6, ParamInit::kSixdIdentity);
  }

  /// Returns the 6D encoding tensor; decode with sixd_to_matrix.
  Tensor<T> forward(FwdCtx<T>& ctx, const Tensor<T>& s_ip) const {
    Tensor<T> cur = s_ip;
    for (const auto& b : blocks) cur = b.forward(ctx, cur);
    return head.forward(ctx, ctx.g.reshape(cur, Shape::of(flat_size)));
  }
};

/// Multi-stream spherical FPN. Stage features are concatenated across
/// streams; 1x1 lateral convolutions and nearest-neighbor upsampling form
/// the top-down pathway ending at the (H0/2, W0/2) level.
template <typename T>
struct SphericalFpn {
  std::vector<StreamEncoder<T>> encoders;
  SpaConvUnit<T> lateral2, lateral3, lateral4;

  void create(ParamSet<T>& ps, const FpnConfig& cfg) {
    encoders.resize(cfg.streams.size());
    for (size_t i = 0; i < cfg.streams.size(); ++i) {
      encoders[i].create(ps, "stream" + std::to_string(i),
                         cfg.streams[i].channels, cfg.stage_widths);
    }
    const int n = static_cast<int>(cfg.streams.size());
    lateral2.create(ps, "fpn.lateral2", cfg.stage_widths[1] * n, cfg.fpn_channels,
                    1, 1, false, false);
    lateral3.create(ps, "fpn.lateral3", cfg.stage_widths[2] * n, cfg.fpn_channels,
                    1, 1, false, false);
    lateral4.create(ps, "fpn.lateral4", cfg.stage_widths[3] * n, cfg.fpn_channels,
                    1, 1, false, false);
  }

  Tensor<T> forward(FwdCtx<T>& ctx, const std::vector<Tensor<T>>& stream_maps) const {
    Graph<T>& g = ctx.g;
    std::vector<std::array<Tensor<T>, 4>> feats;
    feats.reserve(encoders.size());
    for (size_t i = 0; i < encoders.size(); ++i) {
      feats.push_back(encoders[i].forward(ctx, stream_maps[i]));
    }
    auto fused = [&](int stage) {
      std::vector<Tensor<T>> parts;
      parts.reserve(feats.size());
      for (auto& f : feats) parts.push_back(f[static_cast<size_t>(stage)]);
      return parts.size() == 1 ? parts[0] : g.concat_channels(parts);
    };
    Tensor<T> top = lateral4.forward(ctx, fused(3));
    Tensor<T> mid = g.add(lateral3.forward(ctx, fused(2)), upsample2x(g, top));
    return g.add(lateral2.forward(ctx, fused(1)), upsample2x(g, mid));
  }
};

// ---- the full model ---------------------------------------------------

template <typename T>
struct ViNetOutput {
  Tensor<T> feature;            // S: C x H x W
  Tensor<T> y_phi, y_theta;     // invalid() when the direct head is active
  int w_max = -1, h_max = -1;
  ViewpointAngles vp_angles;
  Rotation r_vp;                // identity for the direct head
  Tensor<T> rotation;           // 3x3 graph tensor of the final prediction
  Rotation rotation_value;      // f64 decode of the same prediction
};

template <typename T>
class ViNetModel {
 public:
  explicit ViNetModel(const FpnConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    fpn_.create(params_, cfg_);
    // the direct-regression variant swaps the binary classification for a
    // 6D regression of R_vp from the pooled feature and skips the feature
    // transformation; the in-plane head is shared by both variants
    if (cfg_.direct_head) {
      direct_.create(params_, "direct", cfg_.fpn_channels, cfg_.vp_channels, 6,
                     ParamInit::kSixdIdentity);
    } else {
      vbranch_.create(params_, cfg_.fpn_channels, cfg_.vp_channels);
    }
    ibranch_.create(params_, cfg_.fpn_channels, cfg_.out_height(),
                    cfg_.out_width(), cfg_.ib_blocks);
  }

  void initialize(std::uint64_t master_seed) {
    RngStream init = named_stream(master_seed, "init");
    params_.initialize(init);
  }

  const FpnConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Spherical maps (one per configured stream, in order) -> prediction.
  ViNetOutput<T> forward(FwdCtx<T>& ctx, const std::vector<SphericalMap>& maps) const {
    if (maps.size() != cfg_.streams.size()) {
      throw std::invalid_argument("forward: expected one map per stream");
    }
    Graph<T>& g = ctx.g;
    std::vector<Tensor<T>> inputs;
    inputs.reserve(maps.size());
    for (size_t i = 0; i < maps.size(); ++i) {
      const auto& m = maps[i];
      if (m.height != cfg_.input_height || m.width != cfg_.input_width ||
          m.channels != cfg_.streams[i].channels) {
        throw std::invalid_argument("forward: stream resolution mismatch");
      }
      std::vector<T> vals(m.data.size());
      for (size_t j = 0; j < m.data.size(); ++j) vals[j] = static_cast<T>(m.data[j]);
      inputs.push_back(
          g.constant(Shape::of(m.channels, m.height, m.width), std::move(vals)));
    }

    ViNetOutput<T> out;
    out.feature = fpn_.forward(ctx, inputs);

    if (cfg_.direct_head) {
      // R_vp regressed from the pooled feature, no feature transformation;
      // both factors train jointly through the rotation loss
      Tensor<T> vp_six = direct_.forward(ctx, g.global_avg_pool(out.feature));
      Tensor<T> ip_six = ibranch_.forward(ctx, out.feature);
      out.rotation = g.matmul(g.sixd_to_matrix(vp_six), g.sixd_to_matrix(ip_six));
      out.r_vp = decode_six(vp_six);
      out.rotation_value = out.r_vp * decode_six(ip_six);
      return out;
    }

    VBranchOut<T> vb = vbranch_.forward(ctx, out.feature);
    out.y_phi = vb.y_phi;
    out.y_theta = vb.y_theta;
    out.w_max = vb.w_max;
    out.h_max = vb.h_max;
    out.vp_angles = vb.angles;
    out.r_vp = vb.r_vp;

    Tensor<T> s_ip = transform_features(g, out.feature, vb.r_vp, cfg_.knn);
    Tensor<T> six = ibranch_.forward(ctx, s_ip);

    std::vector<T> vp_vals(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        vp_vals[static_cast<size_t>(r) * 3 + c] =
            static_cast<T>(vb.r_vp.matrix()(r, c));
    Tensor<T> vp_const = g.constant(Shape::of(3, 3), std::move(vp_vals));
    out.rotation = g.matmul(vp_const, g.sixd_to_matrix(six));
    out.rotation_value = vb.r_vp * decode_six(six);
    return out;
  }

  std::vector<CheckpointEntry> to_checkpoint() const {
    std::vector<CheckpointEntry> entries;
    entries.reserve(params_.all().size() + 1);
    const std::string arch = cfg_.to_keyvalues().str();
    CheckpointEntry header;
    header.name = "__arch__";
    header.dims = {static_cast<std::uint32_t>(arch.size())};
    header.values.reserve(arch.size());
    for (unsigned char ch : arch) header.values.push_back(static_cast<float>(ch));
    entries.push_back(std::move(header));
    for (const auto* p : params_.all()) {
      CheckpointEntry e;
      e.name = p->name;
      for (int i = 0; i < p->shape.rank; ++i)
        e.dims.push_back(static_cast<std::uint32_t>(p->shape[i]));
      e.values.reserve(static_cast<size_t>(p->count()));
      for (const T v : p->value) e.values.push_back(static_cast<float>(v));
      entries.push_back(std::move(e));
    }
    return entries;
  }

  void load_checkpoint(const std::vector<CheckpointEntry>& entries) {
    size_t used = 0;
    for (const auto& e : entries) {
      if (e.name == "__arch__") continue;
      Parameter<T>* p = params_.find(e.name);
      if (!p) {
        throw std::invalid_argument(
            "checkpoint/architecture mismatch: unknown parameter '" + e.name + "'");
      }
      if (static_cast<std::int64_t>(e.values.size()) != p->count()) {
        throw std::invalid_argument(
            "checkpoint/architecture mismatch: size of '" + e.name + "'");
      }
      for (size_t i = 0; i < e.values.size(); ++i)
        p->value[i] = static_cast<T>(e.values[i]);
      ++used;
    }
    if (used != params_.all().size()) {
      throw std::invalid_argument(
          "checkpoint/architecture mismatch: missing parameters");
    }
  }

 private:
  static Rotation decode_six(const Tensor<T>& six) {
    std::array<double, 6> d;
    for (int i = 0; i < 6; ++i) d[static_cast<size_t>(i)] = static_cast<double>(six.data()[i]);
    return sixd_to_rotation(d);
  }

  FpnConfig cfg_;
  ParamSet<T> params_;
  SphericalFpn<T> fpn_;
  VBranch<T> vbranch_;
  IBranch<T> ibranch_;
  Mlp<T> direct_;
};

/// Architecture block stored in a checkpoint's "__arch__" entry.
FpnConfig config_from_checkpoint(const std::vector<CheckpointEntry>& entries);

}  // namespace vinet
