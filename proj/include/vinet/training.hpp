#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vinet/config.hpp"
#include "vinet/geometry.hpp"
#include "vinet/network.hpp"
#include "vinet/sphermap.hpp"
#include "vinet/tensor.hpp"

namespace vinet {

// Training objective, synthetic data generation, the Adam loop and
// rotation-error evaluation.

struct FocalParams {
  double alpha = 0.5;
  double gamma = 2.0;
};

/// One-hot azimuth/inclination bin labels of a ground-truth rotation.
struct GtLabels {
  std::vector<std::uint8_t> y_phi;    // length W
  std::vector<std::uint8_t> y_theta;  // length H
  int w_bin = 0;
  int h_bin = 0;
};

GtLabels make_gt_labels(const Rotation& r_hat, int bins_h, int bins_w);

/// A point cloud (normalized, with "radial" and "color" streams) plus its
/// ground-truth rotation.
struct Sample {
  PointCloud cloud;
  Rotation gt_rotation;
  std::uint64_t id = 0;
};

struct ShapeParams {
  int point_count = 2048;
};

/// Canonical asymmetric template: a rigid union of an axis-offset box,
/// cone and sphere cap, surface-sampled, centered and scale-normalized.
/// Depends only on the shape parameters, never on the dataset seed.
PointCloud template_cloud(const ShapeParams& shape = {});

/// `count` rotated copies of the template with uniformly random rotations
/// drawn from the "data" stream of `seed`.
std::vector<Sample> synth_dataset(std::uint64_t seed, int count,
                                  const ShapeParams& shape = {});

/// Dataset directory: one VIPC per sample plus a "manifest.txt" of
/// "index id r00..r22" lines.
void write_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::string& dir);

// ---- losses (graph builders) ---------------------------------------------

template <typename T>
Tensor<T> viewpoint_loss_t(Graph<T>& g, const Tensor<T>& y_phi,
                           const Tensor<T>& y_theta, const GtLabels& gt,
                           const FocalParams& p) {
  return g.add(g.focal_loss(y_phi, gt.y_phi, static_cast<T>(p.alpha),
                            static_cast<T>(p.gamma)),
               g.focal_loss(y_theta, gt.y_theta, static_cast<T>(p.alpha),
                            static_cast<T>(p.gamma)));
}

/// Frobenius distance between the predicted 3x3 tensor and the target.
template <typename T>
Tensor<T> rotation_loss_t(Graph<T>& g, const Tensor<T>& rot, const Rotation& r_hat) {
  std::vector<T> hat(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      hat[static_cast<size_t>(r) * 3 + c] = static_cast<T>(r_hat.matrix()(r, c));
  Tensor<T> d = g.sub(rot, g.constant(Shape::of(3, 3), std::move(hat)));
  return g.sqrt(g.sum(g.mul(d, d)));
}

/// ||R - R_hat||_F on plain values.
double rotation_loss(const Rotation& r, const Rotation& r_hat);

template <typename T>
Tensor<T> total_loss_t(Graph<T>& g, const Tensor<T>& l_ip, const Tensor<T>& l_vp,
                       double lambda) {
  return g.add(l_ip, g.scale(l_vp, static_cast<T>(lambda)));
}

template <typename T>
struct SampleLoss {
  Tensor<T> total, l_vp, l_ip;
};

/// Full objective L = L_ip + lambda * L_vp for one forward output. The
/// direct head has no classification term (L_vp = 0).
template <typename T>
SampleLoss<T> build_loss(Graph<T>& g, const ViNetOutput<T>& out,
                         const Rotation& r_hat, const GtLabels& gt,
                         const FocalParams& focal, double lambda) {
  SampleLoss<T> loss;
  loss.l_ip = rotation_loss_t(g, out.rotation, r_hat);
  if (out.y_phi.valid()) {
    loss.l_vp = viewpoint_loss_t(g, out.y_phi, out.y_theta, gt, focal);
    loss.total = total_loss_t(g, loss.l_ip, loss.l_vp, lambda);
  } else {
    loss.l_vp = g.constant(Shape::of(1), {T(0)});
    loss.total = loss.l_ip;
  }
  return loss;
}

// ---- optimizer --------------------------------------------------------

/// lr0/2 * (1 + cos(pi * iter / total)), iter zero-based.
double cosine_lr(double lr0, int iter, int total_iters);

template <typename T>
class Adam {
 public:
  explicit Adam(const std::vector<Parameter<T>*>& params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params[i]->count()), T(0));
      v_[i].assign(static_cast<size_t>(params[i]->count()), T(0));
    }
  }

  /// grads[i] aligned with params[i] (empty vector = all-zero gradient).
  void step(double lr, const std::vector<std::vector<T>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      T* p = params_[i]->value.data();
      const size_t n = params_[i]->value.size();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const T* gvec = grads[i].empty() ? nullptr : grads[i].data();
      for (size_t j = 0; j < n; ++j) {
        const T gj = gvec ? gvec[j] : T(0);
        m[j] = static_cast<T>(beta1_) * m[j] + static_cast<T>(1.0 - beta1_) * gj;
        v[j] = static_cast<T>(beta2_) * v[j] + static_cast<T>(1.0 - beta2_) * gj * gj;
        const T mhat = m[j] / static_cast<T>(c1);
        const T vhat = v[j] / static_cast<T>(c2);
        p[j] -= static_cast<T>(lr) * mhat /
                (std::sqrt(vhat) + static_cast<T>(eps_));
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// ---- train / evaluate ------------------------------------------------

struct TrainConfig {
  FpnConfig arch;
  int iterations = 2000;
  int batch = 16;
  double lr = 1e-3;
  double lambda = 100.0;
  FocalParams focal;
  std::uint64_t seed = 0;
  int eval_every = 250;
  std::string precision = "f32";  // f32 | f64

  void validate() const;
  static TrainConfig from_keyvalues(const KeyValues& kv);
  KeyValues to_keyvalues() const;
};

struct Metrics {
  double mean_deg = 0.0;
  double median_deg = 0.0;
  double acc5 = 0.0, acc10 = 0.0, acc15 = 0.0;
  double phi_top1 = 0.0, theta_top1 = 0.0;
  double phi_within1 = 0.0, theta_within1 = 0.0;
  std::size_t count = 0;
};

using ProgressFn = std::function<void(int iter, int total, double loss,
                                      double loss_vp, double loss_ip, double lr,
                                      double median_deg)>;

/// Run the full loop: Adam on the combined objective with cosine
/// annealing, per-iteration CSV log ("iter,loss,loss_vp,loss_ip,lr,
/// median_deg"), periodic held-out evaluation, final checkpoint.
/// Returns the final held-out metrics (all-zero if no eval data).
Metrics train(const TrainConfig& cfg, const std::vector<Sample>& train_data,
              const std::vector<Sample>* eval_data,
              const std::string& checkpoint_path, const std::string& log_csv_path,
              int threads = 1, const ProgressFn& progress = nullptr);

Metrics evaluate_checkpoint(const std::string& checkpoint_path,
                            const std::vector<Sample>& samples, int threads = 1);

/// Metrics of a freshly initialized (untrained) model.
Metrics evaluate_fresh_model(const FpnConfig& arch, std::uint64_t seed,
                             const std::vector<Sample>& samples, int threads = 1);

template <typename T>
Metrics evaluate_model(const ViNetModel<T>& model,
                       const std::vector<Sample>& samples, int threads = 1);

}  // namespace vinet
