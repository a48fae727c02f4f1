#include "vinet/checks.hpp"

#include <cmath>
#include <memory>

#include "vinet/common.hpp"
#include "vinet/network.hpp"
#include "vinet/rng.hpp"
#include "vinet/spa_sconv.hpp"
#include "vinet/training.hpp"

namespace vinet {

double gradcheck_max_error(const GradProblem& problem, double step) {
  std::vector<std::vector<double>> analytic;
  problem.eval(&analytic);

  double worst = 0.0;
  for (size_t a = 0; a < problem.inputs.size(); ++a) {
    std::vector<double>& arr = *problem.inputs[a].second;
    for (size_t i = 0; i < arr.size(); ++i) {
      const double keep = arr[i];
      arr[i] = keep + step;
      const double up = problem.eval(nullptr);
      arr[i] = keep - step;
      const double down = problem.eval(nullptr);
      arr[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double an = analytic[a][i];
      const double mag = std::max(std::abs(an), std::abs(numeric));
      const double diff = std::abs(an - numeric);
      // an entry passes relatively at 1e-5 or absolutely at 1e-8; the
      // absolute branch covers the finite-difference roundoff floor
      // (~eps*|loss|/2h), which a correct gradient cannot beat. Both
      // branches are rescaled so 1e-5 is the uniform pass line.
      const double abs_scaled = diff * (1e-5 / 1e-8);
      const double err =
          mag < 1e-8 ? abs_scaled : std::min(diff / mag, abs_scaled);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

using DGraph = Graph<double>;
using DTensor = Tensor<double>;

std::vector<double> random_vec(RngStream& rng, std::int64_t n, double lo,
                               double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Problem wrapper for a plain op pipeline: the arrays become graph
/// leaves and `build` returns the scalar loss.
struct OpProblem {
  std::vector<Shape> shapes;
  std::vector<std::shared_ptr<std::vector<double>>> arrays;
  std::function<DTensor(DGraph&, const std::vector<DTensor>&)> build;

  GradProblem make() {
    GradProblem p;
    for (size_t i = 0; i < shapes.size(); ++i) {
      p.inputs.emplace_back(shapes[i], arrays[i].get());
    }
    auto shapes_c = shapes;
    auto arrays_c = arrays;
    auto build_c = build;
    p.eval = [shapes_c, arrays_c,
              build_c](std::vector<std::vector<double>>* grads) -> double {
      DGraph g;
      std::vector<DTensor> leaves;
      leaves.reserve(arrays_c.size());
      for (size_t i = 0; i < arrays_c.size(); ++i) {
        leaves.push_back(
            g.leaf(shapes_c[i], arrays_c[i]->data(), grads != nullptr));
      }
      DTensor loss = build_c(g, leaves);
      if (grads) {
        g.backward(loss);
        grads->clear();
        for (auto& leaf : leaves) {
          const auto gr = leaf.grad();
          if (gr.empty()) {
            grads->emplace_back(leaf.shape().count(), 0.0);
          } else {
            grads->emplace_back(gr.begin(), gr.end());
          }
        }
      }
      return loss.scalar();
    };
    return p;
  }
};

/// Scalar probe: a fixed random weighting collapses a tensor to a scalar
/// without symmetric cancellation.
DTensor probe(DGraph& g, const DTensor& t, std::uint64_t salt) {
  RngStream rng(0xAB5E1100u + salt);
  return g.sum(g.mul(
      t, g.constant(t.shape(), random_vec(rng, t.shape().count(), -1.0, 1.0))));
}

GradProblem problem_conv2d(int stride) {
  OpProblem p;
  RngStream rng(101 + stride);
  p.shapes = {Shape::of(2, 7, 7), Shape::of(3, 2, 3, 3)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 2 * 7 * 7, -1, 1)),
              std::make_shared<std::vector<double>>(
                  random_vec(rng, 3 * 2 * 3 * 3, -0.5, 0.5))};
  p.build = [stride](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.conv2d_valid(in[0], in[1], stride), 1);
  };
  return p.make();
}

GradProblem problem_spa_sconv(int stride) {
  OpProblem p;
  RngStream rng(211 + stride);
  p.shapes = {Shape::of(2, 8, 8), Shape::of(3, 2, 3, 3)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 2 * 8 * 8, -1, 1)),
              std::make_shared<std::vector<double>>(
                  random_vec(rng, 3 * 2 * 3 * 3, -0.5, 0.5))};
  p.build = [stride](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, spa_sconv(g, in[0], in[1], stride), 2);
  };
  return p.make();
}

GradProblem problem_pad() {
  OpProblem p;
  RngStream rng(307);
  p.shapes = {Shape::of(2, 5, 6)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 2 * 5 * 6, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, pad_spherical(g, in[0], 2), 3);
  };
  return p.make();
}

GradProblem problem_linear() {
  OpProblem p;
  RngStream rng(401);
  p.shapes = {Shape::of(4, 5), Shape::of(3, 5), Shape::of(3)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 20, -1, 1)),
              std::make_shared<std::vector<double>>(random_vec(rng, 15, -1, 1)),
              std::make_shared<std::vector<double>>(random_vec(rng, 3, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.linear(in[0], in[1], in[2]), 4);
  };
  return p.make();
}

GradProblem problem_matmul() {
  OpProblem p;
  RngStream rng(409);
  p.shapes = {Shape::of(3, 4), Shape::of(4, 2)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 12, -1, 1)),
              std::make_shared<std::vector<double>>(random_vec(rng, 8, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.matmul(in[0], in[1]), 5);
  };
  return p.make();
}

GradProblem problem_relu() {
  OpProblem p;
  RngStream rng(419);
  auto vals = std::make_shared<std::vector<double>>(random_vec(rng, 60, 0.1, 1.0));
  for (auto& v : *vals) {
    if (rng.uniform() < 0.5) v = -v;  // keep |x| >= 0.1, away from the kink
  }
  p.shapes = {Shape::of(3, 4, 5)};
  p.arrays = {vals};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.relu(in[0]), 6);
  };
  return p.make();
}

GradProblem problem_sigmoid() {
  OpProblem p;
  RngStream rng(421);
  p.shapes = {Shape::of(24)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 24, -3, 3))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.sigmoid(in[0]), 7);
  };
  return p.make();
}

GradProblem problem_emax() {
  OpProblem p;
  RngStream rng(431);
  auto a = std::make_shared<std::vector<double>>(random_vec(rng, 40, -1, 1));
  auto b = std::make_shared<std::vector<double>>(40);
  for (size_t i = 0; i < a->size(); ++i) {
    const double gap = 0.1 + rng.uniform(0.0, 0.5);  // keep away from ties
    (*b)[i] = (*a)[i] + (rng.uniform() < 0.5 ? gap : -gap);
  }
  p.shapes = {Shape::of(40), Shape::of(40)};
  p.arrays = {a, b};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.emax(in[0], in[1]), 8);
  };
  return p.make();
}

GradProblem problem_axis_max_pool(int axis) {
  OpProblem p;
  RngStream rng(433 + axis);
  p.shapes = {Shape::of(3, 5, 4)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 60, -1, 1))};
  p.build = [axis](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.axis_max_pool(in[0], axis), 9);
  };
  return p.make();
}

GradProblem problem_global_avg_pool() {
  OpProblem p;
  RngStream rng(439);
  p.shapes = {Shape::of(3, 4, 4)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 48, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.global_avg_pool(in[0]), 10);
  };
  return p.make();
}

GradProblem problem_instance_standardize() {
  OpProblem p;
  RngStream rng(443);
  p.shapes = {Shape::of(3, 4, 4), Shape::of(3), Shape::of(3)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 48, -1, 1)),
              std::make_shared<std::vector<double>>(random_vec(rng, 3, 0.5, 1.5)),
              std::make_shared<std::vector<double>>(random_vec(rng, 3, -0.5, 0.5))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.instance_standardize(in[0], in[1], in[2]), 11);
  };
  return p.make();
}

GradProblem problem_upsample() {
  OpProblem p;
  RngStream rng(449);
  p.shapes = {Shape::of(2, 4, 4)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 32, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, upsample2x(g, in[0]), 12);
  };
  return p.make();
}

GradProblem problem_transform() {
  OpProblem p;
  RngStream rng(457);
  p.shapes = {Shape::of(2, 8, 8)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 128, -1, 1))};
  const Rotation r{rng.random_rotation()};
  auto plan = make_transform_plan(r, 8, 8, 3);
  p.build = [plan](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.weighted_gather(in[0], plan), 13);
  };
  return p.make();
}

GradProblem problem_concat() {
  OpProblem p;
  RngStream rng(461);
  p.shapes = {Shape::of(2, 3, 4), Shape::of(3, 3, 4)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 24, -1, 1)),
              std::make_shared<std::vector<double>>(random_vec(rng, 36, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.concat_channels({in[0], in[1]}), 14);
  };
  return p.make();
}

GradProblem problem_reshape_transpose() {
  OpProblem p;
  RngStream rng(463);
  p.shapes = {Shape::of(3, 8)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 24, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.reshape(g.transpose2d(in[0]), Shape::of(2, 12)), 15);
  };
  return p.make();
}

GradProblem problem_arith() {
  OpProblem p;
  RngStream rng(467);
  auto vals = std::make_shared<std::vector<double>>(random_vec(rng, 30, 0.2, 1.0));
  p.shapes = {Shape::of(30)};
  p.arrays = {vals};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    // sqrt(sum(x*x)) away from zero covers mul/sum/sqrt
    return g.sqrt(g.sum(g.mul(in[0], in[0])));
  };
  return p.make();
}

GradProblem problem_affine() {
  OpProblem p;
  RngStream rng(479);
  p.shapes = {Shape::of(20), Shape::of(20)};
  p.arrays = {std::make_shared<std::vector<double>>(random_vec(rng, 20, -1, 1)),
              std::make_shared<std::vector<double>>(random_vec(rng, 20, -1, 1))};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.sub(g.add(in[0], in[1]), g.scale(in[1], 0.7)), 16);
  };
  return p.make();
}

GradProblem problem_sixd() {
  OpProblem p;
  RngStream rng(487);
  auto vals = std::make_shared<std::vector<double>>(
      std::vector<double>{0.9, -0.3, 0.5, 0.2, 1.1, -0.4});
  p.shapes = {Shape::of(6)};
  p.arrays = {vals};
  p.build = [](DGraph& g, const std::vector<DTensor>& in) {
    return probe(g, g.sixd_to_matrix(in[0]), 17);
  };
  return p.make();
}

GradProblem problem_focal(bool through_sigmoid) {
  OpProblem p;
  RngStream rng(491 + (through_sigmoid ? 1 : 0));
  auto vals = std::make_shared<std::vector<double>>(
      through_sigmoid ? random_vec(rng, 12, -2, 2) : random_vec(rng, 12, 0.1, 0.9));
  std::vector<std::uint8_t> labels(12);
  for (auto& l : labels) l = rng.uniform() < 0.25 ? 1 : 0;
  p.shapes = {Shape::of(12)};
  p.arrays = {vals};
  p.build = [labels, through_sigmoid](DGraph& g, const std::vector<DTensor>& in) {
    DTensor y = through_sigmoid ? g.sigmoid(in[0]) : in[0];
    return g.focal_loss(y, labels, 0.5, 2.0);
  };
  return p.make();
}

GradProblem problem_rotation_loss() {
  OpProblem p;
  RngStream rng(499);
  auto vals = std::make_shared<std::vector<double>>(
      std::vector<double>{1.1, 0.2, -0.3, -0.1, 0.8, 0.4});
  const Rotation r_vp{rng.random_rotation()};
  const Rotation r_hat{rng.random_rotation()};
  p.shapes = {Shape::of(6)};
  p.arrays = {vals};
  p.build = [r_vp, r_hat](DGraph& g, const std::vector<DTensor>& in) {
    std::vector<double> vp(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        vp[static_cast<size_t>(r) * 3 + c] = r_vp.matrix()(r, c);
    DTensor rot = g.matmul(g.constant(Shape::of(3, 3), std::move(vp)),
                           g.sixd_to_matrix(in[0]));
    return rotation_loss_t(g, rot, r_hat);
  };
  return p.make();
}

// End-to-end: every parameter of a micro ViNet against the total loss.
constexpr double kNetworkCheckLambda = 100.0;

GradProblem problem_network() {
  auto model = std::make_shared<ViNetModel<double>>(FpnConfig::micro());
  model->initialize(7);

  RngStream rng(601);
  const auto& cfg = model->config();
  auto maps = std::make_shared<std::vector<SphericalMap>>();
  for (const auto& s : cfg.streams) {
    SphericalMap m(s.channels, cfg.input_height, cfg.input_width);
    for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
    maps->push_back(std::move(m));
  }
  const Rotation gt{rng.random_rotation()};
  auto labels = std::make_shared<GtLabels>(
      make_gt_labels(gt, cfg.out_height(), cfg.out_width()));

  GradProblem p;
  for (auto* param : model->params().all()) {
    p.inputs.emplace_back(param->shape, &param->value);
  }
  p.eval = [model, maps, gt, labels](std::vector<std::vector<double>>* grads) {
    Graph<double> g;
    FwdCtx<double> ctx(g, grads != nullptr);
    const auto out = model->forward(ctx, *maps);
    const auto loss =
        build_loss(g, out, gt, *labels, FocalParams{}, kNetworkCheckLambda);
    if (grads) {
      g.backward(loss.total);
      grads->clear();
      for (auto* param : model->params().all()) {
        const auto gr = ctx.grad_of(param);
        if (gr.empty()) {
          grads->emplace_back(static_cast<size_t>(param->count()), 0.0);
        } else {
          grads->emplace_back(gr.begin(), gr.end());
        }
      }
    }
    return static_cast<double>(loss.total.scalar());
  };
  return p;
}

struct NamedProblem {
  const char* name;
  GradProblem (*make)();
};

GradProblem make_conv2d() { return problem_conv2d(1); }
GradProblem make_conv2d_s2() { return problem_conv2d(2); }
GradProblem make_spa() { return problem_spa_sconv(1); }
GradProblem make_spa_s2() { return problem_spa_sconv(2); }
GradProblem make_pool_h() { return problem_axis_max_pool(1); }
GradProblem make_pool_w() { return problem_axis_max_pool(2); }
GradProblem make_focal_plain() { return problem_focal(false); }
GradProblem make_focal_sigmoid() { return problem_focal(true); }

const NamedProblem kProblems[] = {
    {"conv2d", make_conv2d},
    {"conv2d_stride2", make_conv2d_s2},
    {"spa_sconv", make_spa},
    {"spa_sconv_stride2", make_spa_s2},
    {"pad", problem_pad},
    {"linear", problem_linear},
    {"matmul", problem_matmul},
    {"relu", problem_relu},
    {"sigmoid", problem_sigmoid},
    {"elementwise_max", problem_emax},
    {"axis_max_pool_h", make_pool_h},
    {"axis_max_pool_w", make_pool_w},
    {"global_avg_pool", problem_global_avg_pool},
    {"instance_standardize", problem_instance_standardize},
    {"upsample", problem_upsample},
    {"transform", problem_transform},
    {"concat", problem_concat},
    {"reshape_transpose", problem_reshape_transpose},
    {"arith", problem_arith},
    {"affine", problem_affine},
    {"sixd", problem_sixd},
    {"focal", make_focal_plain},
    {"focal_sigmoid", make_focal_sigmoid},
    {"rotation_loss", problem_rotation_loss},
    {"network", problem_network},
};

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& p : kProblems) names.emplace_back(p.name);
  return names;
}

GradCheckReport run_gradcheck(const std::string& name) {
  for (const auto& p : kProblems) {
    if (name == p.name) {
      GradProblem problem = p.make();
      const double worst = gradcheck_max_error(problem);
      return {name, worst, worst < 1e-5};
    }
  }
  throw std::invalid_argument("unknown gradcheck op '" + name + "'");
}

std::vector<GradCheckReport> run_all_gradchecks() {
  std::vector<GradCheckReport> reports;
  for (const auto& p : kProblems) reports.push_back(run_gradcheck(p.name));
  return reports;
}

// ---- equivariance ----------------------------------------------------

namespace {

std::vector<double> tensor_values(const Tensor<double>& t) {
  return {t.values().begin(), t.values().end()};
}

std::vector<double> run_spa(const std::vector<double>& x, int c, int res,
                            const std::vector<double>& ker, int co) {
  Graph<double> g;
  auto out = spa_sconv(g, g.constant(Shape::of(c, res, res), x),
                       g.constant(Shape::of(co, c, 3, 3), ker), 1);
  return tensor_values(out);
}

std::vector<double> cyclic_shift(const std::vector<double>& x, int c, int h,
                                 int w, int k) {
  std::vector<double> out(x.size());
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        int src = (col - k) % w;
        if (src < 0) src += w;
        out[(static_cast<size_t>(ch) * h + r) * w + col] =
            x[(static_cast<size_t>(ch) * h + r) * w + src];
      }
  return out;
}

// smooth band-limited test signal: a few exponential lobes per channel
struct SmoothField {
  struct Lobe {
    Eigen::Vector3d dir;
    double sharp;
    double amp;
  };
  std::vector<std::vector<Lobe>> channels;

  static SmoothField make(int n_channels, RngStream& rng) {
    SmoothField f;
    f.channels.resize(static_cast<size_t>(n_channels));
    for (auto& ch : f.channels) {
      for (int j = 0; j < 4; ++j) {
        ch.push_back({rng.random_unit_vector(), rng.uniform(2.0, 6.0),
                      rng.uniform(-1.0, 1.0)});
      }
    }
    return f;
  }

  double eval(int c, const Eigen::Vector3d& u) const {
    double acc = 0.0;
    for (const auto& l : channels[static_cast<size_t>(c)]) {
      acc += l.amp * std::exp(l.sharp * (u.dot(l.dir) - 1.0));
    }
    return acc;
  }

  std::vector<double> sample(int res) const {
    const auto grid = anchor_grid(res, res);
    std::vector<double> out(channels.size() * grid.size());
    for (size_t c = 0; c < channels.size(); ++c)
      for (size_t i = 0; i < grid.size(); ++i)
        out[c * grid.size() + i] = eval(static_cast<int>(c), grid[i]);
    return out;
  }
};

std::vector<double> apply_plan(const std::vector<double>& x, int channels,
                               const GatherPlan& plan) {
  std::vector<double> out(x.size());
  const int cells = plan.cells;
  for (int c = 0; c < channels; ++c) {
    const double* src = x.data() + static_cast<size_t>(c) * cells;
    double* dst = out.data() + static_cast<size_t>(c) * cells;
    for (int j = 0; j < cells; ++j) {
      double acc = 0.0;
      for (int i = 0; i < plan.neighbors; ++i) {
        acc += plan.weight[static_cast<size_t>(j) * plan.neighbors + i] *
               src[plan.index[static_cast<size_t>(j) * plan.neighbors + i]];
      }
      dst[j] = acc;
    }
  }
  return out;
}

double rel_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace

EquivarianceReport check_equivariance(int trials, int resolution,
                                      std::uint64_t seed) {
  if (trials < 1 || resolution < 4 || resolution % 2 != 0) {
    throw std::invalid_argument(
        "check_equivariance: need trials >= 1 and even resolution >= 4");
  }
  EquivarianceReport report;
  const int c_in = 2, c_out = 3;

  RngStream rng = named_stream(seed, "equivariance");
  for (int t = 0; t < trials; ++t) {
    std::vector<double> x = random_vec(rng, c_in * resolution * resolution, -1, 1);
    std::vector<double> ker = random_vec(rng, c_out * c_in * 9, -1, 1);
    const int k = 1 + static_cast<int>(rng.uniform_index(
                          static_cast<std::uint64_t>(resolution - 1)));
    const auto direct = run_spa(cyclic_shift(x, c_in, resolution, resolution, k),
                                c_in, resolution, ker, c_out);
    const auto shifted = cyclic_shift(run_spa(x, c_in, resolution, ker, c_out),
                                      c_out, resolution, resolution, k);
    for (size_t i = 0; i < direct.size(); ++i) {
      report.max_shift_error =
          std::max(report.max_shift_error, std::abs(direct[i] - shifted[i]));
    }
  }

  // resampling convergence: one fixed stride-1 layer, rotations shared
  // across resolutions, smooth input field
  RngStream conv_rng = named_stream(seed, "convergence");
  const SmoothField field = SmoothField::make(c_in, conv_rng);
  std::vector<double> ker = random_vec(conv_rng, c_in * c_in * 9, -1, 1);
  std::vector<Rotation> rotations;
  for (int i = 0; i < 20; ++i) rotations.emplace_back(conv_rng.random_rotation());

  for (const int res : {16, 32, 64}) {
    const std::vector<double> s = field.sample(res);
    const auto fs = run_spa(s, c_in, res, ker, c_in);
    double mean = 0.0;
    for (const auto& r : rotations) {
      const auto plan = make_transform_plan(r, res, res, 3);
      const auto lhs = apply_plan(fs, c_in, *plan);             // T(F(S))
      const auto rhs = run_spa(apply_plan(s, c_in, *plan), c_in, res, ker, c_in);
      mean += rel_norm_diff(lhs, rhs);
    }
    report.convergence.emplace_back(res, mean / static_cast<double>(rotations.size()));
  }
  return report;
}

}  // namespace vinet
