// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Heavier end-to-end checks (toy training, determinism)
// write their artifacts under a temporary directory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vinet/checks.hpp"
#include "vinet/geometry.hpp"
#include "vinet/io.hpp"
#include "vinet/network.hpp"
#include "vinet/rng.hpp"
#include "vinet/spa_sconv.hpp"
#include "vinet/tensor.hpp"
#include "vinet/training.hpp"

using namespace vinet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::duration<double>>(Clock::now() -
                                                                   t0)
      .count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

#define REQUIRE_OR_FAIL(cond, message)                    \
  do {                                                    \
    if (!(cond)) return {false, (message)};               \
  } while (0)

fs::path g_workdir;

// ---- criterion 8/9 shared configuration --------------------------------

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.arch = FpnConfig::tiny();
  cfg.arch.input_height = 32;
  cfg.arch.input_width = 32;
  cfg.iterations = 600;
  cfg.batch = 16;
  cfg.lr = 1e-3;
  cfg.lambda = 100.0;
  cfg.seed = 0;
  cfg.eval_every = 200;
  cfg.precision = "f32";
  return cfg;
}

constexpr std::uint64_t kTrainSeed = 1001;
constexpr std::uint64_t kHoldoutSeed = 1002;
constexpr int kTrainCount = 2000;
constexpr int kHoldoutCount = 200;

// reduced schedule for the 5-seed ablation comparison (same settings for
// both variants of each pair)
struct AblationSetup {
  int input_res = 16;
  int ib_blocks = 2;
  int iterations = 250;
  int train_count = 600;
  int eval_count = 150;
  std::uint64_t train_seed = 2001;
  std::uint64_t eval_seed = 2002;
};

const std::vector<Sample>& toy_train_data() {
  static const std::vector<Sample> data = synth_dataset(kTrainSeed, kTrainCount);
  return data;
}
const std::vector<Sample>& toy_holdout_data() {
  static const std::vector<Sample> data =
      synth_dataset(kHoldoutSeed, kHoldoutCount);
  return data;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- criteria ------------------------------------------------------------

Outcome criterion1_padding_oracle() {
  // worked 1x2x2 example
  {
    Graph<double> g;
    auto out = pad_spherical(g, g.constant(Shape::of(1, 2, 2), {1, 2, 3, 4}), 1);
    const std::vector<double> expect{1, 2, 1, 2, 2, 1, 2, 1, 4, 3, 4, 3, 3, 4, 3, 4};
    REQUIRE_OR_FAIL(
        std::vector<double>(out.values().begin(), out.values().end()) == expect,
        "worked 1x2x2 example mismatch");
  }
  RngStream rng(4201);
  int checked = 0;
  while (checked < 100) {
    const int c = 1 + static_cast<int>(rng.uniform_index(4));
    const int h = 2 + static_cast<int>(rng.uniform_index(12));
    const int w = 2 * (1 + static_cast<int>(rng.uniform_index(8)));
    const int maxp = std::min(h - 1, w / 2);
    if (maxp < 1) continue;
    const int p = 1 + static_cast<int>(rng.uniform_index(maxp));
    std::vector<double> src(static_cast<size_t>(c) * h * w);
    for (auto& v : src) v = rng.uniform(-1.0, 1.0);
    Graph<double> g;
    auto out = pad_spherical(g, g.constant(Shape::of(c, h, w), src), p);
    const auto expect = oracle::pad_spherical(src, c, h, w, p);
    for (size_t i = 0; i < expect.size(); ++i) {
      if (out.data()[i] != expect[i]) {
        std::ostringstream os;
        os << "mismatch at C=" << c << " H=" << h << " W=" << w << " P=" << p;
        return {false, os.str()};
      }
    }
    ++checked;
  }
  return {true, "100 random shapes bit-exact, worked example included"};
}

Outcome criterion2_shift_equivariance() {
  RngStream rng(4202);
  double worst = 0.0;
  for (const int res : {8, 16, 32}) {
    for (int trial = 0; trial < 50; ++trial) {
      const int ci = 2, co = 3;
      std::vector<double> x(static_cast<size_t>(ci) * res * res);
      std::vector<double> k(static_cast<size_t>(co) * ci * 9);
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
      for (auto& v : k) v = rng.uniform(-1.0, 1.0);
      const int shift = 1 + static_cast<int>(rng.uniform_index(res - 1));
      auto run = [&](const std::vector<double>& in) {
        Graph<double> g;
        auto out = spa_sconv(g, g.constant(Shape::of(ci, res, res), in),
                             g.constant(Shape::of(co, ci, 3, 3), k), 1);
        return std::vector<double>{out.values().begin(), out.values().end()};
      };
      const auto direct = run(oracle::shift_columns(x, ci, res, res, shift));
      const auto shifted =
          oracle::shift_columns(run(x), co, res, res, shift);
      worst = std::max(worst, oracle::max_abs_diff(direct, shifted));
    }
  }
  std::ostringstream os;
  os << "max abs deviation " << worst << " over 150 pairs at 8/16/32";
  return {worst < 1e-12, os.str()};
}

Outcome criterion3_gradchecks() {
  const auto reports = run_all_gradchecks();
  double worst = 0.0;
  std::string worst_op;
  bool all = true;
  for (const auto& r : reports) {
    if (r.worst_error > worst) {
      worst = r.worst_error;
      worst_op = r.op;
    }
    all = all && r.pass;
  }
  std::ostringstream os;
  os << reports.size() << " ops, worst " << worst << " (" << worst_op << ")";
  return {all, os.str()};
}

Outcome criterion4_decomposition() {
  RngStream rng(4204);
  double worst_recon = 0.0, worst_zenith = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Rotation r{rng.random_rotation()};
    const auto [vp, ip] = decompose(r);
    worst_recon =
        std::max(worst_recon, (vp.matrix() * ip.matrix() - r.matrix()).norm());
    worst_zenith =
        std::max(worst_zenith, (vp.zenith() - r.zenith()).cwiseAbs().maxCoeff());
  }
  std::ostringstream os;
  os << "worst reconstruction " << worst_recon << ", worst zenith "
     << worst_zenith;
  return {worst_recon < 1e-12 && worst_zenith < 1e-12, os.str()};
}

Outcome criterion5_transform() {
  RngStream rng(4205);
  // identity rotation: exact identity map
  {
    const int res = 32, c = 2;
    std::vector<double> feat(static_cast<size_t>(c) * res * res);
    for (auto& v : feat) v = rng.uniform(-1.0, 1.0);
    Graph<double> g;
    auto out = transform_features(g, g.constant(Shape::of(c, res, res), feat),
                                  Rotation::identity(), 3);
    for (size_t i = 0; i < feat.size(); ++i) {
      REQUIRE_OR_FAIL(out.data()[i] == feat[i],
                      "identity rotation is not an exact identity map");
    }
  }
  double worst = 0.0;
  for (const int res : {16, 32}) {
    const int c = 2;
    std::vector<double> feat(static_cast<size_t>(c) * res * res);
    for (auto& v : feat) v = rng.uniform(-1.0, 1.0);
    const Rotation r{rng.random_rotation()};
    Graph<double> g;
    auto out =
        transform_features(g, g.constant(Shape::of(c, res, res), feat), r, 3);
    const auto expect = oracle::transform_features(feat, c, res, res,
                                                   r.matrix(), 3);
    for (size_t i = 0; i < expect.size(); ++i) {
      worst = std::max(worst, std::abs(out.data()[i] - expect[i]));
    }
  }
  std::ostringstream os;
  os << "identity exact; oracle deviation " << worst << " at 16x16 and 32x32";
  return {worst < 1e-12, os.str()};
}

Outcome criterion6_convergence() {
  const auto rep = check_equivariance(1, 8, 4206);
  REQUIRE_OR_FAIL(rep.convergence.size() == 3, "missing convergence rows");
  std::ostringstream os;
  os << "discrepancy";
  for (const auto& [res, d] : rep.convergence) os << ' ' << res << ":" << d;
  const bool strictly_decreasing =
      rep.convergence[0].second > rep.convergence[1].second &&
      rep.convergence[1].second > rep.convergence[2].second;
  return {strictly_decreasing, os.str()};
}

Outcome criterion7_losses() {
  RngStream rng(4207);
  // gamma=0, alpha=1 reduces to mean BCE
  {
    Graph<double> g;
    const int m = 24;
    std::vector<double> y(m);
    std::vector<std::uint8_t> labels(m);
    for (int i = 0; i < m; ++i) {
      y[static_cast<size_t>(i)] = rng.uniform(0.02, 0.98);
      labels[static_cast<size_t>(i)] = rng.uniform() < 0.5;
    }
    const double got =
        g.focal_loss(g.constant(Shape::of(m), y), labels, 1.0, 0.0).scalar();
    double bce = 0.0;
    for (int i = 0; i < m; ++i) {
      bce += labels[static_cast<size_t>(i)]
                 ? -std::log(y[static_cast<size_t>(i)])
                 : -std::log(1.0 - y[static_cast<size_t>(i)]);
    }
    bce /= m;
    REQUIRE_OR_FAIL(std::abs(got - bce) < 1e-12, "BCE reduction off");
  }
  // hand-derived M=2 example
  {
    Graph<double> g;
    const double got =
        g.focal_loss(g.constant(Shape::of(2), {0.9, 0.2}), {1, 0}, 0.5, 2.0)
            .scalar();
    REQUIRE_OR_FAIL(std::abs(got - 2.4948368022866627e-3) < 1e-9,
                    "M=2 focal example off");
  }
  const double rl = rotation_loss(Rotation::identity(), rot_z(M_PI));
  REQUIRE_OR_FAIL(std::abs(rl - std::sqrt(8.0)) < 1e-12,
                  "rotation_loss(I, rot_z(pi)) != sqrt(8)");
  return {true, "BCE reduction, M=2 focal value, sqrt(8) rotation loss"};
}

// runs the toy training once; shared by criteria 8 and 9
struct ToyRun {
  Metrics metrics;
  std::string checkpoint;
  std::string csv;
};

ToyRun run_toy(const std::string& tag) {
  ToyRun run;
  run.checkpoint = (g_workdir / ("toy_" + tag + ".vick")).string();
  run.csv = (g_workdir / ("toy_" + tag + ".csv")).string();
  const auto& holdout = toy_holdout_data();
  run.metrics = train(toy_config(), toy_train_data(), &holdout, run.checkpoint,
                      run.csv, 1);
  return run;
}

const ToyRun& toy_run_a() {
  static const ToyRun run = run_toy("a");
  return run;
}

Outcome criterion8_toy_training() {
  const auto t0 = Clock::now();
  const ToyRun& run = toy_run_a();
  const Metrics& m = run.metrics;

  std::ostringstream os;
  os << "median " << m.median_deg << " deg, within-1-bin phi " << m.phi_within1
     << " theta " << m.theta_within1;

  REQUIRE_OR_FAIL(m.count == static_cast<size_t>(kHoldoutCount),
                  "held-out evaluation incomplete");
  REQUIRE_OR_FAIL(m.median_deg < 15.0, "median geodesic error >= 15 deg: " + os.str());
  REQUIRE_OR_FAIL(m.phi_within1 > 0.8,
                  "phi within-1-bin accuracy <= 0.8: " + os.str());
  REQUIRE_OR_FAIL(m.theta_within1 > 0.8,
                  "theta within-1-bin accuracy <= 0.8: " + os.str());

  const auto baseline =
      evaluate_fresh_model(toy_config().arch, 4242, toy_holdout_data(), 1);
  os << "; random baseline median " << baseline.median_deg;
  REQUIRE_OR_FAIL(baseline.median_deg > 90.0,
                  "random-weight baseline median <= 90 deg: " + os.str());

  // ablation: decoupled vs direct regression, same seed/schedule per pair
  const AblationSetup ab;
  const auto ab_train = synth_dataset(ab.train_seed, ab.train_count);
  const auto ab_eval = synth_dataset(ab.eval_seed, ab.eval_count);
  int full_wins = 0;
  os << "; ablation medians (full/direct)";
  for (int seed = 0; seed < 5; ++seed) {
    double med[2];
    for (const bool direct : {false, true}) {
      TrainConfig cfg = toy_config();
      cfg.arch.input_height = cfg.arch.input_width = ab.input_res;
      cfg.arch.ib_blocks = ab.ib_blocks;
      cfg.arch.direct_head = direct;
      cfg.iterations = ab.iterations;
      cfg.eval_every = ab.iterations + 1;  // final evaluation only
      cfg.seed = static_cast<std::uint64_t>(seed);
      const auto metrics = train(cfg, ab_train, &ab_eval,
                                 (g_workdir / "ablation.vick").string(), "", 1);
      med[direct ? 1 : 0] = metrics.median_deg;
    }
    os << ' ' << med[0] << '/' << med[1];
    if (med[0] < med[1]) ++full_wins;
  }
  os << " -> full wins " << full_wins << "/5";
  REQUIRE_OR_FAIL(full_wins >= 4, "direct regression won too often: " + os.str());

  const double secs = seconds_since(t0);
  os << "; " << static_cast<int>(secs) << " s";
  REQUIRE_OR_FAIL(secs < 1800.0, "criterion 8 exceeded 30 minutes: " + os.str());
  return {true, os.str()};
}

Outcome criterion9_determinism() {
  const ToyRun& first = toy_run_a();
  const ToyRun second = run_toy("b");
  REQUIRE_OR_FAIL(slurp(first.checkpoint) == slurp(second.checkpoint),
                  "checkpoints differ between identical runs");
  REQUIRE_OR_FAIL(slurp(first.csv) == slurp(second.csv),
                  "metric CSVs differ between identical runs");
  REQUIRE_OR_FAIL(first.metrics.median_deg == second.metrics.median_deg,
                  "final metrics differ between identical runs");
  return {true, "checkpoint and CSV bit-identical across a repeated run"};
}

}  // namespace

int main() {
  g_workdir = fs::temp_directory_path() /
              ("vinet_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(g_workdir);

  struct Entry {
    int id;
    const char* label;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> criteria{
      {1, "spherical padding matches the literal equation oracle",
       criterion1_padding_oracle},
      {2, "stride-1 spherical convolution commutes with azimuth shifts",
       criterion2_shift_equivariance},
      {3, "finite-difference gradient checks for every operation",
       criterion3_gradchecks},
      {4, "viewpoint/in-plane decomposition round-trip", criterion4_decomposition},
      {5, "feature transformation identity and interpolation oracle",
       criterion5_transform},
      {6, "resampling equivariance discrepancy shrinks as resolution doubles",
       criterion6_convergence},
      {7, "loss reductions and closed-form values", criterion7_losses},
      {8, "toy training reaches the accuracy bars", criterion8_toy_training},
      {9, "repeated training is bit-identical", criterion9_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    std::printf("[%s] criterion %d: %s (%.1f s) — %s\n",
                out.pass ? "PASS" : "FAIL", c.id, c.label, secs,
                out.detail.c_str());
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }

  std::error_code ec;
  fs::remove_all(g_workdir, ec);

  if (failures == 0) {
    std::printf("all %zu acceptance criteria passed\n", criteria.size());
  } else {
    std::printf("%d acceptance criteria FAILED\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
