#include "vinet/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "vinet/common.hpp"
#include "vinet/io.hpp"
#include "vinet/rng.hpp"

namespace fs = std::filesystem;

namespace vinet {

GtLabels make_gt_labels(const Rotation& r_hat, int bins_h, int bins_w) {
  const Eigen::Vector3d v = r_hat.zenith();
  const auto angles = viewpoint_from_direction(v / v.norm());
  GtLabels gt;
  std::tie(gt.h_bin, gt.w_bin) = bins_of_angles(angles, bins_h, bins_w);
  gt.y_phi.assign(static_cast<size_t>(bins_w), 0);
  gt.y_theta.assign(static_cast<size_t>(bins_h), 0);
  gt.y_phi[static_cast<size_t>(gt.w_bin)] = 1;
  gt.y_theta[static_cast<size_t>(gt.h_bin)] = 1;
  return gt;
}

double rotation_loss(const Rotation& r, const Rotation& r_hat) {
  return (r.matrix() - r_hat.matrix()).norm();
}

double cosine_lr(double lr0, int iter, int total_iters) {
  return 0.5 * lr0 *
         (1.0 + std::cos(M_PI * static_cast<double>(iter) /
                         static_cast<double>(total_iters)));
}

// ---- synthetic data -----------------------------------------------------

namespace {

// Surface sampler for the template: box + cone + sphere cap, offset along
// the three axes so the union has no rotational or reflective symmetry.
struct TemplateGeometry {
  // box half extents and center
  Eigen::Vector3d box_half{0.30, 0.18, 0.12};
  Eigen::Vector3d box_center{0.35, 0.0, 0.0};
  // cone along +y: base disk at y0 with radius r0, apex at y1
  double cone_r0 = 0.16, cone_y0 = 0.15, cone_y1 = 0.55;
  // sphere cap: radius, center, polar opening angle
  double cap_r = 0.22, cap_alpha = 2.2;
  Eigen::Vector3d cap_center{0.0, 0.0, 0.40};

  double box_area() const {
    const auto& h = box_half;
    return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.z() * h.x());
  }
  double cone_area() const {
    const double h = cone_y1 - cone_y0;
    return M_PI * cone_r0 * std::sqrt(cone_r0 * cone_r0 + h * h) +
           M_PI * cone_r0 * cone_r0;
  }
  double cap_area() const {
    return 2.0 * M_PI * cap_r * cap_r * (1.0 - std::cos(cap_alpha));
  }

  Eigen::Vector3d sample_box(RngStream& rng) const {
    const auto& h = box_half;
    const double ax = h.y() * h.z(), ay = h.z() * h.x(), az = h.x() * h.y();
    const double pick = rng.uniform(0.0, ax + ay + az);
    const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    Eigen::Vector3d p;
    if (pick < ax) {
      p = {sgn * h.x(), u * h.y(), v * h.z()};
    } else if (pick < ax + ay) {
      p = {u * h.x(), sgn * h.y(), v * h.z()};
    } else {
      p = {u * h.x(), v * h.y(), sgn * h.z()};
    }
    return p + box_center;
  }

  Eigen::Vector3d sample_cone(RngStream& rng) const {
    const double lateral = M_PI * cone_r0 *
                           std::sqrt(cone_r0 * cone_r0 +
                                     (cone_y1 - cone_y0) * (cone_y1 - cone_y0));
    const double base = M_PI * cone_r0 * cone_r0;
    const double psi = rng.uniform(0.0, 2.0 * M_PI);
    if (rng.uniform(0.0, lateral + base) < lateral) {
      // area density grows linearly from apex: t = sqrt(u)
      const double t = std::sqrt(rng.uniform());
      const double rad = cone_r0 * t;
      const double y = cone_y1 - (cone_y1 - cone_y0) * t;
      return {rad * std::cos(psi), y, rad * std::sin(psi)};
    }
    const double rad = cone_r0 * std::sqrt(rng.uniform());
    return {rad * std::cos(psi), cone_y0, rad * std::sin(psi)};
  }

  Eigen::Vector3d sample_cap(RngStream& rng) const {
    // uniform over the cap: z uniform in [cos(alpha), 1]
    const double z = rng.uniform(std::cos(cap_alpha), 1.0);
    const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double psi = rng.uniform(0.0, 2.0 * M_PI);
    return cap_center +
           cap_r * Eigen::Vector3d(rad * std::cos(psi), rad * std::sin(psi), z);
  }
};

// smooth rotation-invariant pseudo-color from the canonical position
Eigen::Vector3d pseudo_color(const Eigen::Vector3d& p) {
  return {0.5 + 0.5 * std::sin(4.1 * p.x() + 0.7),
          0.5 + 0.5 * std::sin(3.3 * p.y() + 1.9),
          0.5 + 0.5 * std::sin(5.7 * p.z() + 0.3)};
}

}  // namespace

PointCloud template_cloud(const ShapeParams& shape) {
  if (shape.point_count < 1) {
    throw std::invalid_argument("template_cloud: need at least one point");
  }
  const TemplateGeometry geom;
  // fixed template stream: identical across dataset seeds
  RngStream rng = named_stream(0x76e1a5u ^ static_cast<std::uint64_t>(shape.point_count),
                               "template");

  const double areas[3] = {geom.box_area(), geom.cone_area(), geom.cap_area()};
  const double total = areas[0] + areas[1] + areas[2];
  const int n = shape.point_count;
  int counts[3];
  counts[0] = static_cast<int>(std::floor(areas[0] / total * n));
  counts[1] = static_cast<int>(std::floor(areas[1] / total * n));
  counts[2] = n - counts[0] - counts[1];

  PointMatrix pts(n, 3);
  int row = 0;
  for (int i = 0; i < counts[0]; ++i) pts.row(row++) = geom.sample_box(rng);
  for (int i = 0; i < counts[1]; ++i) pts.row(row++) = geom.sample_cone(rng);
  for (int i = 0; i < counts[2]; ++i) pts.row(row++) = geom.sample_cap(rng);

  // center on the centroid, scale by the bounding-box diagonal length
  const Eigen::Vector3d centroid = pts.colwise().mean();
  const Eigen::Vector3d extent =
      pts.colwise().maxCoeff() - pts.colwise().minCoeff();
  PointCloud cloud;
  cloud.points = normalize_cloud(pts, centroid, extent);

  AttributeStream color{"color", 3, {}};
  color.values.reserve(static_cast<size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d c = pseudo_color(cloud.points.row(i));
    color.values.push_back(c.x());
    color.values.push_back(c.y());
    color.values.push_back(c.z());
  }
  cloud.streams.push_back({"radial", 1, radial_distance_stream(cloud)});
  cloud.streams.push_back(std::move(color));
  return cloud;
}

std::vector<Sample> synth_dataset(std::uint64_t seed, int count,
                                  const ShapeParams& shape) {
  if (count < 1) throw std::invalid_argument("synth_dataset: count must be >= 1");
  const PointCloud canon = template_cloud(shape);
  RngStream data = named_stream(seed, "data");
  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Rotation r_hat{data.random_rotation()};
    Sample s;
    s.id = static_cast<std::uint64_t>(i);
    s.gt_rotation = r_hat;
    s.cloud.points = canon.points * r_hat.matrix().transpose();  // row-major p R^T
    s.cloud.streams = canon.streams;  // radial distance and color carry over
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> manifest;
  manifest.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    write_vipc((fs::path(dir) / sample_file_name(s.id)).string(), s.cloud);
    manifest.push_back({i, s.id, s.gt_rotation.matrix()});
  }
  write_manifest((fs::path(dir) / "manifest.txt").string(), manifest);
}

std::vector<Sample> read_dataset(const std::string& dir) {
  const auto manifest = read_manifest((fs::path(dir) / "manifest.txt").string());
  std::vector<Sample> samples;
  samples.reserve(manifest.size());
  for (const auto& e : manifest) {
    Sample s;
    s.id = e.id;
    s.gt_rotation = Rotation(e.rotation);
    s.cloud = read_vipc((fs::path(dir) / sample_file_name(e.id)).string());
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---- config --------------------------------------------------------------

void TrainConfig::validate() const {
  arch.validate();
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (!(focal.alpha > 0.0 && focal.alpha <= 1.0)) {
    throw std::invalid_argument("focal alpha must be in (0, 1]");
  }
  if (focal.gamma < 0.0) throw std::invalid_argument("focal gamma must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (precision != "f32" && precision != "f64") {
    throw std::invalid_argument("precision must be f32 or f64");
  }
}

TrainConfig TrainConfig::from_keyvalues(const KeyValues& kv) {
  TrainConfig cfg;
  cfg.arch.apply_overrides(kv);
  cfg.iterations = static_cast<int>(kv.get_int("iterations", cfg.iterations));
  cfg.batch = static_cast<int>(kv.get_int("batch", cfg.batch));
  cfg.lr = kv.get_double("lr", cfg.lr);
  cfg.lambda = kv.get_double("lambda", cfg.lambda);
  cfg.focal.alpha = kv.get_double("alpha", cfg.focal.alpha);
  cfg.focal.gamma = kv.get_double("gamma", cfg.focal.gamma);
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  cfg.eval_every = static_cast<int>(kv.get_int("eval_every", cfg.eval_every));
  cfg.precision = kv.get_str("precision", cfg.precision);
  cfg.validate();
  return cfg;
}

KeyValues TrainConfig::to_keyvalues() const {
  KeyValues kv = arch.to_keyvalues();
  kv.set_int("iterations", iterations);
  kv.set_int("batch", batch);
  kv.set_double("lr", lr);
  kv.set_double("lambda", lambda);
  kv.set_double("alpha", focal.alpha);
  kv.set_double("gamma", focal.gamma);
  kv.set_int("seed", static_cast<std::int64_t>(seed));
  kv.set_int("eval_every", eval_every);
  kv.set("precision", precision);
  return kv;
}

// ---- train / evaluate ------------------------------------------------

namespace {

struct PreparedSample {
  std::vector<SphericalMap> maps;
  Rotation gt;
  GtLabels labels;
  int gt_h = 0, gt_w = 0;
};

std::vector<PreparedSample> prepare_samples(const std::vector<Sample>& samples,
                                            const FpnConfig& arch) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PreparedSample p;
    p.maps.reserve(arch.streams.size());
    for (const auto& stream : arch.streams) {
      p.maps.push_back(to_spherical_map(s.cloud, stream.name, arch.input_height,
                                        arch.input_width));
    }
    p.gt = s.gt_rotation;
    p.labels = make_gt_labels(s.gt_rotation, arch.out_height(), arch.out_width());
    p.gt_h = p.labels.h_bin;
    p.gt_w = p.labels.w_bin;
    out.push_back(std::move(p));
  }
  return out;
}

template <typename Fn>
void parallel_for(int n, int threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        int i;
        while ((i = next.fetch_add(1)) < n) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cyclic_bin_distance(int a, int b, int n) {
  int d = std::abs(a - b) % n;
  return std::min(d, n - d);
}

template <typename T>
Metrics evaluate_prepared(const ViNetModel<T>& model,
                          const std::vector<PreparedSample>& samples,
                          int threads) {
  const int H = model.config().out_height(), W = model.config().out_width();
  struct Row {
    double deg = 0.0;
    bool phi_top1 = false, theta_top1 = false;
    bool phi_within1 = false, theta_within1 = false;
  };
  std::vector<Row> rows(samples.size());
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    const auto& s = samples[static_cast<size_t>(i)];
    Graph<T> g;
    FwdCtx<T> ctx(g, /*grads=*/false);
    const auto out = model.forward(ctx, s.maps);
    Row r;
    r.deg = geodesic_degrees(out.rotation_value, s.gt);
    int ph, pw;
    if (out.w_max >= 0) {
      ph = out.h_max;
      pw = out.w_max;
    } else {
      // direct head: derive bins from the predicted zenith direction
      const Eigen::Vector3d v = out.rotation_value.zenith();
      std::tie(ph, pw) = bins_of_angles(viewpoint_from_direction(v / v.norm()), H, W);
    }
    r.phi_top1 = pw == s.gt_w;
    r.theta_top1 = ph == s.gt_h;
    r.phi_within1 = cyclic_bin_distance(pw, s.gt_w, W) <= 1;
    r.theta_within1 = std::abs(ph - s.gt_h) <= 1;
    rows[static_cast<size_t>(i)] = r;
  });

  Metrics m;
  m.count = samples.size();
  std::vector<double> degs;
  degs.reserve(rows.size());
  for (const auto& r : rows) {
    degs.push_back(r.deg);
    m.mean_deg += r.deg;
    m.acc5 += r.deg < 5.0;
    m.acc10 += r.deg < 10.0;
    m.acc15 += r.deg < 15.0;
    m.phi_top1 += r.phi_top1;
    m.theta_top1 += r.theta_top1;
    m.phi_within1 += r.phi_within1;
    m.theta_within1 += r.theta_within1;
  }
  const double n = std::max<double>(1.0, static_cast<double>(m.count));
  m.mean_deg /= n;
  m.acc5 /= n;
  m.acc10 /= n;
  m.acc15 /= n;
  m.phi_top1 /= n;
  m.theta_top1 /= n;
  m.phi_within1 /= n;
  m.theta_within1 /= n;
  m.median_deg = median_of(std::move(degs));
  return m;
}

template <typename T>
Metrics train_impl(const TrainConfig& cfg, const std::vector<Sample>& train_data,
                   const std::vector<Sample>* eval_data,
                   const std::string& checkpoint_path,
                   const std::string& log_csv_path, int threads,
                   const ProgressFn& progress) {
  if (train_data.empty()) {
    throw std::invalid_argument("train: empty training set");
  }
  ViNetModel<T> model(cfg.arch);
  model.initialize(cfg.seed);

  const auto prepared = prepare_samples(train_data, cfg.arch);
  std::vector<PreparedSample> eval_prepared;
  if (eval_data) eval_prepared = prepare_samples(*eval_data, cfg.arch);

  std::ofstream csv;
  if (!log_csv_path.empty()) {
    csv.open(log_csv_path);
    if (!csv) throw FileError("cannot open log '" + log_csv_path + "'");
    csv << "iter,loss,loss_vp,loss_ip,lr,median_deg\n";
  }

  RngStream shuffle = named_stream(cfg.seed, "shuffle");
  std::vector<int> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle before the first batch

  const auto& plist = model.params().all();
  Adam<T> opt(plist);

  struct Slot {
    std::vector<std::vector<T>> grads;
    double total = 0.0, lvp = 0.0, lip = 0.0;
  };
  std::vector<Slot> slots(static_cast<size_t>(cfg.batch));
  std::vector<std::vector<T>> accum(plist.size());
  for (size_t i = 0; i < plist.size(); ++i) {
    accum[i].assign(static_cast<size_t>(plist[i]->count()), T(0));
  }

  double last_median = std::nan("");
  std::vector<int> batch_idx(static_cast<size_t>(cfg.batch));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
        }
        cursor = 0;
      }
      batch_idx[static_cast<size_t>(b)] = order[cursor++];
    }
    const double lr = cosine_lr(cfg.lr, iter, cfg.iterations);

    parallel_for(cfg.batch, threads, [&](int b) {
      const int sample_id = batch_idx[static_cast<size_t>(b)];
      const PreparedSample& s = prepared[static_cast<size_t>(sample_id)];
      Slot& slot = slots[static_cast<size_t>(b)];
      try {
        Graph<T> g;
        FwdCtx<T> ctx(g);
        const auto out = model.forward(ctx, s.maps);
        const auto loss =
            build_loss(g, out, s.gt, s.labels, cfg.focal, cfg.lambda);
        const Tensor<T> scaled =
            g.scale(loss.total, T(1) / static_cast<T>(cfg.batch));
        g.backward(scaled);
        slot.total = static_cast<double>(loss.total.scalar());
        slot.lvp = static_cast<double>(loss.l_vp.scalar());
        slot.lip = static_cast<double>(loss.l_ip.scalar());
        slot.grads.resize(plist.size());
        for (size_t i = 0; i < plist.size(); ++i) {
          const auto gr = ctx.grad_of(plist[i]);
          slot.grads[i].assign(gr.begin(), gr.end());
        }
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << e.what() << " (iteration " << iter + 1 << ", batch sample id "
           << sample_id << ")";
        throw NumericError(os.str());
      }
    });

    // fixed sample-order reduction keeps results thread-count invariant
    for (auto& a : accum) std::fill(a.begin(), a.end(), T(0));
    double mean_total = 0.0, mean_vp = 0.0, mean_ip = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const Slot& slot = slots[static_cast<size_t>(b)];
      mean_total += slot.total;
      mean_vp += slot.lvp;
      mean_ip += slot.lip;
      for (size_t i = 0; i < plist.size(); ++i) {
        if (slot.grads[i].empty()) continue;
        T* dst = accum[i].data();
        const T* src = slot.grads[i].data();
        for (size_t j = 0; j < accum[i].size(); ++j) dst[j] += src[j];
      }
    }
    mean_total /= cfg.batch;
    mean_vp /= cfg.batch;
    mean_ip /= cfg.batch;
    if (!std::isfinite(mean_total)) {
      std::ostringstream os;
      os << "train: non-finite loss at iteration " << iter + 1 << " (batch ids";
      for (int b = 0; b < cfg.batch; ++b) os << ' ' << batch_idx[static_cast<size_t>(b)];
      os << ')';
      throw NumericError(os.str());
    }

    opt.step(lr, accum);

    if (!eval_prepared.empty() && ((iter + 1) % cfg.eval_every == 0)) {
      last_median = evaluate_prepared(model, eval_prepared, threads).median_deg;
    }

    if (csv.is_open()) {
      char line[256];
      std::snprintf(line, sizeof(line), "%d,%.9e,%.9e,%.9e,%.9e,%.6f\n", iter + 1,
                    mean_total, mean_vp, mean_ip, lr, last_median);
      csv << line;
    }
    if (progress) {
      progress(iter + 1, cfg.iterations, mean_total, mean_vp, mean_ip, lr,
               last_median);
    }
  }

  Metrics final_metrics;
  if (!eval_prepared.empty()) {
    final_metrics = evaluate_prepared(model, eval_prepared, threads);
  }
  if (!checkpoint_path.empty()) {
    write_checkpoint(checkpoint_path, model.to_checkpoint());
  }
  if (csv.is_open()) {
    csv.close();
    if (!csv) throw FileError("error while writing '" + log_csv_path + "'");
  }
  return final_metrics;
}

}  // namespace

Metrics train(const TrainConfig& cfg, const std::vector<Sample>& train_data,
              const std::vector<Sample>* eval_data,
              const std::string& checkpoint_path, const std::string& log_csv_path,
              int threads, const ProgressFn& progress) {
  cfg.validate();
  if (cfg.precision == "f64") {
    return train_impl<double>(cfg, train_data, eval_data, checkpoint_path,
                              log_csv_path, threads, progress);
  }
  return train_impl<float>(cfg, train_data, eval_data, checkpoint_path,
                           log_csv_path, threads, progress);
}

template <typename T>
Metrics evaluate_model(const ViNetModel<T>& model,
                       const std::vector<Sample>& samples, int threads) {
  return evaluate_prepared(model, prepare_samples(samples, model.config()),
                           threads);
}

template Metrics evaluate_model<float>(const ViNetModel<float>&,
                                       const std::vector<Sample>&, int);
template Metrics evaluate_model<double>(const ViNetModel<double>&,
                                        const std::vector<Sample>&, int);

Metrics evaluate_checkpoint(const std::string& checkpoint_path,
                            const std::vector<Sample>& samples, int threads) {
  const auto entries = read_checkpoint(checkpoint_path);
  ViNetModel<float> model(config_from_checkpoint(entries));
  model.load_checkpoint(entries);
  return evaluate_model(model, samples, threads);
}

Metrics evaluate_fresh_model(const FpnConfig& arch, std::uint64_t seed,
                             const std::vector<Sample>& samples, int threads) {
  ViNetModel<float> model(arch);
  model.initialize(seed);
  return evaluate_model(model, samples, threads);
}

}  // namespace vinet
