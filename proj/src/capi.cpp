#include "vinet/vinet_c.h"

#include <cstring>
#include <string>

#include "vinet/checks.hpp"
#include "vinet/common.hpp"
#include "vinet/config.hpp"
#include "vinet/geometry.hpp"
#include "vinet/io.hpp"
#include "vinet/network.hpp"
#include "vinet/spa_sconv.hpp"
#include "vinet/sphermap.hpp"
#include "vinet/training.hpp"

namespace {

thread_local std::string g_last_error;

template <typename Fn>
vinet_status guarded(Fn fn) {
  try {
    fn();
    g_last_error.clear();
    return VINET_OK;
  } catch (const vinet::FileError& e) {
    g_last_error = e.what();
    return VINET_ERR_FILE;
  } catch (const vinet::FormatError& e) {
    g_last_error = e.what();
    return VINET_ERR_FORMAT;
  } catch (const vinet::NumericError& e) {
    g_last_error = e.what();
    return VINET_ERR_NUMERIC;
  } catch (const vinet::DegenerateInput& e) {
    g_last_error = e.what();
    return VINET_ERR_DEGENERATE;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return VINET_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VINET_ERR_INTERNAL;
  }
}

vinet_status require_arg(bool ok, const char* msg) {
  if (ok) return VINET_OK;
  g_last_error = msg;
  return VINET_ERR_INVALID_ARGUMENT;
}

vinet_metrics to_c(const vinet::Metrics& m) {
  vinet_metrics out;
  out.mean_deg = m.mean_deg;
  out.median_deg = m.median_deg;
  out.acc5 = m.acc5;
  out.acc10 = m.acc10;
  out.acc15 = m.acc15;
  out.phi_top1 = m.phi_top1;
  out.theta_top1 = m.theta_top1;
  out.phi_within1 = m.phi_within1;
  out.theta_within1 = m.theta_within1;
  out.count = m.count;
  return out;
}

}  // namespace

struct vinet_train_config {
  vinet::KeyValues kv;
};

extern "C" {

const char* vinet_version(void) { return "0.1.0"; }

const char* vinet_status_name(vinet_status status) {
  switch (status) {
    case VINET_OK: return "ok";
    case VINET_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case VINET_ERR_FILE: return "file-error";
    case VINET_ERR_FORMAT: return "format-error";
    case VINET_ERR_NUMERIC: return "numeric-error";
    case VINET_ERR_DEGENERATE: return "degenerate-input";
    case VINET_ERR_INTERNAL: return "internal-error";
  }
  return "unknown";
}

const char* vinet_last_error(void) { return g_last_error.c_str(); }

vinet_status vinet_decompose_rotation(const double matrix[9], double r_vp[9],
                                      double r_ip[9], double* phi,
                                      double* theta) {
  if (auto s = require_arg(matrix && r_vp && r_ip, "null pointer argument"))
    return s;
  return guarded([&] {
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = matrix[r * 3 + c];
    const vinet::Rotation rot(m);
    const auto [vp, ip] = vinet::decompose(rot);
    const auto angles =
        vinet::viewpoint_from_direction(rot.zenith() / rot.zenith().norm());
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        r_vp[r * 3 + c] = vp.matrix()(r, c);
        r_ip[r * 3 + c] = ip.matrix()(r, c);
      }
    if (phi) *phi = angles.phi;
    if (theta) *theta = angles.theta;
  });
}

vinet_status vinet_pad_index_map(uint32_t height, uint32_t width, uint32_t pad,
                                 int32_t* out) {
  if (auto s = require_arg(out != nullptr, "null output buffer")) return s;
  return guarded([&] {
    const auto map = vinet::pad_index_map(1, static_cast<int>(height),
                                          static_cast<int>(width),
                                          static_cast<int>(pad));
    std::memcpy(out, map.data(), map.size() * sizeof(int32_t));
  });
}

vinet_status vinet_generate_dataset(uint64_t seed, uint32_t count,
                                    const char* out_dir) {
  if (auto s = require_arg(out_dir != nullptr, "null output directory"))
    return s;
  return guarded([&] {
    vinet::write_dataset(out_dir,
                         vinet::synth_dataset(seed, static_cast<int>(count)));
  });
}

vinet_status vinet_convert_cloud(const char* vipc_path, const char* vism_path,
                                 uint32_t height, uint32_t width,
                                 const char* stream) {
  if (auto s = require_arg(vipc_path && vism_path && stream,
                           "null path or stream name"))
    return s;
  return guarded([&] {
    const auto cloud = vinet::read_vipc(vipc_path);
    vinet::write_vism(vism_path,
                      vinet::to_spherical_map(cloud, stream,
                                              static_cast<int>(height),
                                              static_cast<int>(width)));
  });
}

vinet_status vinet_train_config_create(vinet_train_config** out) {
  if (auto s = require_arg(out != nullptr, "null output handle")) return s;
  return guarded([&] { *out = new vinet_train_config(); });
}

vinet_status vinet_train_config_load(vinet_train_config* cfg, const char* path) {
  if (auto s = require_arg(cfg && path, "null config or path")) return s;
  return guarded([&] {
    for (const auto& [k, v] : vinet::KeyValues::load(path).items()) {
      cfg->kv.set(k, v);
    }
  });
}

vinet_status vinet_train_config_set(vinet_train_config* cfg, const char* key,
                                    const char* value) {
  if (auto s = require_arg(cfg && key && value, "null config, key or value"))
    return s;
  return guarded([&] { cfg->kv.set(key, value); });
}

void vinet_train_config_destroy(vinet_train_config* cfg) { delete cfg; }

vinet_status vinet_train_run(const vinet_train_config* cfg, const char* data_dir,
                             const char* eval_dir, const char* checkpoint_path,
                             const char* log_csv, uint32_t threads,
                             vinet_progress_fn progress, void* user,
                             vinet_metrics* final_metrics) {
  if (auto s = require_arg(cfg && data_dir && checkpoint_path,
                           "null config, data dir or checkpoint path"))
    return s;
  return guarded([&] {
    const auto train_cfg = vinet::TrainConfig::from_keyvalues(cfg->kv);
    const auto train_data = vinet::read_dataset(data_dir);
    std::vector<vinet::Sample> eval_data;
    if (eval_dir) eval_data = vinet::read_dataset(eval_dir);

    vinet::ProgressFn cb;
    if (progress) {
      cb = [progress, user](int iter, int total, double loss, double lvp,
                            double lip, double lr, double med) {
        progress(iter, total, loss, lvp, lip, lr, med, user);
      };
    }
    const auto metrics = vinet::train(
        train_cfg, train_data, eval_dir ? &eval_data : nullptr, checkpoint_path,
        log_csv ? log_csv : "", static_cast<int>(threads), cb);
    if (final_metrics) *final_metrics = to_c(metrics);
  });
}

vinet_status vinet_evaluate(const char* checkpoint_path, const char* data_dir,
                            uint32_t threads, vinet_metrics* out) {
  if (auto s = require_arg(checkpoint_path && data_dir && out,
                           "null checkpoint, data dir or output"))
    return s;
  return guarded([&] {
    *out = to_c(vinet::evaluate_checkpoint(
        checkpoint_path, vinet::read_dataset(data_dir),
        static_cast<int>(threads)));
  });
}

vinet_status vinet_gradcheck_count(uint32_t* count) {
  if (auto s = require_arg(count != nullptr, "null output")) return s;
  return guarded(
      [&] { *count = static_cast<uint32_t>(vinet::gradcheck_names().size()); });
}

vinet_status vinet_gradcheck_name(uint32_t index, char* buf, size_t buflen) {
  if (auto s = require_arg(buf && buflen > 0, "null or empty name buffer"))
    return s;
  return guarded([&] {
    const auto names = vinet::gradcheck_names();
    if (index >= names.size()) {
      throw std::invalid_argument("gradcheck index out of range");
    }
    std::snprintf(buf, buflen, "%s", names[index].c_str());
  });
}

vinet_status vinet_gradcheck_run(const char* name, double* worst_error,
                                 int* pass) {
  if (auto s = require_arg(name != nullptr, "null op name")) return s;
  return guarded([&] {
    const auto report = vinet::run_gradcheck(name);
    if (worst_error) *worst_error = report.worst_error;
    if (pass) *pass = report.pass ? 1 : 0;
  });
}

vinet_status vinet_check_equivariance(uint32_t trials, uint32_t resolution,
                                      uint64_t seed,
                                      vinet_equivariance_report* out) {
  if (auto s = require_arg(out != nullptr, "null output")) return s;
  return guarded([&] {
    const auto rep = vinet::check_equivariance(static_cast<int>(trials),
                                               static_cast<int>(resolution), seed);
    out->max_shift_error = rep.max_shift_error;
    for (size_t i = 0; i < 3 && i < rep.convergence.size(); ++i) {
      out->resolutions[i] = static_cast<uint32_t>(rep.convergence[i].first);
      out->discrepancy[i] = rep.convergence[i].second;
    }
  });
}

}  // extern "C"
