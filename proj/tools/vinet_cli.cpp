// Command-line front end. Functionality lives behind the C API of the
// vinet shared library; this tool only parses arguments, forwards calls
// and renders results.

#include <CLI11.hpp>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vinet/vinet_c.h"

namespace {

constexpr int kExitUsage = 64;

int exit_code_for(vinet_status status) {
  switch (status) {
    case VINET_OK: return 0;
    case VINET_ERR_FILE: return 2;
    case VINET_ERR_FORMAT: return 3;
    case VINET_ERR_NUMERIC: return 4;
    case VINET_ERR_DEGENERATE: return 4;
    case VINET_ERR_INVALID_ARGUMENT: return kExitUsage;
    case VINET_ERR_INTERNAL: return 1;
  }
  return 1;
}

int fail(vinet_status status) {
  std::fprintf(stderr, "error (%s): %s\n", vinet_status_name(status),
               vinet_last_error());
  return exit_code_for(status);
}

void print_matrix(const char* name, const double m[9]) {
  std::printf("%s:\n", name);
  for (int r = 0; r < 3; ++r) {
    std::printf("  % .12f % .12f % .12f\n", m[r * 3], m[r * 3 + 1], m[r * 3 + 2]);
  }
}

// cells render as letters when the source grid fits the alphabet,
// otherwise as r,c pairs
std::string cell_label(int flat, int width, bool letters) {
  if (letters) return std::string(1, static_cast<char>('a' + flat));
  std::ostringstream os;
  os << flat / width << ',' << flat % width;
  return os.str();
}

void print_metrics(std::FILE* out, const vinet_metrics& m) {
  std::fprintf(out, "samples          %" PRIu64 "\n", m.count);
  std::fprintf(out, "mean_deg         %.4f\n", m.mean_deg);
  std::fprintf(out, "median_deg       %.4f\n", m.median_deg);
  std::fprintf(out, "acc_5deg         %.4f\n", m.acc5);
  std::fprintf(out, "acc_10deg        %.4f\n", m.acc10);
  std::fprintf(out, "acc_15deg        %.4f\n", m.acc15);
  std::fprintf(out, "phi_top1         %.4f\n", m.phi_top1);
  std::fprintf(out, "theta_top1       %.4f\n", m.theta_top1);
  std::fprintf(out, "phi_within1      %.4f\n", m.phi_within1);
  std::fprintf(out, "theta_within1    %.4f\n", m.theta_within1);
}

struct TrainProgressState {
  int last_printed = 0;
};

void train_progress(int iter, int total, double loss, double loss_vp,
                    double loss_ip, double lr, double median, void* user) {
  auto* state = static_cast<TrainProgressState*>(user);
  const int stride = total >= 500 ? 50 : 10;
  if (iter % stride != 0 && iter != total) return;
  state->last_printed = iter;
  if (median == median) {  // have a held-out median already
    std::printf("iter %6d/%d  loss %.5f  vp %.5f  ip %.5f  lr %.6f  median %.2f\n",
                iter, total, loss, loss_vp, loss_ip, lr, median);
  } else {
    std::printf("iter %6d/%d  loss %.5f  vp %.5f  ip %.5f  lr %.6f\n", iter,
                total, loss, loss_vp, loss_ip, lr);
  }
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoupled rotation estimation on spherical representations"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::uint64_t gen_seed = 0;
  std::uint32_t gen_count = 100;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--count", gen_count, "number of samples")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  // convert
  auto* convert = app.add_subcommand("convert", "point cloud to spherical map");
  std::string conv_in, conv_out, conv_stream = "radial";
  std::uint32_t conv_h = 64, conv_w = 64;
  convert->add_option("--in", conv_in, "input VIPC file")->required();
  convert->add_option("--out", conv_out, "output VISM file")->required();
  convert->add_option("--height", conv_h, "inclination bins");
  convert->add_option("--width", conv_w, "azimuth bins");
  convert->add_option("--stream", conv_stream, "attribute stream name");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_data, train_cfg_path, train_ckpt, train_log, train_eval;
  std::uint32_t train_threads = 1;
  std::int64_t train_seed = -1;
  train->add_option("--data", train_data, "training dataset directory")->required();
  train->add_option("--config", train_cfg_path, "key=value config file");
  train->add_option("--out-checkpoint", train_ckpt, "checkpoint path")->required();
  train->add_option("--log", train_log, "metric CSV path");
  train->add_option("--eval-data", train_eval, "held-out dataset directory");
  train->add_option("--threads", train_threads, "worker threads");
  train->add_option("--seed", train_seed, "override the config seed");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_report;
  std::uint32_t eval_threads = 1;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--report", eval_report, "write the metric report here");
  eval->add_option("--threads", eval_threads, "worker threads");

  // check-equivariance
  auto* equi = app.add_subcommand("check-equivariance",
                                  "shift equivariance and resampling convergence");
  std::uint32_t equi_trials = 50, equi_res = 16;
  std::uint64_t equi_seed = 0;
  equi->add_option("--trials", equi_trials, "random input/kernel pairs");
  equi->add_option("--resolution", equi_res, "map resolution for the shift test");
  equi->add_option("--seed", equi_seed, "master seed");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string grad_ops = "all";
  grad->add_option("--ops", grad_ops, "'all' or one op name");

  // pad-demo
  auto* pad = app.add_subcommand("pad-demo", "show the spherical padding layout");
  std::uint32_t pad_h = 2, pad_w = 2, pad_p = 1;
  pad->add_option("--height", pad_h, "source rows");
  pad->add_option("--width", pad_w, "source columns (even)");
  pad->add_option("--pad", pad_p, "pad width");

  // decompose
  auto* dec = app.add_subcommand("decompose", "factor R into R_vp * R_ip");
  std::string dec_rotation;
  dec->add_option("--rotation", dec_rotation, "9 reals, row-major")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (gen->parsed()) {
    const auto s = vinet_generate_dataset(gen_seed, gen_count, gen_out.c_str());
    if (s != VINET_OK) return fail(s);
    std::printf("wrote %u samples to %s\n", gen_count, gen_out.c_str());
    return 0;
  }

  if (convert->parsed()) {
    const auto s = vinet_convert_cloud(conv_in.c_str(), conv_out.c_str(), conv_h,
                                       conv_w, conv_stream.c_str());
    if (s != VINET_OK) return fail(s);
    std::printf("wrote %s (%ux%u, stream %s)\n", conv_out.c_str(), conv_h,
                conv_w, conv_stream.c_str());
    return 0;
  }

  if (train->parsed()) {
    vinet_train_config* cfg = nullptr;
    auto s = vinet_train_config_create(&cfg);
    if (s != VINET_OK) return fail(s);
    if (!train_cfg_path.empty()) {
      s = vinet_train_config_load(cfg, train_cfg_path.c_str());
      if (s != VINET_OK) {
        vinet_train_config_destroy(cfg);
        return fail(s);
      }
    }
    if (train_seed >= 0) {
      vinet_train_config_set(cfg, "seed", std::to_string(train_seed).c_str());
    }
    TrainProgressState state;
    vinet_metrics metrics{};
    s = vinet_train_run(cfg, train_data.c_str(),
                        train_eval.empty() ? nullptr : train_eval.c_str(),
                        train_ckpt.c_str(),
                        train_log.empty() ? nullptr : train_log.c_str(),
                        train_threads, train_progress, &state, &metrics);
    vinet_train_config_destroy(cfg);
    if (s != VINET_OK) return fail(s);
    std::printf("checkpoint written to %s\n", train_ckpt.c_str());
    if (metrics.count > 0) {
      std::printf("held-out metrics:\n");
      print_metrics(stdout, metrics);
    }
    return 0;
  }

  if (eval->parsed()) {
    vinet_metrics metrics{};
    const auto s = vinet_evaluate(eval_ckpt.c_str(), eval_data.c_str(),
                                  eval_threads, &metrics);
    if (s != VINET_OK) return fail(s);
    print_metrics(stdout, metrics);
    if (!eval_report.empty()) {
      std::FILE* f = std::fopen(eval_report.c_str(), "w");
      if (!f) {
        std::fprintf(stderr, "error: cannot write report '%s'\n",
                     eval_report.c_str());
        return 2;
      }
      print_metrics(f, metrics);
      std::fclose(f);
    }
    return 0;
  }

  if (equi->parsed()) {
    vinet_equivariance_report rep{};
    const auto s = vinet_check_equivariance(equi_trials, equi_res, equi_seed, &rep);
    if (s != VINET_OK) return fail(s);
    std::printf("max shift-equivariance error: %.3e\n", rep.max_shift_error);
    std::printf("resampling convergence (mean relative discrepancy):\n");
    std::printf("  %-10s %s\n", "resolution", "discrepancy");
    for (int i = 0; i < 3; ++i) {
      std::printf("  %-10u %.6f\n", rep.resolutions[i], rep.discrepancy[i]);
    }
    return 0;
  }

  if (grad->parsed()) {
    std::vector<std::string> names;
    if (grad_ops == "all") {
      std::uint32_t count = 0;
      if (auto s = vinet_gradcheck_count(&count); s != VINET_OK) return fail(s);
      for (std::uint32_t i = 0; i < count; ++i) {
        char buf[128];
        if (auto s = vinet_gradcheck_name(i, buf, sizeof(buf)); s != VINET_OK)
          return fail(s);
        names.emplace_back(buf);
      }
    } else {
      names.push_back(grad_ops);
    }
    bool all_pass = true;
    for (const auto& name : names) {
      double worst = 0.0;
      int pass = 0;
      const auto s = vinet_gradcheck_run(name.c_str(), &worst, &pass);
      if (s != VINET_OK) return fail(s);
      std::printf("%-22s worst relative error %.3e  %s\n", name.c_str(), worst,
                  pass ? "ok" : "FAIL");
      std::fflush(stdout);
      all_pass = all_pass && pass;
    }
    return all_pass ? 0 : 4;
  }

  if (pad->parsed()) {
    if (pad_w % 2 != 0 || pad_p >= pad_h || pad_p > pad_w / 2) {
      std::fprintf(stderr,
                   "error: pad-demo needs even width, pad < height and "
                   "pad <= width/2\n");
      return kExitUsage;
    }
    const std::uint32_t hp = pad_h + 2 * pad_p, wp = pad_w + 2 * pad_p;
    std::vector<int32_t> map(static_cast<size_t>(hp) * wp);
    const auto s = vinet_pad_index_map(pad_h, pad_w, pad_p, map.data());
    if (s != VINET_OK) return fail(s);
    const bool letters = pad_h * pad_w <= 26;
    std::printf("source %ux%u:\n", pad_h, pad_w);
    for (std::uint32_t r = 0; r < pad_h; ++r) {
      for (std::uint32_t c = 0; c < pad_w; ++c) {
        std::printf("%s%s", c ? " " : "",
                    cell_label(static_cast<int>(r * pad_w + c),
                               static_cast<int>(pad_w), letters)
                        .c_str());
      }
      std::printf("\n");
    }
    std::printf("padded %ux%u (P=%u):\n", hp, wp, pad_p);
    for (std::uint32_t r = 0; r < hp; ++r) {
      for (std::uint32_t c = 0; c < wp; ++c) {
        std::printf("%s%s", c ? " " : "",
                    cell_label(map[r * wp + c], static_cast<int>(pad_w), letters)
                        .c_str());
      }
      std::printf("\n");
    }
    return 0;
  }

  if (dec->parsed()) {
    double m[9];
    std::istringstream is(dec_rotation);
    for (double& v : m) {
      if (!(is >> v)) {
        std::fprintf(stderr, "error: --rotation needs 9 reals, got '%s'\n",
                     dec_rotation.c_str());
        return kExitUsage;
      }
    }
    double r_vp[9], r_ip[9], phi = 0, theta = 0;
    const auto s = vinet_decompose_rotation(m, r_vp, r_ip, &phi, &theta);
    if (s != VINET_OK) return fail(s);
    std::printf("phi=%.12f theta=%.12f\n", phi, theta);
    print_matrix("R_vp", r_vp);
    print_matrix("R_ip", r_ip);
    return 0;
  }

  return kExitUsage;
}
