#include "vinet/network.hpp"

#include <cmath>
#include <sstream>

#include "vinet/common.hpp"

namespace vinet {

FpnConfig FpnConfig::tiny() { return FpnConfig{}; }

FpnConfig FpnConfig::paper() {
  FpnConfig cfg;
  cfg.stage_widths = {64, 128, 256, 512};
  cfg.fpn_channels = 128;
  cfg.vp_channels = 256;
  cfg.input_height = 64;
  cfg.input_width = 64;
  return cfg;
}

FpnConfig FpnConfig::micro() {
  FpnConfig cfg;
  cfg.stage_widths = {4, 4, 4, 4};
  cfg.fpn_channels = 4;
  cfg.vp_channels = 8;  // wide enough to keep argmax margins clean
  cfg.input_height = 16;  // smallest input the 4-stage encoder supports
  cfg.input_width = 16;
  cfg.ib_blocks = 2;  // 8x8 feature level: two halvings end at 2x2
  cfg.streams = {{"main", 2}};
  return cfg;
}

FpnConfig FpnConfig::profile(const std::string& name) {
  if (name == "tiny") return tiny();
  if (name == "paper") return paper();
  if (name == "micro") return micro();
  throw std::invalid_argument("unknown architecture profile '" + name + "'");
}

void FpnConfig::validate() const {
  for (int wdt : stage_widths) {
    if (wdt < 1) throw std::invalid_argument("stage widths must be positive");
  }
  if (fpn_channels < 1 || vp_channels < 1) {
    throw std::invalid_argument("channel counts must be positive");
  }
  if (input_height < 16 || input_height % 8 != 0) {
    throw std::invalid_argument(
        "input height must be a multiple of 8 and at least 16");
  }
  if (input_width < 16 || input_width % 16 != 0) {
    throw std::invalid_argument(
        "input width must be a multiple of 16 and at least 16");
  }
  if (streams.empty()) throw std::invalid_argument("at least one stream required");
  for (const auto& s : streams) {
    if (s.name.empty() || s.channels < 1) {
      throw std::invalid_argument("invalid stream spec");
    }
  }
  if (ib_blocks < 1 || out_height() % (1 << ib_blocks) != 0 ||
      out_width() % (1 << ib_blocks) != 0) {
    throw std::invalid_argument(
        "feature resolution must halve evenly through the i-branch blocks");
  }
  if ((out_height() >> ib_blocks) * (out_width() >> ib_blocks) < 2) {
    throw std::invalid_argument(
        "i-branch blocks must stop above 1x1 (standardization needs >= 2 cells)");
  }
  if (knn < 1 || knn > out_height() * out_width()) {
    throw std::invalid_argument("knn must be in [1, H*W]");
  }
}

KeyValues FpnConfig::to_keyvalues() const {
  KeyValues kv;
  std::ostringstream stages;
  for (size_t i = 0; i < stage_widths.size(); ++i) {
    stages << (i ? "," : "") << stage_widths[i];
  }
  kv.set("stages", stages.str());
  kv.set_int("fpn_channels", fpn_channels);
  kv.set_int("vp_channels", vp_channels);
  kv.set_int("input_height", input_height);
  kv.set_int("input_width", input_width);
  kv.set_int("knn", knn);
  kv.set_int("ib_blocks", ib_blocks);
  kv.set("head", direct_head ? "direct" : "vinet");
  std::ostringstream ss;
  for (size_t i = 0; i < streams.size(); ++i) {
    ss << (i ? "," : "") << streams[i].name << ':' << streams[i].channels;
  }
  kv.set("streams", ss.str());
  return kv;
}

FpnConfig FpnConfig::from_keyvalues(const KeyValues& kv) {
  FpnConfig cfg;
  cfg.apply_overrides(kv);
  return cfg;
}

void FpnConfig::apply_overrides(const KeyValues& kv) {
  if (kv.has("profile")) *this = profile(kv.get_str("profile"));
  if (kv.has("stages")) {
    const auto parts = split_csv(kv.get_str("stages"));
    if (parts.size() != 4) {
      throw FormatError("'stages' must list 4 widths, got '" + kv.get_str("stages") +
                        "'");
    }
    for (size_t i = 0; i < 4; ++i) stage_widths[i] = std::stoi(parts[i]);
  }
  fpn_channels = static_cast<int>(kv.get_int("fpn_channels", fpn_channels));
  vp_channels = static_cast<int>(kv.get_int("vp_channels", vp_channels));
  input_height = static_cast<int>(kv.get_int("input_height", input_height));
  input_width = static_cast<int>(kv.get_int("input_width", input_width));
  knn = static_cast<int>(kv.get_int("knn", knn));
  ib_blocks = static_cast<int>(kv.get_int("ib_blocks", ib_blocks));
  const std::string head = kv.get_str("head", direct_head ? "direct" : "vinet");
  if (head == "direct") {
    direct_head = true;
  } else if (head == "vinet") {
    direct_head = false;
  } else {
    throw FormatError("'head' must be vinet or direct, got '" + head + "'");
  }
  if (kv.has("streams")) {
    streams.clear();
    for (const auto& tok : split_csv(kv.get_str("streams"))) {
      const size_t colon = tok.find(':');
      if (colon == std::string::npos) {
        throw FormatError("stream spec must be name:channels, got '" + tok + "'");
      }
      streams.push_back({tok.substr(0, colon), std::stoi(tok.substr(colon + 1))});
    }
  }
  validate();
}

std::vector<Eigen::Vector3d> anchor_grid(int height, int width) {
  std::vector<Eigen::Vector3d> grid;
  grid.reserve(static_cast<size_t>(height) * width);
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      grid.push_back(direction_of_angles(
          {decode_azimuth(w, width), decode_inclination(h, height)}));
    }
  }
  return grid;
}

std::shared_ptr<const GatherPlan> make_transform_plan(const Rotation& r_vp,
                                                      int height, int width,
                                                      int k) {
  const int cells = height * width;
  if (k < 1 || k > cells) {
    throw std::invalid_argument("make_transform_plan: k must be in [1, H*W]");
  }
  const auto anchors = anchor_grid(height, width);
  const Eigen::Matrix3d rt = r_vp.matrix().transpose();
  std::vector<Eigen::Vector3d> rotated(anchors.size());
  for (size_t i = 0; i < anchors.size(); ++i) rotated[i] = rt * anchors[i];

  auto plan = std::make_shared<GatherPlan>();
  plan->neighbors = k;
  plan->cells = cells;
  plan->index.resize(static_cast<size_t>(cells) * k);
  plan->weight.resize(static_cast<size_t>(cells) * k);

  std::vector<double> near_d(static_cast<size_t>(k));
  std::vector<int> near_i(static_cast<size_t>(k));
  for (int j = 0; j < cells; ++j) {
    int filled = 0;
    for (int i = 0; i < cells; ++i) {
      const double d2 = (anchors[static_cast<size_t>(j)] - rotated[static_cast<size_t>(i)])
                            .squaredNorm();
      // insertion by (distance, index); ties keep the lower index
      int pos = filled;
      while (pos > 0 && d2 < near_d[static_cast<size_t>(pos - 1)]) --pos;
      if (pos >= k) continue;
      if (filled < k) ++filled;
      for (int q = filled - 1; q > pos; --q) {
        near_d[static_cast<size_t>(q)] = near_d[static_cast<size_t>(q - 1)];
        near_i[static_cast<size_t>(q)] = near_i[static_cast<size_t>(q - 1)];
      }
      near_d[static_cast<size_t>(pos)] = d2;
      near_i[static_cast<size_t>(pos)] = i;
    }
    double* wrow = plan->weight.data() + static_cast<size_t>(j) * k;
    std::int32_t* irow = plan->index.data() + static_cast<size_t>(j) * k;
    if (near_d[0] < 1e-18) {  // epsilon guard: verbatim copy of the nearest
      for (int q = 0; q < k; ++q) {
        irow[q] = near_i[0];
        wrow[q] = q == 0 ? 1.0 : 0.0;
      }
    } else {
      double total = 0.0;
      for (int q = 0; q < k; ++q) total += 1.0 / near_d[static_cast<size_t>(q)];
      for (int q = 0; q < k; ++q) {
        irow[q] = near_i[static_cast<size_t>(q)];
        wrow[q] = (1.0 / near_d[static_cast<size_t>(q)]) / total;
      }
    }
  }
  return plan;
}

FpnConfig config_from_checkpoint(const std::vector<CheckpointEntry>& entries) {
  for (const auto& e : entries) {
    if (e.name != "__arch__") continue;
    std::string text;
    text.reserve(e.values.size());
    for (float v : e.values) text.push_back(static_cast<char>(v));
    return FpnConfig::from_keyvalues(KeyValues::parse(text));
  }
  throw FormatError("checkpoint has no __arch__ entry");
}

}  // namespace vinet
