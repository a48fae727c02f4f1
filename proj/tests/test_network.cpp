#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vinet/checks.hpp"
#include "vinet/network.hpp"
#include "vinet/rng.hpp"

using namespace vinet;

namespace {

std::vector<SphericalMap> random_maps(const FpnConfig& cfg, RngStream& rng) {
  std::vector<SphericalMap> maps;
  for (const auto& s : cfg.streams) {
    SphericalMap m(s.channels, cfg.input_height, cfg.input_width);
    for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(FpnConfig::tiny().validate());
  CHECK_NOTHROW(FpnConfig::paper().validate());
  CHECK_NOTHROW(FpnConfig::micro().validate());

  FpnConfig bad = FpnConfig::tiny();
  bad.input_width = 24;  // not a multiple of 16
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = FpnConfig::tiny();
  bad.streams.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = FpnConfig::tiny();
  bad.knn = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = FpnConfig::micro();
  bad.ib_blocks = 3;  // would end at 1x1
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("config text round-trip") {
  FpnConfig cfg = FpnConfig::tiny();
  cfg.input_height = 32;
  cfg.input_width = 32;
  cfg.knn = 5;
  cfg.direct_head = true;
  const auto kv = cfg.to_keyvalues();
  const FpnConfig back = FpnConfig::from_keyvalues(KeyValues::parse(kv.str()));
  CHECK(back.stage_widths == cfg.stage_widths);
  CHECK(back.fpn_channels == cfg.fpn_channels);
  CHECK(back.input_height == 32);
  CHECK(back.knn == 5);
  CHECK(back.direct_head);
  REQUIRE(back.streams.size() == cfg.streams.size());
  CHECK(back.streams[1].name == "color");
  CHECK(back.streams[1].channels == 3);
}

TEST_CASE("fpn output resolution is half the input") {
  FpnConfig cfg = FpnConfig::tiny();  // 64x64 input
  ViNetModel<float> model(cfg);
  model.initialize(3);
  RngStream rng(1);
  const auto maps = random_maps(cfg, rng);
  Graph<float> g;
  FwdCtx<float> ctx(g, false);
  const auto out = model.forward(ctx, maps);
  CHECK(out.feature.shape() == Shape::of(cfg.fpn_channels, 32, 32));
}

TEST_CASE("lateral kernels see the concatenated stage widths") {
  FpnConfig cfg = FpnConfig::tiny();  // two streams, widths 16,32,64,128
  ViNetModel<float> model(cfg);
  auto* lat2 = model.params().find("fpn.lateral2.kernel");
  auto* lat4 = model.params().find("fpn.lateral4.kernel");
  REQUIRE(lat2 != nullptr);
  REQUIRE(lat4 != nullptr);
  CHECK(lat2->shape == Shape::of(cfg.fpn_channels, 64, 1, 1));    // 2*32
  CHECK(lat4->shape == Shape::of(cfg.fpn_channels, 256, 1, 1));   // 2*128
}

TEST_CASE("fpn forward is equivariant to shifts by the total stride") {
  const FpnConfig cfg = FpnConfig::micro();  // 16x16 in, 8x8 out
  ViNetModel<double> model(cfg);
  model.initialize(11);
  RngStream rng(5);
  auto maps = random_maps(cfg, rng);

  auto fpn_values = [&](const std::vector<SphericalMap>& m) {
    Graph<double> g;
    FwdCtx<double> ctx(g, false);
    const auto out = model.forward(ctx, m);
    return std::vector<double>{out.feature.values().begin(),
                               out.feature.values().end()};
  };
  const auto base = fpn_values(maps);
  const int shift = 8;  // total downsampling factor of the deepest stage
  auto shifted_in = maps;
  for (auto& m : shifted_in) {
    m.data = oracle::shift_columns(m.data, m.channels, m.height, m.width, shift);
  }
  const auto shifted_out = fpn_values(shifted_in);
  const auto expect = oracle::shift_columns(base, cfg.fpn_channels, 8, 8, shift / 2);
  CHECK(oracle::max_abs_diff(shifted_out, expect) < 1e-12);
}

TEST_CASE("v-branch argmax follows a dominant azimuth column") {
  // identity-like weights: lift passes features through, heads sum them
  const int c = 4, c_vp = 8, h = 8, w = 8;
  ParamSet<double> ps;
  VBranch<double> vb;
  vb.create(ps, c, c_vp);
  auto set = [&](const char* name, auto fill) {
    auto* p = ps.find(name);
    REQUIRE(p != nullptr);
    fill(*p);
  };
  set("vbranch.lift.fc1.weight", [&](Parameter<double>& p) {
    for (int r = 0; r < c_vp; ++r)
      for (int k = 0; k < c; ++k) p.value[static_cast<size_t>(r) * c + k] = r == k ? 1.0 : 0.0;
  });
  set("vbranch.lift.fc2.weight", [&](Parameter<double>& p) {
    for (int r = 0; r < c_vp; ++r)
      for (int k = 0; k < c_vp; ++k)
        p.value[static_cast<size_t>(r) * c_vp + k] = r == k ? 1.0 : 0.0;
  });
  for (const char* head : {"vbranch.phi", "vbranch.theta"}) {
    set((std::string(head) + ".fc1.weight").c_str(), [&](Parameter<double>& p) {
      for (int r = 0; r < c_vp; ++r)
        for (int k = 0; k < c_vp; ++k)
          p.value[static_cast<size_t>(r) * c_vp + k] = r == k ? 1.0 : 0.0;
    });
    set((std::string(head) + ".fc2.weight").c_str(), [&](Parameter<double>& p) {
      std::fill(p.value.begin(), p.value.end(), 1.0);
    });
  }

  const int dominant = 5;
  std::vector<double> feat(static_cast<size_t>(c) * h * w, 0.01);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      feat[(static_cast<size_t>(ch) * h + r) * w + dominant] = 3.0;

  Graph<double> g;
  FwdCtx<double> ctx(g, false);
  const auto out = vb.forward(ctx, g.constant(Shape::of(c, h, w), feat));
  CHECK(out.w_max == dominant);
  for (double v : out.y_phi.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("v-branch r_vp matches the decoded argmax bin") {
  const FpnConfig cfg = FpnConfig::micro();
  ViNetModel<double> model(cfg);
  model.initialize(21);
  RngStream rng(6);
  const auto maps = random_maps(cfg, rng);
  Graph<double> g;
  FwdCtx<double> ctx(g, false);
  const auto out = model.forward(ctx, maps);
  const Rotation expect = viewpoint_rotation(
      {decode_azimuth(out.w_max, cfg.out_width()),
       decode_inclination(out.h_max, cfg.out_height())});
  CHECK((out.r_vp.matrix() - expect.matrix()).cwiseAbs().maxCoeff() == 0.0);
  // third column of r_vp equals the anchor direction of the argmax bin
  const auto grid = anchor_grid(cfg.out_height(), cfg.out_width());
  const Eigen::Vector3d anchor =
      grid[static_cast<size_t>(out.h_max) * cfg.out_width() + out.w_max];
  CHECK((out.r_vp.zenith() - anchor).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("transform_features with the identity rotation is the identity map") {
  RngStream rng(7);
  const int c = 3, h = 8, w = 8;
  std::vector<double> feat(static_cast<size_t>(c) * h * w);
  for (auto& v : feat) v = rng.uniform(-1.0, 1.0);
  Graph<double> g;
  auto out = transform_features(g, g.constant(Shape::of(c, h, w), feat),
                                Rotation::identity(), 3);
  for (size_t i = 0; i < feat.size(); ++i) CHECK(out.data()[i] == feat[i]);
}

TEST_CASE("transform_features matches the exhaustive oracle") {
  RngStream rng(8);
  for (const int res : {16, 32}) {
    const int c = 2;
    std::vector<double> feat(static_cast<size_t>(c) * res * res);
    for (auto& v : feat) v = rng.uniform(-1.0, 1.0);
    const Rotation r{rng.random_rotation()};
    Graph<double> g;
    auto out = transform_features(g, g.constant(Shape::of(c, res, res), feat), r, 3);
    const auto expect = oracle::transform_features(feat, c, res, res, r.matrix(), 3);
    double worst = 0.0;
    for (size_t i = 0; i < expect.size(); ++i)
      worst = std::max(worst, std::abs(out.data()[i] - expect[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("transform_features with k=1 copies the nearest rotated anchor") {
  RngStream rng(9);
  const int c = 1, res = 8;
  std::vector<double> feat(static_cast<size_t>(res) * res);
  for (auto& v : feat) v = rng.uniform(-1.0, 1.0);
  const Rotation r{rng.random_rotation()};
  Graph<double> g;
  auto out = transform_features(g, g.constant(Shape::of(c, res, res), feat), r, 1);
  const auto expect = oracle::transform_features(feat, c, res, res, r.matrix(), 1);
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  CHECK_THROWS_AS(make_transform_plan(r, 8, 8, 65), std::invalid_argument);
}

TEST_CASE("i-branch emits a valid rotation for random weights and inputs") {
  const FpnConfig cfg = FpnConfig::micro();
  RngStream rng(10);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ViNetModel<double> model(cfg);
    model.initialize(seed);
    const auto maps = random_maps(cfg, rng);
    Graph<double> g;
    FwdCtx<double> ctx(g, false);
    const auto out = model.forward(ctx, maps);
    const Eigen::Matrix3d m = out.rotation_value.matrix();
    CHECK((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <
          1e-9);
    CHECK(std::abs(m.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("zero 6D-head weights leave the identity bias, so R equals r_vp") {
  const FpnConfig cfg = FpnConfig::micro();
  ViNetModel<double> model(cfg);
  model.initialize(33);
  // freeze the in-plane head to the identity rotation
  auto* w2 = model.params().find("ibranch.head.fc2.weight");
  REQUIRE(w2 != nullptr);
  std::fill(w2->value.begin(), w2->value.end(), 0.0);

  RngStream rng(11);
  const auto maps = random_maps(cfg, rng);
  Graph<double> g;
  FwdCtx<double> ctx(g, false);
  const auto out = model.forward(ctx, maps);
  CHECK((out.rotation_value.matrix() - out.r_vp.matrix()).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("forward passes are bit-identical across runs") {
  const FpnConfig cfg = FpnConfig::micro();
  ViNetModel<double> model(cfg);
  model.initialize(17);
  RngStream rng(12);
  const auto maps = random_maps(cfg, rng);
  auto run = [&] {
    Graph<double> g;
    FwdCtx<double> ctx(g, false);
    const auto out = model.forward(ctx, maps);
    std::vector<double> v{out.feature.values().begin(), out.feature.values().end()};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) v.push_back(out.rotation_value.matrix()(r, c));
    return v;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round-trip restores parameters bit-for-bit") {
  const FpnConfig cfg = FpnConfig::micro();
  ViNetModel<float> model(cfg);
  model.initialize(5);
  const auto entries = model.to_checkpoint();

  const FpnConfig parsed = config_from_checkpoint(entries);
  CHECK(parsed.stage_widths == cfg.stage_widths);
  CHECK(parsed.input_height == cfg.input_height);

  ViNetModel<float> other(parsed);
  other.initialize(99);  // different values, then restore
  other.load_checkpoint(entries);
  for (const auto* p : model.params().all()) {
    auto* q = other.params().find(p->name);
    REQUIRE(q != nullptr);
    CHECK(q->value == p->value);
  }

  // architecture mismatch surfaces as invalid-argument
  ViNetModel<float> wrong(FpnConfig::tiny());
  CHECK_THROWS_AS(wrong.load_checkpoint(entries), std::invalid_argument);
}

TEST_CASE("stream resolution mismatch is rejected") {
  const FpnConfig cfg = FpnConfig::micro();
  ViNetModel<double> model(cfg);
  model.initialize(1);
  std::vector<SphericalMap> maps{SphericalMap(2, 32, 32)};  // wrong resolution
  Graph<double> g;
  FwdCtx<double> ctx(g, false);
  CHECK_THROWS_AS(model.forward(ctx, maps), std::invalid_argument);
}
