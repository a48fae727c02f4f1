#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vinet/common.hpp"
#include "vinet/io.hpp"
#include "vinet/rng.hpp"

using namespace vinet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("vinet_io_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

TEST_CASE("VIPC round-trip") {
  TempDir tmp;
  RngStream rng(1);
  PointCloud cloud;
  cloud.points.resize(10, 3);
  for (int i = 0; i < 10; ++i)
    cloud.points.row(i) = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                          rng.uniform(-1, 1));
  cloud.streams.push_back({"radial", 1, std::vector<double>(10, 0.5)});
  AttributeStream color{"color", 3, std::vector<double>(30)};
  for (auto& v : color.values) v = rng.uniform(0, 1);
  cloud.streams.push_back(color);

  const auto path = tmp.file("cloud.vipc");
  write_vipc(path, cloud);
  const auto back = read_vipc(path);

  REQUIRE(back.size() == 10);
  REQUIRE(back.streams.size() == 2);
  CHECK(back.streams[0].name == "radial");
  CHECK(back.streams[1].name == "color");
  CHECK(back.streams[1].channels == 3);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(back.points(i, j) == f32(cloud.points(i, j)));
  for (size_t i = 0; i < color.values.size(); ++i)
    CHECK(back.streams[1].values[i] == f32(color.values[i]));
}

TEST_CASE("VISM round-trip") {
  TempDir tmp;
  RngStream rng(2);
  SphericalMap map(3, 4, 6);
  for (auto& v : map.data) v = f32(rng.uniform(-2, 2));  // exact in f32
  const auto path = tmp.file("map.vism");
  write_vism(path, map);
  const auto back = read_vism(path);
  CHECK(back.channels == 3);
  CHECK(back.height == 4);
  CHECK(back.width == 6);
  CHECK(back.data == map.data);
}

TEST_CASE("checkpoint round-trip preserves order, names, dims and bits") {
  TempDir tmp;
  std::vector<CheckpointEntry> entries;
  entries.push_back({"encoder.stem.kernel", {4, 1, 3, 3}, std::vector<float>(36, 0.25f)});
  entries.push_back({"head.bias", {6}, {1, 0, 0, 0, 1, 0}});
  const auto path = tmp.file("model.vick");
  write_checkpoint(path, entries);
  const auto back = read_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == entries[0].name);
  CHECK(back[0].dims == entries[0].dims);
  CHECK(back[0].values == entries[0].values);
  CHECK(back[1].name == entries[1].name);
  CHECK(back[1].values == entries[1].values);
}

TEST_CASE("manifest round-trip") {
  TempDir tmp;
  RngStream rng(3);
  std::vector<ManifestEntry> entries(5);
  for (size_t i = 0; i < entries.size(); ++i) {
    entries[i].index = i;
    entries[i].id = 100 + i;
    entries[i].rotation = rng.random_rotation();
  }
  const auto path = tmp.file("manifest.txt");
  write_manifest(path, entries);
  const auto back = read_manifest(path);
  REQUIRE(back.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(back[i].index == entries[i].index);
    CHECK(back[i].id == entries[i].id);
    CHECK((back[i].rotation - entries[i].rotation).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("io error paths") {
  TempDir tmp;
  CHECK_THROWS_AS(read_vipc(tmp.file("absent.vipc")), FileError);
  CHECK_THROWS_AS(read_vism(tmp.file("absent.vism")), FileError);
  CHECK_THROWS_AS(read_checkpoint(tmp.file("absent.vick")), FileError);
  CHECK_THROWS_AS(read_manifest(tmp.file("absent.txt")), FileError);

  {
    std::ofstream out(tmp.file("bad.vipc"), std::ios::binary);
    out << "NOPE....";
  }
  CHECK_THROWS_AS(read_vipc(tmp.file("bad.vipc")), FormatError);

  {
    std::ofstream out(tmp.file("trunc.vism"), std::ios::binary);
    out << "VISM";  // header cut short
  }
  CHECK_THROWS_AS(read_vism(tmp.file("trunc.vism")), FormatError);

  {
    std::ofstream out(tmp.file("garbled.txt"));
    out << "0 0 not a number\n";
  }
  CHECK_THROWS_AS(read_manifest(tmp.file("garbled.txt")), FormatError);
}

TEST_CASE("sample file names are stable") {
  CHECK(sample_file_name(0) == "sample_000000.vipc");
  CHECK(sample_file_name(123) == "sample_000123.vipc");
}
