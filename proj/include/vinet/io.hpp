#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vinet/sphermap.hpp"

namespace vinet {

// Binary file formats (all little-endian):
//   VIPC  point cloud   magic "VIPC", u32 version=1, u32 N, u32 stream_count,
//                       per stream {u8 name_len, name, u32 channels},
//                       N*3 f32 coordinates row-major,
//                       per stream N*channels f32 attributes row-major.
//   VISM  spherical map magic "VISM", u32 version=1, u32 C, u32 H, u32 W,
//                       C*H*W f32 values in (c, h, w) order.
//   VICK  checkpoint    magic "VICK", u32 version=1, u32 param_count,
//                       per parameter {u16 name_len, name, u8 rank,
//                       u32 dims[rank], f32 values row-major}.
// Coordinates and attributes are stored in f32 and widened to double on load.

void write_vipc(const std::string& path, const PointCloud& cloud);
PointCloud read_vipc(const std::string& path);

void write_vism(const std::string& path, const SphericalMap& map);
SphericalMap read_vism(const std::string& path);

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

/// One line per sample: "index id r00 r01 ... r22" with the rotation in
/// f64 row-major text.
struct ManifestEntry {
  std::uint64_t index = 0;
  std::uint64_t id = 0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

/// VIPC file name used for sample `id` inside a dataset directory.
std::string sample_file_name(std::uint64_t id);

}  // namespace vinet
