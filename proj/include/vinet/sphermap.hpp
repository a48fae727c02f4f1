#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace vinet {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// One named attribute stream of a point cloud: N rows of `channels`
/// values, row-major.
struct AttributeStream {
  std::string name;
  int channels = 0;
  std::vector<double> values;
};

/// A point set with per-point attribute streams.
struct PointCloud {
  PointMatrix points;  // N x 3
  std::vector<AttributeStream> streams;

  Eigen::Index size() const { return points.rows(); }
  const AttributeStream& stream(const std::string& name) const;
  bool has_stream(const std::string& name) const;
};

/// Dense C x H x W signal grid over (inclination, azimuth) bins.
/// Rows index theta in [0, pi], columns phi in [0, 2pi). W must be even
/// (the pole padding shifts columns by W/2).
struct SphericalMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;  // (c, h, w) order

  SphericalMap() = default;
  SphericalMap(int c, int h, int w);

  double& at(int c, int h, int w) { return data[(c * height + h) * width + w]; }
  double at(int c, int h, int w) const { return data[(c * height + h) * width + w]; }
};

/// Map every point to (p - t) / |s|. Throws std::invalid_argument when
/// |s| is zero.
PointMatrix normalize_cloud(const PointMatrix& points, const Eigen::Vector3d& t,
                            const Eigen::Vector3d& s);

/// Bin a (centered) cloud into an H x W spherical map: each cell holds
/// the attributes of its largest-radial-distance point, empty cells hold
/// zeros. Points at the origin are skipped; radial-distance ties keep the
/// lowest original index.
SphericalMap to_spherical_map(const PointCloud& cloud, const std::string& stream,
                              int height, int width);

/// Per-point radial distance |p_i| as a 1-channel attribute vector.
std::vector<double> radial_distance_stream(const PointCloud& cloud);

}  // namespace vinet
