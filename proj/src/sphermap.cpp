#include "vinet/sphermap.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "vinet/common.hpp"
#include "vinet/geometry.hpp"

namespace vinet {

const AttributeStream& PointCloud::stream(const std::string& name) const {
  for (const auto& s : streams) {
    if (s.name == name) return s;
  }
  throw std::invalid_argument("point cloud has no stream named '" + name + "'");
}

bool PointCloud::has_stream(const std::string& name) const {
  for (const auto& s : streams) {
    if (s.name == name) return true;
  }
  return false;
}

SphericalMap::SphericalMap(int c, int h, int w)
    : channels(c), height(h), width(w) {
  if (c < 1 || h < 2 || w < 2 || w % 2 != 0) {
    std::ostringstream os;
    os << "spherical map needs C >= 1, H >= 2 and even W >= 2, got C=" << c
       << " H=" << h << " W=" << w;
    throw std::invalid_argument(os.str());
  }
  data.assign(static_cast<size_t>(c) * h * w, 0.0);
}

PointMatrix normalize_cloud(const PointMatrix& points, const Eigen::Vector3d& t,
                            const Eigen::Vector3d& s) {
  const double sn = s.norm();
  if (!(sn > 0.0)) {
    throw std::invalid_argument("normalize_cloud: size vector has zero norm");
  }
  PointMatrix out = points;
  out.rowwise() -= t.transpose();
  out /= sn;
  return out;
}

SphericalMap to_spherical_map(const PointCloud& cloud, const std::string& stream,
                              int height, int width) {
  const AttributeStream& attrs = cloud.stream(stream);
  if (attrs.values.size() != static_cast<size_t>(cloud.size()) * attrs.channels) {
    throw std::invalid_argument("attribute stream '" + stream +
                                "' row count does not match the point count");
  }

  SphericalMap map(attrs.channels, height, width);

  // winning radial distance per cell; -1 marks an empty cell
  std::vector<double> best(static_cast<size_t>(height) * width, -1.0);

  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d p = cloud.points.row(i);
    const double r = p.norm();
    if (r == 0.0) continue;  // direction undefined
    const ViewpointAngles a = viewpoint_from_direction(p / r);
    const auto [h, w] = bins_of_angles(a, height, width);
    double& incumbent = best[static_cast<size_t>(h) * width + w];
    if (r > incumbent) {  // strict: ties keep the earlier point
      incumbent = r;
      for (int c = 0; c < attrs.channels; ++c) {
        map.at(c, h, w) = attrs.values[static_cast<size_t>(i) * attrs.channels + c];
      }
    }
  }
  return map;
}

std::vector<double> radial_distance_stream(const PointCloud& cloud) {
  std::vector<double> out(static_cast<size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    out[static_cast<size_t>(i)] = cloud.points.row(i).norm();
  }
  return out;
}

}  // namespace vinet
