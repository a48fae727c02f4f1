#include "vinet/geometry.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "vinet/common.hpp"

namespace vinet {

namespace {
constexpr double kOrthoTol = 1e-9;
constexpr double kPoleTol = 1e-9;

void require_finite_angle(double angle, const char* op) {
  if (!std::isfinite(angle)) {
    std::ostringstream os;
    os << op << ": angle must be finite, got " << angle;
    throw std::invalid_argument(os.str());
  }
}
}  // namespace

Rotation::Rotation(const Eigen::Matrix3d& m) : m_(m) {
  const Eigen::Matrix3d gram = m.transpose() * m;
  const double ortho_err = (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det_err = std::abs(m.determinant() - 1.0);
  if (!m.allFinite() || ortho_err > kOrthoTol || det_err > kOrthoTol) {
    std::ostringstream os;
    os << "matrix is not a rotation (orthonormality error " << ortho_err
       << ", det error " << det_err << ")";
    throw std::invalid_argument(os.str());
  }
}

Rotation Rotation::transposed() const { return Rotation(m_.transpose(), unchecked_t{}); }

Rotation Rotation::operator*(const Rotation& rhs) const {
  return Rotation(m_ * rhs.m_, unchecked_t{});
}

Rotation rot_z(double angle) {
  require_finite_angle(angle, "rot_z");
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return Rotation(m);
}

Rotation rot_y(double angle) {
  require_finite_angle(angle, "rot_y");
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return Rotation(m);
}

ViewpointAngles viewpoint_from_direction(const Eigen::Vector3d& v) {
  const double norm_err = std::abs(v.norm() - 1.0);
  if (!v.allFinite() || norm_err > 1e-6) {
    std::ostringstream os;
    os << "viewpoint_from_direction: |v| deviates from 1 by " << norm_err;
    throw std::invalid_argument(os.str());
  }
  ViewpointAngles a;
  a.theta = std::acos(std::clamp(v.z(), -1.0, 1.0));
  if (a.theta < kPoleTol || a.theta > M_PI - kPoleTol) {
    a.phi = 0.0;  // azimuth undefined at the poles; canonical value
  } else {
    a.phi = std::atan2(v.y(), v.x());
    if (a.phi < 0.0) a.phi += 2.0 * M_PI;
    if (a.phi >= 2.0 * M_PI) a.phi = 0.0;
  }
  return a;
}

Eigen::Vector3d direction_of_angles(const ViewpointAngles& a) {
  const double st = std::sin(a.theta);
  return {std::cos(a.phi) * st, std::sin(a.phi) * st, std::cos(a.theta)};
}

Rotation viewpoint_rotation(const ViewpointAngles& a) {
  return rot_z(a.phi) * rot_y(a.theta);
}

std::pair<Rotation, Rotation> decompose(const Rotation& r) {
  const Eigen::Vector3d v = r.zenith();
  const Rotation r_vp = viewpoint_rotation(viewpoint_from_direction(v / v.norm()));
  const Rotation r_ip = r_vp.transposed() * r;
  return {r_vp, r_ip};
}

Rotation sixd_to_rotation(const std::array<double, 6>& d) {
  const Eigen::Vector3d a(d[0], d[1], d[2]);
  const Eigen::Vector3d b(d[3], d[4], d[5]);
  const double na = a.norm();
  if (na < 1e-12) {
    throw DegenerateInput("sixd_to_rotation: first triple is (numerically) zero");
  }
  const Eigen::Vector3d c1 = a / na;
  const Eigen::Vector3d u = b - c1.dot(b) * c1;
  const double nu = u.norm();
  if (nu < 1e-12) {
    throw DegenerateInput(
        "sixd_to_rotation: second triple is parallel to the first");
  }
  const Eigen::Vector3d c2 = u / nu;
  const Eigen::Vector3d c3 = c1.cross(c2);
  Eigen::Matrix3d m;
  m.col(0) = c1;
  m.col(1) = c2;
  m.col(2) = c3;
  return Rotation(m);
}

double geodesic_degrees(const Rotation& a, const Rotation& b) {
  const double t = (a.matrix().transpose() * b.matrix()).trace();
  const double c = std::clamp((t - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

double decode_azimuth(int w_max, int bin_count) {
  if (w_max < 0 || w_max >= bin_count) {
    throw std::invalid_argument("decode_azimuth: bin index out of range");
  }
  return (w_max + 0.5) / bin_count * 2.0 * M_PI;
}

double decode_inclination(int h_max, int bin_count) {
  if (h_max < 0 || h_max >= bin_count) {
    throw std::invalid_argument("decode_inclination: bin index out of range");
  }
  return (h_max + 0.5) / bin_count * M_PI;
}

std::pair<int, int> bins_of_angles(const ViewpointAngles& a, int bins_h, int bins_w) {
  const int h = std::min(static_cast<int>(std::floor(a.theta / M_PI * bins_h)),
                         bins_h - 1);
  int w = static_cast<int>(std::floor(a.phi / (2.0 * M_PI) * bins_w)) % bins_w;
  if (w < 0) w += bins_w;
  return {std::max(h, 0), w};
}

}  // namespace vinet
