#pragma once

#include <Eigen/Dense>
#include <array>
#include <utility>

namespace vinet {

// Closed-form SO(3) math: axis rotations, the viewpoint/in-plane
// factorization R = R_vp * R_ip, the continuous 6D rotation encoding,
// error metrics, and the codecs between angles and spherical bins.
//
// Conventions (used consistently across the whole project):
//   * theta (inclination) = arccos(v_z), in [0, pi]
//   * phi (azimuth)       = atan2(v_y, v_x), wrapped to [0, 2*pi)
//   * at the poles (theta < 1e-9 or theta > pi - 1e-9) phi is fixed to 0
//   * bin indices are zero-based; bin centers sit at (index + 0.5)

/// Azimuth phi in [0, 2pi) and inclination theta in [0, pi].
struct ViewpointAngles {
  double phi = 0.0;
  double theta = 0.0;
};

/// A 3x3 orthonormal matrix with determinant +1. The constructor
/// validates the invariants (1e-9 per entry) and throws
/// std::invalid_argument on failure.
class Rotation {
 public:
  Rotation() : m_(Eigen::Matrix3d::Identity()) {}
  explicit Rotation(const Eigen::Matrix3d& m);

  static Rotation identity() { return Rotation(); }

  const Eigen::Matrix3d& matrix() const { return m_; }
  Eigen::Vector3d zenith() const { return m_.col(2); }

  Rotation transposed() const;
  Rotation operator*(const Rotation& rhs) const;

 private:
  struct unchecked_t {};
  Rotation(const Eigen::Matrix3d& m, unchecked_t) : m_(m) {}

  Eigen::Matrix3d m_;
};

/// Rotation about the third (zenith) axis. Throws on non-finite input.
Rotation rot_z(double angle);

/// Rotation about the second axis. Throws on non-finite input.
Rotation rot_y(double angle);

/// Angles (phi, theta) of a unit direction v, such that
/// viewpoint_rotation(phi, theta) maps (0,0,1) onto v.
/// Throws std::invalid_argument if |v| deviates from 1 by more than 1e-6.
ViewpointAngles viewpoint_from_direction(const Eigen::Vector3d& v);

/// Unit direction whose angles are (phi, theta); the inverse of
/// viewpoint_from_direction away from the poles.
Eigen::Vector3d direction_of_angles(const ViewpointAngles& a);

/// R_vp = rot_z(phi) * rot_y(theta). Its third column is
/// direction_of_angles(a).
Rotation viewpoint_rotation(const ViewpointAngles& a);

/// Split r into (R_vp, R_ip) where R_vp is determined by the zenith
/// column of r and R_ip = R_vp^T * r fixes the zenith axis.
std::pair<Rotation, Rotation> decompose(const Rotation& r);

/// Gram-Schmidt decoding of the continuous 6D rotation representation:
/// d[0..2] normalizes to column 1, d[3..5] is orthogonalized against it
/// for column 2, and column 3 is their cross product.
/// Throws DegenerateInput when d[0..2] vanishes or d[3..5] is parallel
/// to it.
Rotation sixd_to_rotation(const std::array<double, 6>& d);

/// Geodesic distance arccos((trace(a^T b) - 1) / 2) in degrees.
double geodesic_degrees(const Rotation& a, const Rotation& b);

/// Azimuth of bin center w_max out of W bins: (w_max + 0.5) / W * 2pi.
double decode_azimuth(int w_max, int bin_count);

/// Inclination of bin center h_max out of H bins: (h_max + 0.5) / H * pi.
double decode_inclination(int h_max, int bin_count);

/// Bin indices (h, w) containing the angles a:
/// h = min(floor(theta/pi*H), H-1), w = floor(phi/(2pi)*W) mod W.
std::pair<int, int> bins_of_angles(const ViewpointAngles& a, int bins_h, int bins_w);

}  // namespace vinet
