#pragma once

#include <Eigen/Dense>

#include "wearpose/errors.hpp"

namespace wearpose::rot {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Hamilton quaternion, scalar first. Constructors normalize, so a value of
/// this type is always unit up to floating-point error.
struct UnitQuaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  UnitQuaternion() = default;
  UnitQuaternion(double w_, double x_, double y_, double z_);

  static UnitQuaternion identity() { return {}; }
  /// Axis need not be unit; angle in radians.
  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle);
  static UnitQuaternion from_rotation_matrix(const Mat3& m);

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  UnitQuaternion normalized() const;
  /// Resolves the double cover: flips sign so w >= 0 (ties broken on x, y, z).
  UnitQuaternion canonicalized() const;
  Mat3 to_rotation_matrix() const;

  bool approx_equal(const UnitQuaternion& o, double tol = 1e-9) const;
};

/// First two columns of a rotation matrix, column-major:
/// (a1,a2,a3) = column 0, (b1,b2,b3) = column 1.
/// Arbitrary (unnormalized) values are legal as input to sixd_to_quat;
/// quat_to_sixd always produces orthonormal columns.
struct SixD {
  double a1 = 1.0, a2 = 0.0, a3 = 0.0;
  double b1 = 0.0, b2 = 1.0, b3 = 0.0;

  static SixD identity() { return {}; }
  static SixD from_vector(const Eigen::Matrix<double, 6, 1>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  Eigen::Matrix<double, 6, 1> to_vector() const {
    Eigen::Matrix<double, 6, 1> v;
    v << a1, a2, a3, b1, b2, b3;
    return v;
  }
  Vec3 col_a() const { return {a1, a2, a3}; }
  Vec3 col_b() const { return {b1, b2, b3}; }
};

/// Body yaw encoded as (sin, cos) of the rotation about global +Y.
struct YawSinCos {
  double s = 0.0;
  double c = 1.0;

  static YawSinCos from_angle(double psi) { return {std::sin(psi), std::cos(psi)}; }
  double angle() const { return std::atan2(s, c); }
};

/// Hamilton product, renormalized. Does not canonicalize, so composition
/// stays associative across the double cover.
UnitQuaternion quat_mul(const UnitQuaternion& p, const UnitQuaternion& q);

/// Conjugate (= inverse for unit quaternions).
UnitQuaternion quat_inverse(const UnitQuaternion& q);

/// Rotates v by q; preserves the norm of v.
Vec3 quat_rotate(const UnitQuaternion& q, const Vec3& v);

/// First two rotation-matrix columns of q.
SixD quat_to_sixd(const UnitQuaternion& q);

/// Gram-Schmidt over the two columns, third column by cross product.
/// Throws DegenerateSixD when the first column is near zero or the columns
/// are near parallel (tolerance 1e-8). Result is canonicalized (w >= 0).
UnitQuaternion sixd_to_quat(const SixD& d);

/// Orientation of `current` relative to `initial`: initial^-1 * current.
UnitQuaternion calibrate(const UnitQuaternion& initial, const UnitQuaternion& current);

/// Extracts the yaw about global +Y via swing-twist decomposition
/// (q = swing * twist with the twist about +Y applied first).
/// Throws GimbalDegenerate when the rotated forward vector (+Z) is within
/// 1e-6 of +/-Y, or when the twist component is numerically undefined.
YawSinCos up_axis_yaw(const UnitQuaternion& q);

/// Rotation matrix about +Y from a (sin, cos) pair; normalizes the pair.
Mat3 yaw_matrix(const YawSinCos& r);

}  // namespace wearpose::rot
