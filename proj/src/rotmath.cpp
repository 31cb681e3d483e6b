#include "wearpose/rotmath.hpp"

#include <cmath>

namespace wearpose::rot {

namespace {
constexpr double kDegenerateTol = 1e-8;
constexpr double kGimbalTol = 1e-6;
}  // namespace

UnitQuaternion::UnitQuaternion(double w_, double x_, double y_, double z_)
    : w(w_), x(x_), y(y_), z(z_) {
  const double n = norm();
  if (n < 1e-12) {
    throw std::invalid_argument("UnitQuaternion: zero-norm components");
  }
  w /= n;
  x /= n;
  y /= n;
  z /= n;
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n < 1e-12) {
    throw std::invalid_argument("from_axis_angle: zero axis");
  }
  const double half = 0.5 * angle;
  const double s = std::sin(half) / n;
  return {std::cos(half), axis.x() * s, axis.y() * s, axis.z() * s};
}

UnitQuaternion UnitQuaternion::from_rotation_matrix(const Mat3& m) {
  // Shepperd's method: pick the largest diagonal combination for stability.
  const double tr = m(0, 0) + m(1, 1) + m(2, 2);
  double w, x, y, z;
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    w = 0.25 * s;
    x = (m(2, 1) - m(1, 2)) / s;
    y = (m(0, 2) - m(2, 0)) / s;
    z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    w = (m(2, 1) - m(1, 2)) / s;
    x = 0.25 * s;
    y = (m(0, 1) + m(1, 0)) / s;
    z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    w = (m(0, 2) - m(2, 0)) / s;
    x = (m(0, 1) + m(1, 0)) / s;
    y = 0.25 * s;
    z = (m(1, 2) + m(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    w = (m(1, 0) - m(0, 1)) / s;
    x = (m(0, 2) + m(2, 0)) / s;
    y = (m(1, 2) + m(2, 1)) / s;
    z = 0.25 * s;
  }
  return {w, x, y, z};
}

UnitQuaternion UnitQuaternion::normalized() const {
  return {w, x, y, z};
}

UnitQuaternion UnitQuaternion::canonicalized() const {
  UnitQuaternion q = normalized();
  bool flip = q.w < 0.0;
  if (q.w == 0.0) {
    if (q.x != 0.0) {
      flip = q.x < 0.0;
    } else if (q.y != 0.0) {
      flip = q.y < 0.0;
    } else {
      flip = q.z < 0.0;
    }
  }
  if (flip) {
    q.w = -q.w;
    q.x = -q.x;
    q.y = -q.y;
    q.z = -q.z;
  }
  return q;
}

Mat3 UnitQuaternion::to_rotation_matrix() const {
  Mat3 m;
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, xz = x * z, yz = y * z;
  const double wx = w * x, wy = w * y, wz = w * z;
  m << 1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
      2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
      2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy);
  return m;
}

bool UnitQuaternion::approx_equal(const UnitQuaternion& o, double tol) const {
  return std::abs(w - o.w) <= tol && std::abs(x - o.x) <= tol &&
         std::abs(y - o.y) <= tol && std::abs(z - o.z) <= tol;
}

UnitQuaternion quat_mul(const UnitQuaternion& p, const UnitQuaternion& q) {
  return {p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
          p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
          p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
          p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w};
}

UnitQuaternion quat_inverse(const UnitQuaternion& q) {
  UnitQuaternion r = q;
  r.x = -r.x;
  r.y = -r.y;
  r.z = -r.z;
  return r;
}

Vec3 quat_rotate(const UnitQuaternion& q, const Vec3& v) {
  // v' = v + 2w(u x v) + 2 u x (u x v), u = vector part
  const Vec3 u(q.x, q.y, q.z);
  const Vec3 uv = u.cross(v);
  return v + 2.0 * (q.w * uv + u.cross(uv));
}

SixD quat_to_sixd(const UnitQuaternion& q) {
  const Mat3 m = q.to_rotation_matrix();
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

UnitQuaternion sixd_to_quat(const SixD& d) {
  Vec3 a = d.col_a();
  const double na = a.norm();
  if (na <= kDegenerateTol) {
    throw DegenerateSixD("sixd_to_quat: first column near zero");
  }
  a /= na;
  Vec3 b = d.col_b() - a.dot(d.col_b()) * a;
  const double nb = b.norm();
  if (nb <= kDegenerateTol) {
    throw DegenerateSixD("sixd_to_quat: columns near parallel");
  }
  b /= nb;
  const Vec3 c = a.cross(b);
  Mat3 m;
  m.col(0) = a;
  m.col(1) = b;
  m.col(2) = c;
  return UnitQuaternion::from_rotation_matrix(m).canonicalized();
}

UnitQuaternion calibrate(const UnitQuaternion& initial, const UnitQuaternion& current) {
  return quat_mul(quat_inverse(initial), current);
}

YawSinCos up_axis_yaw(const UnitQuaternion& q) {
  const Vec3 forward = quat_rotate(q, Vec3(0, 0, 1));
  if ((forward - Vec3(0, 1, 0)).norm() < kGimbalTol ||
      (forward + Vec3(0, 1, 0)).norm() < kGimbalTol) {
    throw GimbalDegenerate("up_axis_yaw: forward vector at the up pole");
  }
  // Twist about +Y: the unique yaw t with q = swing * t and swing axis in XZ.
  const double n = std::hypot(q.w, q.y);
  if (n < kGimbalTol) {
    throw GimbalDegenerate("up_axis_yaw: twist component undefined");
  }
  const double a = q.w / n;
  const double b = q.y / n;
  // half-angle (a, b) -> full angle (sin, cos)
  return {2.0 * a * b, a * a - b * b};
}

Mat3 yaw_matrix(const YawSinCos& r) {
  double s = r.s, c = r.c;
  const double n = std::hypot(s, c);
  if (n < 1e-12) {
    throw std::invalid_argument("yaw_matrix: zero-norm sin/cos pair");
  }
  s /= n;
  c /= n;
  Mat3 m;
  m << c, 0, s,
      0, 1, 0,
      -s, 0, c;
  return m;
}

}  // namespace wearpose::rot
