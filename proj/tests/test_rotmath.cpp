#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "testutil.hpp"
#include "wearpose/rotmath.hpp"

using namespace wearpose;
using namespace wearpose::rot;
using testutil::random_quaternion;

namespace {

bool quat_close(const UnitQuaternion& a, const UnitQuaternion& b, double tol = 1e-9) {
  return a.approx_equal(b, tol);
}

bool quat_close_up_to_sign(const UnitQuaternion& a, const UnitQuaternion& b, double tol) {
  UnitQuaternion neg = b;
  neg.w = -neg.w;
  neg.x = -neg.x;
  neg.y = -neg.y;
  neg.z = -neg.z;
  return a.approx_equal(b, tol) || a.approx_equal(neg, tol);
}

}  // namespace

TEST_CASE("quat_mul identity and inverse cases") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    CHECK(quat_close(quat_mul(UnitQuaternion::identity(), q), q));
    CHECK(quat_close(quat_mul(q, quat_inverse(q)), UnitQuaternion::identity()));
  }
}

TEST_CASE("quat_mul matches the rotation-matrix product") {
  const UnitQuaternion rx90 = UnitQuaternion::from_axis_angle({1, 0, 0}, M_PI / 2);
  const UnitQuaternion prod = quat_mul(rx90, rx90);
  CHECK(quat_close(prod.canonicalized(), UnitQuaternion(0, 1, 0, 0)));

  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion p = random_quaternion(rng);
    const UnitQuaternion q = random_quaternion(rng);
    const Mat3 expected = p.to_rotation_matrix() * q.to_rotation_matrix();
    CHECK((quat_mul(p, q).to_rotation_matrix() - expected).norm() < 1e-12);
  }
}

TEST_CASE("quat_inverse definition and round trip") {
  const UnitQuaternion id = UnitQuaternion::identity();
  CHECK(quat_close(quat_inverse(id), id));

  Rng rng(3);
  const UnitQuaternion q = random_quaternion(rng);
  const UnitQuaternion inv = quat_inverse(q);
  CHECK(inv.w == q.w);
  CHECK(inv.x == -q.x);
  CHECK(inv.y == -q.y);
  CHECK(inv.z == -q.z);

  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion r = random_quaternion(rng);
    const Vec3 v = testutil::random_vector(3, rng);
    CHECK((quat_rotate(quat_inverse(r), quat_rotate(r, v)) - v).norm() < 1e-9);
  }
}

TEST_CASE("quat_rotate basics") {
  CHECK((quat_rotate(UnitQuaternion::identity(), {1, 2, 3}) - Vec3(1, 2, 3)).norm() < 1e-12);

  const UnitQuaternion rz90 = UnitQuaternion::from_axis_angle({0, 0, 1}, M_PI / 2);
  CHECK((quat_rotate(rz90, {1, 0, 0}) - Vec3(0, 1, 0)).norm() < 1e-12);

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    CHECK(quat_rotate(q, Vec3::Zero()).norm() == 0.0);
    const Vec3 v = testutil::random_vector(3, rng, 3.0);
    // rotation preserves length and matches the matrix route
    CHECK(std::abs(quat_rotate(q, v).norm() - v.norm()) < 1e-9);
    CHECK((quat_rotate(q, v) - q.to_rotation_matrix() * v).norm() < 1e-12);
  }
}

TEST_CASE("quat_to_sixd known values") {
  const SixD id = quat_to_sixd(UnitQuaternion::identity());
  CHECK((id.to_vector() - SixD::identity().to_vector()).norm() < 1e-15);

  const SixD z90 = quat_to_sixd(UnitQuaternion::from_axis_angle({0, 0, 1}, M_PI / 2));
  Eigen::Matrix<double, 6, 1> expected;
  expected << 0, 1, 0, -1, 0, 0;
  CHECK((z90.to_vector() - expected).norm() < 1e-12);
}

TEST_CASE("sixd round trips") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    const UnitQuaternion back = sixd_to_quat(quat_to_sixd(q));
    CHECK(quat_close_up_to_sign(back, q, 1e-6));
  }
  // idempotence on already-orthonormal inputs
  for (int i = 0; i < 200; ++i) {
    const SixD d = quat_to_sixd(random_quaternion(rng));
    const SixD again = quat_to_sixd(sixd_to_quat(d));
    CHECK((again.to_vector() - d.to_vector()).norm() < 1e-9);
  }
}

TEST_CASE("sixd_to_quat Gram-Schmidt and degeneracies") {
  CHECK(quat_close(sixd_to_quat(SixD::identity()), UnitQuaternion::identity()));
  // normalization and orthogonalization strip the perturbation
  CHECK(quat_close(sixd_to_quat({2, 0, 0, 0.5, 1, 0}), UnitQuaternion::identity(), 1e-12));

  CHECK_THROWS_AS(sixd_to_quat({1, 0, 0, 1, 0, 0}), DegenerateSixD);
  CHECK_THROWS_AS(sixd_to_quat({0, 0, 0, 0, 1, 0}), DegenerateSixD);
  CHECK_THROWS_AS(sixd_to_quat({1, 0, 0, -1, 1e-12, 0}), DegenerateSixD);
}

TEST_CASE("calibrate") {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    CHECK(quat_close(calibrate(q, q).canonicalized(), UnitQuaternion::identity()));
    CHECK(quat_close(calibrate(UnitQuaternion::identity(), q), q));
  }

  const UnitQuaternion z90 = UnitQuaternion::from_axis_angle({0, 0, 1}, M_PI / 2);
  const UnitQuaternion z180 = UnitQuaternion::from_axis_angle({0, 0, 1}, M_PI);
  CHECK(quat_close(calibrate(z90, z180).canonicalized(), z90.canonicalized()));

  // calibrate(i, i*d) == d
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion initial = random_quaternion(rng);
    const UnitQuaternion delta = random_quaternion(rng);
    CHECK(quat_close(calibrate(initial, quat_mul(initial, delta)), delta, 1e-9));
  }
}

TEST_CASE("up_axis_yaw extracts the twist about +Y") {
  const YawSinCos at_rest = up_axis_yaw(UnitQuaternion::identity());
  CHECK(at_rest.s == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(at_rest.c == doctest::Approx(1.0).epsilon(1e-12));

  const YawSinCos y90 = up_axis_yaw(UnitQuaternion::from_axis_angle({0, 1, 0}, M_PI / 2));
  CHECK(y90.s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y90.c == doctest::Approx(0.0).epsilon(1e-12));

  // swing-twist oracle: yaw(30 deg) composed with pitch(20 deg)
  const UnitQuaternion yaw30 = UnitQuaternion::from_axis_angle({0, 1, 0}, 30.0 * M_PI / 180);
  const UnitQuaternion pitch20 = UnitQuaternion::from_axis_angle({1, 0, 0}, 20.0 * M_PI / 180);
  const YawSinCos r = up_axis_yaw(quat_mul(yaw30, pitch20));
  CHECK(r.s == doctest::Approx(std::sin(30.0 * M_PI / 180)).epsilon(1e-12));
  CHECK(r.c == doctest::Approx(std::cos(30.0 * M_PI / 180)).epsilon(1e-12));

  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    try {
      const YawSinCos yc = up_axis_yaw(q);
      CHECK(std::abs(yc.s * yc.s + yc.c * yc.c - 1.0) < 1e-9);
    } catch (const GimbalDegenerate&) {
      // legal outcome near the poles
    }
  }
}

TEST_CASE("up_axis_yaw gimbal degeneracies") {
  // forward vector rotated onto +Y
  const UnitQuaternion pitch_up = UnitQuaternion::from_axis_angle({1, 0, 0}, -M_PI / 2);
  CHECK_THROWS_AS(up_axis_yaw(pitch_up), GimbalDegenerate);
  // 180-degree flip about X: twist about Y undefined
  CHECK_THROWS_AS(up_axis_yaw(UnitQuaternion(0, 1, 0, 0)), GimbalDegenerate);
}

TEST_CASE("canonicalize fixes the double cover") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion q = random_quaternion(rng).canonicalized();
    CHECK(q.w >= 0.0);
    CHECK(std::abs(q.norm() - 1.0) < 1e-9);
  }
}
