#pragma once

#include "wearpose/rotmath.hpp"

namespace wearpose::kin {

/// Fixed arm geometry. Lengths in meters; shoulder offset is measured from
/// the hip origin in the body frame at zero yaw.
struct ArmConfig {
  double upper_len = 0.30;
  double lower_len = 0.25;
  rot::Vec3 shoulder_offset{0.2, 0.5, 0.0};
};

struct ArmPose {
  rot::Vec3 elbow;
  rot::Vec3 wrist;
};

/// Forward kinematics from segment rotations and body yaw to Cartesian
/// elbow/wrist positions.
///
/// Convention: +Y up, identity segment rotation points the limb down (-Y).
///   shoulder = R_yaw * shoulder_offset
///   elbow    = shoulder + R_yaw * R_u * (0, -upper_len, 0)
///   wrist    = elbow    + R_yaw * R_l * (0, -lower_len, 0)
/// Segment rotations are recovered from the 6D blocks by Gram-Schmidt;
/// DegenerateSixD propagates from that recovery.
ArmPose forward_kinematics(const rot::SixD& q_u, const rot::SixD& q_l,
                           const rot::YawSinCos& r_h, const ArmConfig& cfg);

}  // namespace wearpose::kin
