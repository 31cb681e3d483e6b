#include "wearpose/kinematics.hpp"

namespace wearpose::kin {

ArmPose forward_kinematics(const rot::SixD& q_u, const rot::SixD& q_l,
                           const rot::YawSinCos& r_h, const ArmConfig& cfg) {
  const rot::Mat3 yaw = rot::yaw_matrix(r_h);
  const rot::Mat3 upper = rot::sixd_to_quat(q_u).to_rotation_matrix();
  const rot::Mat3 lower = rot::sixd_to_quat(q_l).to_rotation_matrix();

  const rot::Vec3 shoulder = yaw * cfg.shoulder_offset;
  ArmPose pose;
  pose.elbow = shoulder + yaw * (upper * rot::Vec3(0, -cfg.upper_len, 0));
  pose.wrist = pose.elbow + yaw * (lower * rot::Vec3(0, -cfg.lower_len, 0));
  return pose;
}

}  // namespace wearpose::kin
