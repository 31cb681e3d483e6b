#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "wearpose/errors.hpp"
#include "wearpose/kinematics.hpp"
#include "wearpose/rng.hpp"
#include "wearpose/rotmath.hpp"

namespace wearpose::data {

constexpr int kStateDim = 14;
constexpr int kObsDim = 22;

/// One assembled 22-dim raw observation:
/// [dt, theta_sw(6), v(3), alpha(3), gamma(3), phi(3), rho, r_h(2)].
struct RawObservation {
  double dt = 0.0;
  rot::SixD theta_sw;      // calibrated watch orientation
  rot::Vec3 velocity{0, 0, 0};    // interval integral of linear acceleration
  rot::Vec3 lin_accel{0, 0, 0};   // interval mean, watch frame
  rot::Vec3 gravity{0, -9.81, 0}; // interval mean, watch frame
  rot::Vec3 gyro{0, 0, 0};        // interval mean, watch frame
  double pressure = 0.0;          // hPa relative to the calibration reading
  rot::YawSinCos r_h;             // calibrated body yaw

  Eigen::Matrix<double, kObsDim, 1> to_vector() const;
  static RawObservation from_vector(const Eigen::Matrix<double, kObsDim, 1>& v);
};

/// 14-dim pose state: [q_l(6), q_u(6), r_h(2)].
struct PoseState {
  rot::SixD lower_arm;
  rot::SixD upper_arm;
  rot::YawSinCos r_h;

  Eigen::Matrix<double, kStateDim, 1> to_vector() const;
  static PoseState from_vector(const Eigen::Matrix<double, kStateDim, 1>& v);
};

struct Sample {
  RawObservation obs;
  PoseState state;
};

struct Trajectory {
  std::string subject;
  std::string motion;
  std::vector<Sample> samples;
};

/// The pose held during calibration: forearm forward (+Z), upper arm down,
/// zero body yaw.
PoseState calibration_rest_state();

// --- live assembly ---------------------------------------------------------

/// Raw device readings. Quaternions are stored as plain (w,x,y,z) components
/// exactly as they came off the wire (float32-valued); normalization happens
/// inside the calibration math so offline and online paths stay bit-equal.
struct WatchReading {
  double t = 0.0;
  Eigen::Vector4d orientation{1, 0, 0, 0};  // w, x, y, z
  rot::Vec3 lin_accel{0, 0, 0};
  rot::Vec3 gravity{0, 0, 0};
  rot::Vec3 gyro{0, 0, 0};
  double pressure = 0.0;
};

struct PhoneReading {
  double t = 0.0;
  Eigen::Vector4d orientation{1, 0, 0, 0};  // w, x, y, z
};

struct CalibrationState {
  rot::UnitQuaternion watch_init;
  rot::UnitQuaternion phone_init;
  double pressure_init = 0.0;
  bool captured = false;
};

/// Assembles one observation from the watch readings of an interval and the
/// most recent phone reading. Sensor channels are averaged over the watch
/// readings, orientation and pressure come from the newest one.
/// Throws NotCalibrated / EmptyInterval.
RawObservation assemble_observation(const std::vector<WatchReading>& watch,
                                    const PhoneReading& phone,
                                    const CalibrationState& calib, double dt);

/// Stateful per-session assembler: captures calibration from the first
/// watch+phone pair and emits one observation per watch reading. The first
/// interval uses `nominal_dt` since no previous reading exists.
class Assembler {
 public:
  explicit Assembler(double nominal_dt) : nominal_dt_(nominal_dt) {}

  void add_phone(const PhoneReading& reading);
  /// Returns an observation once calibrated (every call after that).
  std::optional<RawObservation> add_watch(const WatchReading& reading);

  bool calibrated() const { return calib_.captured; }
  const CalibrationState& calibration() const { return calib_; }
  void reset();

 private:
  double nominal_dt_;
  CalibrationState calib_;
  std::optional<PhoneReading> last_phone_;
  std::vector<WatchReading> pending_;
  double last_obs_time_ = 0.0;
  bool have_obs_time_ = false;
};

// --- augmentation ----------------------------------------------------------

/// Simulates a new body orientation: composes theta_sw, q_l, q_u and r_h
/// with an extra yaw of `delta_yaw` radians about +Y and leaves every
/// watch-frame channel untouched. delta_yaw == 0 returns a bitwise copy.
Trajectory augment_yaw(const Trajectory& traj, double delta_yaw);

// --- synthetic motion generator ---------------------------------------------

/// angle(t) = rate * t + sum_i amp_i * sin(2*pi*freq_i*t + phase_i),
/// shifted so the channel starts at its calibration rest value.
struct Sinusoid {
  double amp = 0.0;
  double freq = 0.0;   // Hz
  double phase = 0.0;  // rad
};

struct JointChannel {
  std::vector<Sinusoid> sinusoids;
  double rate = 0.0;  // rad/s linear term
};

struct MotionSpec {
  std::string name;
  JointChannel shoulder_x;  // shoulder swing about +X
  JointChannel shoulder_z;  // shoulder abduction about +Z
  JointChannel elbow_x;     // elbow flexion about +X (rest -pi/2)
  JointChannel yaw;         // body yaw about +Y
};

struct SynthConfig {
  double duration_s = 20.0;
  double rate_hz = 80.0;
  int oversample = 5;  // sensor samples averaged per packet interval
  int phone_div = 4;   // phone packet every Nth watch tick
  std::string subject = "synth01";
  double watch_mount_yaw_deg = 90.0;  // forearm-to-watch offset, about local Y
  double phone_mount_yaw_deg = 35.0;  // pocket orientation, upright phone
  double pressure_base_hpa = 1013.25;
  double pressure_per_m = -0.12;
  double amplitude_jitter = 0.2;  // per-trajectory random scaling of amps
  /// Quantize payloads to float32 like real devices (required for lossless
  /// wire captures); disable only to inspect the analytic signals.
  bool quantize = true;
  kin::ArmConfig arm;
  std::vector<MotionSpec> motions;

  std::string to_json() const;
  static SynthConfig from_json(const std::string& text);
};

/// Five-motion catalog mirroring common test movements (swing, wave, raise,
/// box, clap) with gentle body-yaw drift.
std::vector<MotionSpec> default_motion_catalog();
SynthConfig default_synth_config();

/// One generated trajectory plus the packet-level streams it was assembled
/// from (used to write replayable captures).
struct SynthTrajectory {
  Trajectory trajectory;
  std::vector<WatchReading> watch;
  std::vector<PhoneReading> phone;
};

/// Generates analytic ground-truth motion and derives the device streams:
/// watch orientation = yaw * lower-arm * mount, gyro = exact body rate,
/// gravity = watch-frame (0,-9.81,0), linear acceleration = watch-frame
/// second derivative of the wrist position, pressure = barometric offset of
/// wrist height. Payloads are quantized to float32 like real devices.
/// Throws InvalidConfig on non-positive duration/rate.
std::vector<SynthTrajectory> synthesize(const SynthConfig& cfg, Rng& rng);

/// Convenience wrapper returning only the trajectories.
std::vector<Trajectory> synthesize_dataset(const SynthConfig& cfg, Rng& rng);

// --- dataset files -----------------------------------------------------------

/// CSV with a fixed 38-column header (subject, motion, 22 observation
/// columns, 14 state columns), 17 significant digits. Consecutive rows with
/// the same (subject, motion) form one trajectory.
void save_dataset(const std::vector<Trajectory>& trajectories, const std::string& path);
std::vector<Trajectory> load_dataset(const std::string& path);

/// Rounds through float32; the synthetic pipeline quantizes every payload
/// this way so wire encoding is lossless. The volatile keeps the narrowing
/// conversion from being elided when the surrounding code is vectorized.
inline double quantize_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

}  // namespace wearpose::data
