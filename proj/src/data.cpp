#include "wearpose/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace wearpose::data {

using rot::Mat3;
using rot::Vec3;
using nlohmann::json;

Eigen::Matrix<double, kObsDim, 1> RawObservation::to_vector() const {
  Eigen::Matrix<double, kObsDim, 1> v;
  v << dt, theta_sw.a1, theta_sw.a2, theta_sw.a3, theta_sw.b1, theta_sw.b2, theta_sw.b3,
      velocity.x(), velocity.y(), velocity.z(),
      lin_accel.x(), lin_accel.y(), lin_accel.z(),
      gravity.x(), gravity.y(), gravity.z(),
      gyro.x(), gyro.y(), gyro.z(),
      pressure, r_h.s, r_h.c;
  return v;
}

RawObservation RawObservation::from_vector(const Eigen::Matrix<double, kObsDim, 1>& v) {
  RawObservation o;
  o.dt = v[0];
  o.theta_sw = {v[1], v[2], v[3], v[4], v[5], v[6]};
  o.velocity = {v[7], v[8], v[9]};
  o.lin_accel = {v[10], v[11], v[12]};
  o.gravity = {v[13], v[14], v[15]};
  o.gyro = {v[16], v[17], v[18]};
  o.pressure = v[19];
  o.r_h = {v[20], v[21]};
  return o;
}

Eigen::Matrix<double, kStateDim, 1> PoseState::to_vector() const {
  Eigen::Matrix<double, kStateDim, 1> v;
  v << lower_arm.to_vector(), upper_arm.to_vector(), r_h.s, r_h.c;
  return v;
}

PoseState PoseState::from_vector(const Eigen::Matrix<double, kStateDim, 1>& v) {
  PoseState s;
  s.lower_arm = rot::SixD::from_vector(v.segment<6>(0));
  s.upper_arm = rot::SixD::from_vector(v.segment<6>(6));
  s.r_h = {v[12], v[13]};
  return s;
}

PoseState calibration_rest_state() {
  PoseState s;
  s.lower_arm = {1, 0, 0, 0, 0, -1};  // R_x(-pi/2): forearm points +Z
  s.upper_arm = rot::SixD::identity();
  s.r_h = {0, 1};
  return s;
}

// --- assembly ----------------------------------------------------------------

namespace {

rot::UnitQuaternion quat_from_components(const Eigen::Vector4d& wxyz) {
  return {wxyz[0], wxyz[1], wxyz[2], wxyz[3]};
}

}  // namespace

RawObservation assemble_observation(const std::vector<WatchReading>& watch,
                                    const PhoneReading& phone,
                                    const CalibrationState& calib, double dt) {
  if (!calib.captured) {
    throw NotCalibrated("assemble_observation: calibration not captured");
  }
  if (watch.empty()) {
    throw EmptyInterval("assemble_observation: no watch readings in interval");
  }

  Vec3 accel = Vec3::Zero();
  Vec3 gravity = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();
  for (const WatchReading& r : watch) {
    accel += r.lin_accel;
    gravity += r.gravity;
    gyro += r.gyro;
  }
  const double n = static_cast<double>(watch.size());
  accel /= n;
  gravity /= n;
  gyro /= n;

  const WatchReading& last = watch.back();
  RawObservation obs;
  obs.dt = dt;
  obs.theta_sw = rot::quat_to_sixd(
      rot::calibrate(calib.watch_init, quat_from_components(last.orientation)));
  obs.lin_accel = accel;
  obs.gravity = gravity;
  obs.gyro = gyro;
  obs.velocity = accel * dt;
  obs.pressure = last.pressure - calib.pressure_init;
  obs.r_h = rot::up_axis_yaw(
      rot::calibrate(calib.phone_init, quat_from_components(phone.orientation)));
  return obs;
}

void Assembler::add_phone(const PhoneReading& reading) { last_phone_ = reading; }

std::optional<RawObservation> Assembler::add_watch(const WatchReading& reading) {
  if (!calib_.captured) {
    if (!last_phone_) {
      return std::nullopt;  // no phone yet, nothing to calibrate against
    }
    calib_.watch_init = quat_from_components(reading.orientation);
    calib_.phone_init = quat_from_components(last_phone_->orientation);
    calib_.pressure_init = reading.pressure;
    calib_.captured = true;
  }
  pending_.push_back(reading);
  double dt = have_obs_time_ ? reading.t - last_obs_time_ : nominal_dt_;
  if (!(dt > 0.0)) {
    dt = nominal_dt_;
  }
  RawObservation obs = assemble_observation(pending_, *last_phone_, calib_, dt);
  pending_.clear();
  last_obs_time_ = reading.t;
  have_obs_time_ = true;
  return obs;
}

void Assembler::reset() {
  calib_ = CalibrationState{};
  last_phone_.reset();
  pending_.clear();
  have_obs_time_ = false;
  last_obs_time_ = 0.0;
}

// --- augmentation --------------------------------------------------------------

namespace {

rot::SixD compose_extra_yaw(const rot::SixD& d, const rot::UnitQuaternion& yaw) {
  return rot::quat_to_sixd(rot::quat_mul(rot::sixd_to_quat(d), yaw));
}

rot::YawSinCos rotate_yaw_pair(const rot::YawSinCos& r, double sd, double cd) {
  return {r.s * cd + r.c * sd, r.c * cd - r.s * sd};
}

}  // namespace

Trajectory augment_yaw(const Trajectory& traj, double delta_yaw) {
  Trajectory out = traj;
  if (delta_yaw == 0.0) {
    return out;
  }
  const rot::UnitQuaternion yaw = rot::UnitQuaternion::from_axis_angle({0, 1, 0}, delta_yaw);
  const double sd = std::sin(delta_yaw);
  const double cd = std::cos(delta_yaw);
  for (Sample& s : out.samples) {
    s.obs.theta_sw = compose_extra_yaw(s.obs.theta_sw, yaw);
    s.obs.r_h = rotate_yaw_pair(s.obs.r_h, sd, cd);
    s.state.lower_arm = compose_extra_yaw(s.state.lower_arm, yaw);
    s.state.upper_arm = compose_extra_yaw(s.state.upper_arm, yaw);
    s.state.r_h = rotate_yaw_pair(s.state.r_h, sd, cd);
  }
  return out;
}

// --- synthetic generator ---------------------------------------------------------

namespace {

struct ChannelEval {
  double angle = 0.0;
  double rate = 0.0;
  double accel = 0.0;
};

double channel_raw(const JointChannel& ch, double t) {
  double a = ch.rate * t;
  for (const Sinusoid& s : ch.sinusoids) {
    a += s.amp * std::sin(2.0 * M_PI * s.freq * t + s.phase);
  }
  return a;
}

ChannelEval eval_channel(const JointChannel& ch, double t, double shift) {
  ChannelEval e;
  e.angle = ch.rate * t + shift;
  e.rate = ch.rate;
  for (const Sinusoid& s : ch.sinusoids) {
    const double w = 2.0 * M_PI * s.freq;
    const double arg = w * t + s.phase;
    e.angle += s.amp * std::sin(arg);
    e.rate += s.amp * w * std::cos(arg);
    e.accel += -s.amp * w * w * std::sin(arg);
  }
  return e;
}

/// Left-fold of elementary rotations about fixed axes, tracking the exact
/// world-frame angular velocity and acceleration of the partial product.
struct ChainState {
  Mat3 r = Mat3::Identity();
  Vec3 omega = Vec3::Zero();
  Vec3 alpha = Vec3::Zero();

  void absorb(const Vec3& axis, const ChannelEval& ch) {
    const Vec3 wa = r * (ch.rate * axis);
    alpha += omega.cross(wa) + r * (ch.accel * axis);
    omega += wa;
    r = r * Eigen::AngleAxisd(ch.angle, axis).toRotationMatrix();
  }

  void absorb_const(const Mat3& f) { r = r * f; }

  /// Second time derivative of r * v.
  Vec3 point_accel(const Vec3& v) const {
    const Vec3 p = r * v;
    return alpha.cross(p) + omega.cross(omega.cross(p));
  }
};

struct MotionShifts {
  double sx, sz, el, yaw;
};

struct InstantSignals {
  Eigen::Vector4d watch_orientation;  // w x y z
  Vec3 lin_accel, gravity, gyro;
  double wrist_height;
  double yaw_angle;
  Mat3 lower, upper;  // body-frame segment rotations (state values)
};

constexpr double kGravity = 9.81;

InstantSignals eval_motion(const MotionSpec& m, const MotionShifts& sh, double t,
                           const kin::ArmConfig& arm, const Mat3& watch_mount) {
  const ChannelEval sx = eval_channel(m.shoulder_x, t, sh.sx);
  const ChannelEval sz = eval_channel(m.shoulder_z, t, sh.sz);
  const ChannelEval el = eval_channel(m.elbow_x, t, sh.el);
  const ChannelEval yw = eval_channel(m.yaw, t, sh.yaw);

  const Vec3 ex(1, 0, 0), ey(0, 1, 0), ez(0, 0, 1);
  ChainState yaw_chain;
  yaw_chain.absorb(ey, yw);
  ChainState upper_chain = yaw_chain;
  upper_chain.absorb(ex, sx);
  upper_chain.absorb(ez, sz);
  ChainState lower_chain = upper_chain;
  lower_chain.absorb(ex, el);

  const Vec3 v_u(0, -arm.upper_len, 0);
  const Vec3 v_l(0, -arm.lower_len, 0);
  const Mat3 watch_world = lower_chain.r * watch_mount;

  InstantSignals sig;
  sig.gyro = watch_world.transpose() * lower_chain.omega;
  sig.gravity = watch_world.transpose() * Vec3(0, -kGravity, 0);
  const Vec3 wrist_accel = yaw_chain.point_accel(arm.shoulder_offset) +
                           upper_chain.point_accel(v_u) + lower_chain.point_accel(v_l);
  sig.lin_accel = watch_world.transpose() * wrist_accel;
  const Vec3 wrist = yaw_chain.r * arm.shoulder_offset + upper_chain.r * v_u +
                     lower_chain.r * v_l;
  sig.wrist_height = wrist.y();
  sig.yaw_angle = yw.angle;
  const rot::UnitQuaternion wq = rot::UnitQuaternion::from_rotation_matrix(watch_world);
  sig.watch_orientation << wq.w, wq.x, wq.y, wq.z;
  // body-frame segment rotations: strip the yaw prefix
  sig.upper = yaw_chain.r.transpose() * upper_chain.r;
  sig.lower = yaw_chain.r.transpose() * lower_chain.r;
  return sig;
}

rot::SixD sixd_from_matrix(const Mat3& m) {
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Vec3 quantize(const Vec3& v) {
  return {quantize_f32(v.x()), quantize_f32(v.y()), quantize_f32(v.z())};
}

Eigen::Vector4d quantize4(const Eigen::Vector4d& v) {
  return {quantize_f32(v[0]), quantize_f32(v[1]), quantize_f32(v[2]), quantize_f32(v[3])};
}

MotionSpec jitter_motion(const MotionSpec& m, double jitter, Rng& rng) {
  MotionSpec out = m;
  auto shake = [&](JointChannel& ch) {
    for (Sinusoid& s : ch.sinusoids) {
      s.amp *= 1.0 + jitter * rng.uniform(-1.0, 1.0);
      s.phase += 0.5 * rng.uniform(-1.0, 1.0);
    }
  };
  shake(out.shoulder_x);
  shake(out.shoulder_z);
  shake(out.elbow_x);
  shake(out.yaw);
  return out;
}

}  // namespace

std::vector<SynthTrajectory> synthesize(const SynthConfig& cfg, Rng& rng) {
  if (!(cfg.duration_s > 0.0) || !(cfg.rate_hz > 0.0)) {
    throw InvalidConfig("synthesize: duration and rate must be positive");
  }
  if (cfg.oversample < 1 || cfg.phone_div < 1) {
    throw InvalidConfig("synthesize: oversample and phone_div must be >= 1");
  }
  if (cfg.motions.empty()) {
    throw InvalidConfig("synthesize: no motions configured");
  }

  const double dt = 1.0 / cfg.rate_hz;
  const long steps = std::lround(cfg.duration_s * cfg.rate_hz);
  const Mat3 watch_mount =
      Eigen::AngleAxisd(cfg.watch_mount_yaw_deg * M_PI / 180.0, Vec3(0, 1, 0))
          .toRotationMatrix();
  const double phone_mount = cfg.phone_mount_yaw_deg * M_PI / 180.0;
  const auto q1 = [&](double v) { return cfg.quantize ? quantize_f32(v) : v; };
  const auto q3 = [&](const Vec3& v) { return cfg.quantize ? quantize(v) : v; };
  const auto q4 = [&](const Eigen::Vector4d& v) { return cfg.quantize ? quantize4(v) : v; };

  std::vector<SynthTrajectory> out;
  out.reserve(cfg.motions.size());
  for (std::size_t mi = 0; mi < cfg.motions.size(); ++mi) {
    Rng motion_rng = rng.fork(mi);
    const MotionSpec motion =
        jitter_motion(cfg.motions[mi], cfg.amplitude_jitter, motion_rng);

    // shift every channel so t=0 matches the calibration rest posture
    MotionShifts sh;
    sh.sx = -channel_raw(motion.shoulder_x, 0.0);
    sh.sz = -channel_raw(motion.shoulder_z, 0.0);
    sh.el = -M_PI / 2.0 - channel_raw(motion.elbow_x, 0.0);
    sh.yaw = -channel_raw(motion.yaw, 0.0);

    const double wrist_height0 =
        eval_motion(motion, sh, 0.0, cfg.arm, watch_mount).wrist_height;

    SynthTrajectory st;
    st.trajectory.subject = cfg.subject;
    st.trajectory.motion = motion.name;
    Assembler assembler(dt);

    for (long k = 0; k < steps; ++k) {
      const double tk = static_cast<double>(k) * dt;
      if (k % cfg.phone_div == 0) {
        PhoneReading pr;
        pr.t = tk;
        const rot::UnitQuaternion pq = rot::UnitQuaternion::from_axis_angle(
            {0, 1, 0},
            eval_motion(motion, sh, tk, cfg.arm, watch_mount).yaw_angle + phone_mount);
        pr.orientation = q4({pq.w, pq.x, pq.y, pq.z});
        st.phone.push_back(pr);
        assembler.add_phone(pr);
      }

      // device-side averaging over the packet interval; gravity stays
      // instantaneous so its norm is exactly preserved under rotation
      Vec3 acc_sum = Vec3::Zero(), gyro_sum = Vec3::Zero();
      const int sub = (k == 0) ? 1 : cfg.oversample;
      for (int j = 1; j <= sub; ++j) {
        const double ts = (k == 0) ? 0.0
                                   : tk - dt + dt * static_cast<double>(j) /
                                                   static_cast<double>(sub);
        const InstantSignals s = eval_motion(motion, sh, ts, cfg.arm, watch_mount);
        acc_sum += s.lin_accel;
        gyro_sum += s.gyro;
      }
      const InstantSignals now = eval_motion(motion, sh, tk, cfg.arm, watch_mount);

      WatchReading wr;
      wr.t = tk;
      wr.orientation = q4(now.watch_orientation);
      wr.lin_accel = q3(acc_sum / sub);
      wr.gravity = q3(now.gravity);
      wr.gyro = q3(gyro_sum / sub);
      wr.pressure = q1(cfg.pressure_base_hpa +
                       cfg.pressure_per_m * (now.wrist_height - wrist_height0));
      st.watch.push_back(wr);

      std::optional<RawObservation> obs = assembler.add_watch(wr);
      if (obs) {
        Sample sample;
        sample.obs = *obs;
        sample.state.lower_arm = sixd_from_matrix(now.lower);
        sample.state.upper_arm = sixd_from_matrix(now.upper);
        sample.state.r_h = rot::YawSinCos::from_angle(now.yaw_angle);
        st.trajectory.samples.push_back(std::move(sample));
      }
    }
    out.push_back(std::move(st));
  }
  return out;
}

std::vector<Trajectory> synthesize_dataset(const SynthConfig& cfg, Rng& rng) {
  std::vector<Trajectory> out;
  for (SynthTrajectory& st : synthesize(cfg, rng)) {
    out.push_back(std::move(st.trajectory));
  }
  return out;
}

// --- motion catalog & config JSON ------------------------------------------------

namespace {

JointChannel channel(std::initializer_list<Sinusoid> sins, double rate = 0.0) {
  JointChannel ch;
  ch.sinusoids = sins;
  ch.rate = rate;
  return ch;
}

}  // namespace

std::vector<MotionSpec> default_motion_catalog() {
  std::vector<MotionSpec> motions(5);

  motions[0].name = "arm_swing";
  motions[0].shoulder_x = channel({{0.9, 0.5, 0.0}});
  motions[0].elbow_x = channel({{0.35, 0.5, 0.9}});
  motions[0].yaw = channel({{0.35, 0.08, 0.0}});

  motions[1].name = "wave";
  motions[1].shoulder_x = channel({{-0.8, 0.05, 0.0}});
  motions[1].elbow_x = channel({{0.55, 1.2, 0.0}});
  motions[1].yaw = channel({{0.2, 0.15, 0.6}});

  motions[2].name = "raise";
  motions[2].shoulder_x = channel({{2.0, 0.12, 0.0}});
  motions[2].elbow_x = channel({{1.2, 0.12, 0.0}});
  motions[2].shoulder_z = channel({{0.15, 0.3, 0.0}});

  motions[3].name = "box";
  motions[3].shoulder_x = channel({{0.7, 1.0, 0.0}});
  motions[3].shoulder_z = channel({{0.35, 0.9, 1.0}});
  motions[3].elbow_x = channel({{0.85, 1.0, 0.7}});
  motions[3].yaw = channel({{0.3, 0.2, 0.0}});

  motions[4].name = "clap";
  motions[4].shoulder_z = channel({{0.5, 0.8, 0.0}});
  motions[4].elbow_x = channel({{0.45, 0.8, 1.57}});
  motions[4].yaw = channel({{0.15, 0.1, 0.3}}, 0.05);

  return motions;
}

SynthConfig default_synth_config() {
  SynthConfig cfg;
  cfg.motions = default_motion_catalog();
  return cfg;
}

namespace {

json channel_to_json(const JointChannel& ch) {
  json j;
  j["rate"] = ch.rate;
  j["sinusoids"] = json::array();
  for (const Sinusoid& s : ch.sinusoids) {
    j["sinusoids"].push_back({{"amp", s.amp}, {"freq", s.freq}, {"phase", s.phase}});
  }
  return j;
}

JointChannel channel_from_json(const json& j) {
  JointChannel ch;
  ch.rate = j.value("rate", 0.0);
  if (j.contains("sinusoids")) {
    for (const json& js : j["sinusoids"]) {
      ch.sinusoids.push_back(
          {js.value("amp", 0.0), js.value("freq", 0.0), js.value("phase", 0.0)});
    }
  }
  return ch;
}

}  // namespace

std::string SynthConfig::to_json() const {
  json j;
  j["duration_s"] = duration_s;
  j["rate_hz"] = rate_hz;
  j["oversample"] = oversample;
  j["phone_div"] = phone_div;
  j["subject"] = subject;
  j["watch_mount_yaw_deg"] = watch_mount_yaw_deg;
  j["phone_mount_yaw_deg"] = phone_mount_yaw_deg;
  j["pressure_base_hpa"] = pressure_base_hpa;
  j["pressure_per_m"] = pressure_per_m;
  j["amplitude_jitter"] = amplitude_jitter;
  j["quantize"] = quantize;
  j["arm"] = {{"upper_len", arm.upper_len},
              {"lower_len", arm.lower_len},
              {"shoulder_offset",
               {arm.shoulder_offset.x(), arm.shoulder_offset.y(), arm.shoulder_offset.z()}}};
  j["motions"] = json::array();
  for (const MotionSpec& m : motions) {
    json jm;
    jm["name"] = m.name;
    jm["shoulder_x"] = channel_to_json(m.shoulder_x);
    jm["shoulder_z"] = channel_to_json(m.shoulder_z);
    jm["elbow_x"] = channel_to_json(m.elbow_x);
    jm["yaw"] = channel_to_json(m.yaw);
    j["motions"].push_back(std::move(jm));
  }
  return j.dump(2);
}

SynthConfig SynthConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("SynthConfig: bad JSON: ") + e.what());
  }
  SynthConfig cfg = default_synth_config();
  cfg.duration_s = j.value("duration_s", cfg.duration_s);
  cfg.rate_hz = j.value("rate_hz", cfg.rate_hz);
  cfg.oversample = j.value("oversample", cfg.oversample);
  cfg.phone_div = j.value("phone_div", cfg.phone_div);
  cfg.subject = j.value("subject", cfg.subject);
  cfg.watch_mount_yaw_deg = j.value("watch_mount_yaw_deg", cfg.watch_mount_yaw_deg);
  cfg.phone_mount_yaw_deg = j.value("phone_mount_yaw_deg", cfg.phone_mount_yaw_deg);
  cfg.pressure_base_hpa = j.value("pressure_base_hpa", cfg.pressure_base_hpa);
  cfg.pressure_per_m = j.value("pressure_per_m", cfg.pressure_per_m);
  cfg.amplitude_jitter = j.value("amplitude_jitter", cfg.amplitude_jitter);
  cfg.quantize = j.value("quantize", cfg.quantize);
  if (j.contains("arm")) {
    const json& ja = j["arm"];
    cfg.arm.upper_len = ja.value("upper_len", cfg.arm.upper_len);
    cfg.arm.lower_len = ja.value("lower_len", cfg.arm.lower_len);
    if (ja.contains("shoulder_offset")) {
      const auto v = ja["shoulder_offset"].get<std::vector<double>>();
      if (v.size() != 3) throw ParseError("SynthConfig: shoulder_offset needs 3 values");
      cfg.arm.shoulder_offset = {v[0], v[1], v[2]};
    }
  }
  if (j.contains("motions")) {
    cfg.motions.clear();
    for (const json& jm : j["motions"]) {
      MotionSpec m;
      m.name = jm.value("name", std::string("motion"));
      if (jm.contains("shoulder_x")) m.shoulder_x = channel_from_json(jm["shoulder_x"]);
      if (jm.contains("shoulder_z")) m.shoulder_z = channel_from_json(jm["shoulder_z"]);
      if (jm.contains("elbow_x")) m.elbow_x = channel_from_json(jm["elbow_x"]);
      if (jm.contains("yaw")) m.yaw = channel_from_json(jm["yaw"]);
      cfg.motions.push_back(std::move(m));
    }
  }
  return cfg;
}

// --- dataset files ------------------------------------------------------------------

namespace {

constexpr const char* kCsvHeader =
    "subject,motion,dt,sw_a1,sw_a2,sw_a3,sw_b1,sw_b2,sw_b3,v_x,v_y,v_z,"
    "la_x,la_y,la_z,gr_x,gr_y,gr_z,gy_x,gy_y,gy_z,rho,rh_sin,rh_cos,"
    "ql_a1,ql_a2,ql_a3,ql_b1,ql_b2,ql_b3,qu_a1,qu_a2,qu_a3,qu_b1,qu_b2,qu_b3,"
    "xrh_sin,xrh_cos";
constexpr int kCsvColumns = 38;

void append_number(std::string& line, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  line += ',';
  line += buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

double parse_number(const std::string& field, int line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v)) {
    throw ParseError("dataset line " + std::to_string(line_no) +
                     ": bad numeric field '" + field + "'");
  }
  return v;
}

}  // namespace

void save_dataset(const std::vector<Trajectory>& trajectories, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_dataset: cannot open " + path);
  f << kCsvHeader << "\n";
  std::string line;
  for (const Trajectory& t : trajectories) {
    if (t.subject.find(',') != std::string::npos ||
        t.motion.find(',') != std::string::npos) {
      throw InvalidConfig("save_dataset: subject/motion tags must not contain commas");
    }
    for (const Sample& s : t.samples) {
      line.clear();
      line += t.subject;
      line += ',';
      line += t.motion;
      const auto obs = s.obs.to_vector();
      for (int i = 0; i < kObsDim; ++i) append_number(line, obs[i]);
      const auto st = s.state.to_vector();
      for (int i = 0; i < kStateDim; ++i) append_number(line, st[i]);
      f << line << "\n";
    }
  }
  if (!f) throw IoError("save_dataset: write failed for " + path);
}

std::vector<Trajectory> load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) {
    throw SchemaMismatch("load_dataset: empty file (missing header)");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) {
    throw SchemaMismatch("load_dataset: unexpected header");
  }

  std::vector<Trajectory> out;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (static_cast<int>(fields.size()) != kCsvColumns) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": expected " +
                       std::to_string(kCsvColumns) + " columns, got " +
                       std::to_string(fields.size()));
    }
    Sample s;
    Eigen::Matrix<double, kObsDim, 1> obs;
    for (int i = 0; i < kObsDim; ++i) obs[i] = parse_number(fields[2 + i], line_no);
    Eigen::Matrix<double, kStateDim, 1> st;
    for (int i = 0; i < kStateDim; ++i) st[i] = parse_number(fields[2 + kObsDim + i], line_no);
    if (!(obs[0] > 0.0)) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": dt must be positive");
    }
    s.obs = RawObservation::from_vector(obs);
    s.state = PoseState::from_vector(st);

    if (out.empty() || out.back().subject != fields[0] || out.back().motion != fields[1]) {
      Trajectory t;
      t.subject = fields[0];
      t.motion = fields[1];
      out.push_back(std::move(t));
    }
    out.back().samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace wearpose::data
