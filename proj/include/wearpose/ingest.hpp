#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "wearpose/data.hpp"
#include "wearpose/kinematics.hpp"
#include "wearpose/models.hpp"

namespace wearpose::ingest {

enum class Device : std::uint8_t { kWatch = 0, kPhone = 1 };

/// Decoded wire datagram. Phone packets carry only the orientation.
struct SensorPacket {
  Device device = Device::kWatch;
  std::uint32_t seq = 0;
  double timestamp = 0.0;  // device monotonic clock, seconds
  Eigen::Vector4d orientation{1, 0, 0, 0};  // w, x, y, z
  rot::Vec3 lin_accel{0, 0, 0};
  rot::Vec3 gravity{0, 0, 0};
  rot::Vec3 gyro{0, 0, 0};
  double pressure = 0.0;
};

// Datagram layout (little-endian):
//   magic u32 = 0x57434150, version u8 = 1, device u8, reserved u16 = 0,
//   seq u32, timestamp f64, payload f32 x 14 (watch) or x 4 (phone).
constexpr std::uint32_t kMagic = 0x57434150;
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 20;
constexpr std::size_t kWatchPacketSize = kHeaderSize + 14 * 4;  // 76
constexpr std::size_t kPhonePacketSize = kHeaderSize + 4 * 4;   // 36

std::vector<std::uint8_t> encode(const SensorPacket& packet);

/// Throws BadMagic, UnsupportedVersion, BadLength, NonUnitQuaternion
/// (orientation deviating from unit norm by more than 1e-2).
SensorPacket decode(const std::uint8_t* bytes, std::size_t len);
SensorPacket decode(const std::vector<std::uint8_t>& bytes);

/// Capture file: raw datagrams, each prefixed with a u16-le length.
void write_capture(const std::string& path,
                   const std::vector<std::vector<std::uint8_t>>& datagrams);
std::vector<std::vector<std::uint8_t>> read_capture(const std::string& path);

/// Packets for one synthetic trajectory, in emission order (phone leads at
/// equal timestamps so calibration sees both devices).
std::vector<std::vector<std::uint8_t>> packets_from_synth(const data::SynthTrajectory& st);

/// Bounded single-producer/single-consumer datagram queue.
class PacketQueue {
 public:
  explicit PacketQueue(std::size_t capacity);

  /// Live policy: when full, evicts the oldest entry. Returns entries dropped.
  std::size_t push_drop_oldest(std::vector<std::uint8_t> datagram);
  /// Replay policy: blocks until space is available (lossless).
  void push_wait(std::vector<std::uint8_t> datagram);
  std::optional<std::vector<std::uint8_t>> pop(std::chrono::milliseconds timeout);
  void close();
  std::size_t size() const;

 private:
  const std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<std::vector<std::uint8_t>> items_;
  bool closed_ = false;
};

struct SessionConfig {
  std::uint64_t seed = 0;
  double nominal_dt = 1.0 / 80.0;  // first-interval dt; no previous packet exists
  double stale_after_s = 1.0;
  kin::ArmConfig arm;
};

struct SessionStats {
  long watch_packets = 0;
  long phone_packets = 0;
  long estimates = 0;
  long decode_errors = 0;
  long out_of_order = 0;
  long dropped_uncalibrated = 0;
  long degraded = 0;
  long queue_dropped = 0;
};

struct EstimateRecord {
  enkf::FilterEstimate estimate;
  kin::ArmPose pose;
  bool degraded = false;
};

using EstimateSink = std::function<void(const EstimateRecord&)>;

std::string to_json_line(const EstimateRecord& record);

/// Decodes datagrams, keeps calibration, and runs the filter: one estimate
/// per watch packet (the phone contributes its latest known orientation).
/// A phone silent longer than `stale_after_s` downgrades the step to
/// prediction-only; out-of-order sequence numbers are dropped and counted.
class Session {
 public:
  Session(const models::ModelBundle& bundle, const SessionConfig& cfg, EstimateSink sink);

  void consume(const std::uint8_t* bytes, std::size_t len);
  void consume(const std::vector<std::uint8_t>& datagram) { consume(datagram.data(), datagram.size()); }
  const SessionStats& stats() const { return stats_; }
  SessionStats& stats() { return stats_; }

 private:
  void handle_watch(const SensorPacket& packet);

  SessionConfig cfg_;
  EstimateSink sink_;
  data::Assembler assembler_;
  models::FilterSession filter_;
  SessionStats stats_;
  std::optional<std::uint32_t> last_seq_[2];
  std::optional<double> last_watch_t_;
  std::optional<double> last_phone_t_;
  kin::ArmPose last_pose_{};
};

/// Blocking datagram source. next() returns nullopt at end of stream.
class PacketSource {
 public:
  virtual ~PacketSource() = default;
  virtual std::optional<std::vector<std::uint8_t>> next() = 0;
};

enum class ReplaySpeed { kRealtime, kMax };

class CaptureSource : public PacketSource {
 public:
  CaptureSource(const std::string& path, ReplaySpeed speed);
  std::optional<std::vector<std::uint8_t>> next() override;

 private:
  std::vector<std::vector<std::uint8_t>> datagrams_;
  std::size_t index_ = 0;
  ReplaySpeed speed_;
  std::optional<double> first_packet_t_;
  std::chrono::steady_clock::time_point start_;
  bool started_ = false;
};

/// UDP listener bound to a local port. stop() unblocks next().
class UdpSource : public PacketSource {
 public:
  explicit UdpSource(int port);
  ~UdpSource() override;
  std::optional<std::vector<std::uint8_t>> next() override;
  void stop();
  int port() const { return port_; }

 private:
  int fd_ = -1;
  int port_ = 0;
  bool stopped_ = false;
};

struct PumpOptions {
  std::size_t queue_capacity = 256;
  bool drop_oldest = true;  // false = lossless (replay)
};

/// Two execution contexts: a receiver thread feeding the bounded queue and
/// the calling thread draining it into the session.
SessionStats run_session(PacketSource& source, Session& session, const PumpOptions& options);

/// Minimal newline-delimited JSON broadcaster on a local TCP port.
class JsonlTcpServer {
 public:
  explicit JsonlTcpServer(int port);
  ~JsonlTcpServer();
  void broadcast(const std::string& line);
  int port() const { return port_; }

 private:
  void accept_loop();
  int listen_fd_ = -1;
  int port_ = 0;
  std::mutex mutex_;
  std::vector<int> clients_;
  bool stopped_ = false;
  std::thread accept_thread_;
};

}  // namespace wearpose::ingest
