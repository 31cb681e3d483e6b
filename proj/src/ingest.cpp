#include "wearpose/ingest.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace wearpose::ingest {

using nlohmann::json;

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
  }
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const std::uint8_t* p) {
  const std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | p[i];
  }
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode(const SensorPacket& packet) {
  std::vector<std::uint8_t> out;
  const bool watch = packet.device == Device::kWatch;
  out.reserve(watch ? kWatchPacketSize : kPhonePacketSize);
  put_u32(out, kMagic);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(packet.device));
  put_u16(out, 0);  // reserved
  put_u32(out, packet.seq);
  put_f64(out, packet.timestamp);
  for (int i = 0; i < 4; ++i) {
    put_f32(out, static_cast<float>(packet.orientation[i]));
  }
  if (watch) {
    for (const rot::Vec3* v : {&packet.lin_accel, &packet.gravity, &packet.gyro}) {
      put_f32(out, static_cast<float>(v->x()));
      put_f32(out, static_cast<float>(v->y()));
      put_f32(out, static_cast<float>(v->z()));
    }
    put_f32(out, static_cast<float>(packet.pressure));
  }
  return out;
}

SensorPacket decode(const std::uint8_t* bytes, std::size_t len) {
  if (len < kHeaderSize) {
    throw BadLength("decode: datagram shorter than header");
  }
  if (get_u32(bytes) != kMagic) {
    throw BadMagic("decode: bad magic");
  }
  if (bytes[4] != kVersion) {
    throw UnsupportedVersion("decode: unsupported version " + std::to_string(bytes[4]));
  }
  const std::uint8_t device = bytes[5];
  if (device > 1) {
    throw BadLength("decode: unknown device id " + std::to_string(device));
  }
  const bool watch = device == 0;
  const std::size_t expected = watch ? kWatchPacketSize : kPhonePacketSize;
  if (len != expected) {
    throw BadLength("decode: expected " + std::to_string(expected) + " bytes, got " +
                    std::to_string(len));
  }

  SensorPacket p;
  p.device = watch ? Device::kWatch : Device::kPhone;
  p.seq = get_u32(bytes + 8);
  p.timestamp = get_f64(bytes + 12);
  const std::uint8_t* payload = bytes + kHeaderSize;
  for (int i = 0; i < 4; ++i) {
    p.orientation[i] = static_cast<double>(get_f32(payload + 4 * i));
  }
  const double norm = p.orientation.norm();
  if (std::abs(norm - 1.0) > 1e-2) {
    throw NonUnitQuaternion("decode: orientation norm " + std::to_string(norm));
  }
  if (watch) {
    auto vec3_at = [&](int idx) {
      return rot::Vec3(get_f32(payload + 4 * idx), get_f32(payload + 4 * (idx + 1)),
                       get_f32(payload + 4 * (idx + 2)));
    };
    p.lin_accel = vec3_at(4);
    p.gravity = vec3_at(7);
    p.gyro = vec3_at(10);
    p.pressure = static_cast<double>(get_f32(payload + 4 * 13));
  }
  return p;
}

SensorPacket decode(const std::vector<std::uint8_t>& bytes) {
  return decode(bytes.data(), bytes.size());
}

void write_capture(const std::string& path,
                   const std::vector<std::vector<std::uint8_t>>& datagrams) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_capture: cannot open " + path);
  for (const auto& d : datagrams) {
    if (d.size() > 0xffff) throw InvalidConfig("write_capture: datagram too large");
    const std::uint8_t lo = static_cast<std::uint8_t>(d.size() & 0xff);
    const std::uint8_t hi = static_cast<std::uint8_t>((d.size() >> 8) & 0xff);
    f.put(static_cast<char>(lo));
    f.put(static_cast<char>(hi));
    f.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size()));
  }
  if (!f) throw IoError("write_capture: write failed for " + path);
}

std::vector<std::vector<std::uint8_t>> read_capture(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_capture: cannot open " + path);
  std::vector<std::vector<std::uint8_t>> out;
  while (true) {
    int lo = f.get();
    if (lo == EOF) break;
    int hi = f.get();
    if (hi == EOF) throw ParseError("read_capture: truncated length prefix");
    const std::size_t len = static_cast<std::size_t>(lo) | (static_cast<std::size_t>(hi) << 8);
    std::vector<std::uint8_t> d(len);
    f.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(len));
    if (static_cast<std::size_t>(f.gcount()) != len) {
      throw ParseError("read_capture: truncated datagram");
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> packets_from_synth(const data::SynthTrajectory& st) {
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(st.watch.size() + st.phone.size());
  std::size_t wi = 0, pi = 0;
  std::uint32_t watch_seq = 0, phone_seq = 0;
  while (wi < st.watch.size() || pi < st.phone.size()) {
    // phone first at equal timestamps so the first watch packet can calibrate
    const bool take_phone =
        pi < st.phone.size() &&
        (wi >= st.watch.size() || st.phone[pi].t <= st.watch[wi].t);
    SensorPacket p;
    if (take_phone) {
      p.device = Device::kPhone;
      p.seq = phone_seq++;
      p.timestamp = st.phone[pi].t;
      p.orientation = st.phone[pi].orientation;
      ++pi;
    } else {
      const data::WatchReading& r = st.watch[wi];
      p.device = Device::kWatch;
      p.seq = watch_seq++;
      p.timestamp = r.t;
      p.orientation = r.orientation;
      p.lin_accel = r.lin_accel;
      p.gravity = r.gravity;
      p.gyro = r.gyro;
      p.pressure = r.pressure;
      ++wi;
    }
    out.push_back(encode(p));
  }
  return out;
}

// --- queue -----------------------------------------------------------------

PacketQueue::PacketQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw InvalidConfig("PacketQueue: capacity must be > 0");
}

std::size_t PacketQueue::push_drop_oldest(std::vector<std::uint8_t> datagram) {
  std::size_t dropped = 0;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (closed_) return 0;
    while (items_.size() >= capacity_) {
      items_.pop_front();
      ++dropped;
    }
    items_.push_back(std::move(datagram));
  }
  not_empty_.notify_one();
  return dropped;
}

void PacketQueue::push_wait(std::vector<std::uint8_t> datagram) {
  {
    std::unique_lock<std::mutex> lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return;
    items_.push_back(std::move(datagram));
  }
  not_empty_.notify_one();
}

std::optional<std::vector<std::uint8_t>> PacketQueue::pop(std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lock(mutex_);
  if (!not_empty_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); })) {
    return std::nullopt;
  }
  if (items_.empty()) {
    return std::nullopt;  // closed and drained
  }
  std::vector<std::uint8_t> d = std::move(items_.front());
  items_.pop_front();
  lock.unlock();
  not_full_.notify_one();
  return d;
}

void PacketQueue::close() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    closed_ = true;
  }
  not_empty_.notify_all();
  not_full_.notify_all();
}

std::size_t PacketQueue::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return items_.size();
}

// --- session ------------------------------------------------------------------

std::string to_json_line(const EstimateRecord& record) {
  json j;
  j["t"] = record.estimate.timestamp;
  j["mean"] = std::vector<double>(record.estimate.mean.data(),
                                  record.estimate.mean.data() + record.estimate.mean.size());
  j["spread"] = std::vector<double>(
      record.estimate.spread.data(),
      record.estimate.spread.data() + record.estimate.spread.size());
  j["elbow"] = {record.pose.elbow.x(), record.pose.elbow.y(), record.pose.elbow.z()};
  j["wrist"] = {record.pose.wrist.x(), record.pose.wrist.y(), record.pose.wrist.z()};
  j["degraded"] = record.degraded;
  j["warmup"] = record.estimate.warmup;
  return j.dump();
}

Session::Session(const models::ModelBundle& bundle, const SessionConfig& cfg, EstimateSink sink)
    : cfg_(cfg), sink_(std::move(sink)), assembler_(cfg.nominal_dt),
      filter_(bundle, cfg.seed) {}

void Session::consume(const std::uint8_t* bytes, std::size_t len) {
  SensorPacket packet;
  try {
    packet = decode(bytes, len);
  } catch (const Error&) {
    ++stats_.decode_errors;
    return;
  }

  auto& last_seq = last_seq_[static_cast<int>(packet.device)];
  if (last_seq && packet.seq <= *last_seq) {
    ++stats_.out_of_order;
    return;
  }
  last_seq = packet.seq;

  if (packet.device == Device::kPhone) {
    ++stats_.phone_packets;
    data::PhoneReading reading;
    reading.t = packet.timestamp;
    reading.orientation = packet.orientation;
    assembler_.add_phone(reading);
    last_phone_t_ = packet.timestamp;
    return;
  }
  ++stats_.watch_packets;
  handle_watch(packet);
}

void Session::handle_watch(const SensorPacket& packet) {
  data::WatchReading reading;
  reading.t = packet.timestamp;
  reading.orientation = packet.orientation;
  reading.lin_accel = packet.lin_accel;
  reading.gravity = packet.gravity;
  reading.gyro = packet.gyro;
  reading.pressure = packet.pressure;

  const bool watch_stale =
      last_watch_t_ && packet.timestamp - *last_watch_t_ > cfg_.stale_after_s;
  last_watch_t_ = packet.timestamp;
  const bool phone_stale =
      !last_phone_t_ || packet.timestamp - *last_phone_t_ > cfg_.stale_after_s;

  std::optional<data::RawObservation> obs;
  try {
    obs = assembler_.add_watch(reading);
  } catch (const Error&) {
    ++stats_.dropped_uncalibrated;
    return;
  }
  if (!obs) {
    ++stats_.dropped_uncalibrated;
    return;
  }

  EstimateRecord record;
  const bool skip_update = phone_stale && assembler_.calibrated();
  if (skip_update) {
    // phone silent: keep filtering on prediction only
    record.estimate = filter_.predict_only(packet.timestamp);
  } else {
    record.estimate = filter_.step(*obs, packet.timestamp);
  }
  record.degraded = watch_stale || phone_stale;
  if (record.degraded) ++stats_.degraded;

  try {
    const data::PoseState state = data::PoseState::from_vector(record.estimate.mean);
    last_pose_ = kin::forward_kinematics(state.upper_arm, state.lower_arm, state.r_h, cfg_.arm);
  } catch (const DegenerateSixD&) {
    record.degraded = true;  // keep the last good pose
  }
  record.pose = last_pose_;
  ++stats_.estimates;
  if (sink_) sink_(record);
}

// --- sources --------------------------------------------------------------------

CaptureSource::CaptureSource(const std::string& path, ReplaySpeed speed)
    : datagrams_(read_capture(path)), speed_(speed) {}

std::optional<std::vector<std::uint8_t>> CaptureSource::next() {
  if (index_ >= datagrams_.size()) {
    return std::nullopt;
  }
  std::vector<std::uint8_t> d = datagrams_[index_++];
  if (speed_ == ReplaySpeed::kRealtime && d.size() >= kHeaderSize) {
    const double t = get_f64(d.data() + 12);
    if (!started_) {
      started_ = true;
      first_packet_t_ = t;
      start_ = std::chrono::steady_clock::now();
    } else {
      const double offset = t - *first_packet_t_;
      const auto due = start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(offset));
      std::this_thread::sleep_until(due);
    }
  }
  return d;
}

UdpSource::UdpSource(int port) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw IoError("UdpSource: socket() failed");
  int reuse = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &reuse, sizeof(reuse));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("UdpSource: cannot bind port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

UdpSource::~UdpSource() {
  if (fd_ >= 0) ::close(fd_);
}

std::optional<std::vector<std::uint8_t>> UdpSource::next() {
  while (!stopped_) {
    pollfd pfd{fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, 100);
    if (rc < 0) return std::nullopt;
    if (rc == 0) continue;
    std::vector<std::uint8_t> buf(2048);
    const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n <= 0) continue;
    buf.resize(static_cast<std::size_t>(n));
    return buf;
  }
  return std::nullopt;
}

void UdpSource::stop() { stopped_ = true; }

SessionStats run_session(PacketSource& source, Session& session, const PumpOptions& options) {
  PacketQueue queue(options.queue_capacity);
  std::size_t dropped = 0;
  std::thread producer([&] {
    while (auto datagram = source.next()) {
      if (options.drop_oldest) {
        dropped += queue.push_drop_oldest(std::move(*datagram));
      } else {
        queue.push_wait(std::move(*datagram));
      }
    }
    queue.close();
  });
  while (auto datagram = queue.pop(std::chrono::milliseconds(200))) {
    session.consume(*datagram);
  }
  producer.join();
  // drain anything left after close
  while (auto datagram = queue.pop(std::chrono::milliseconds(0))) {
    session.consume(*datagram);
  }
  session.stats().queue_dropped += static_cast<long>(dropped);
  return session.stats();
}

// --- jsonl tcp ---------------------------------------------------------------------

JsonlTcpServer::JsonlTcpServer(int port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("JsonlTcpServer: socket() failed");
  int reuse = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &reuse, sizeof(reuse));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 4) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw IoError("JsonlTcpServer: cannot listen on port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void JsonlTcpServer::accept_loop() {
  while (!stopped_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, 100);
    if (rc <= 0) continue;
    const int client = ::accept(listen_fd_, nullptr, nullptr);
    if (client >= 0) {
      std::lock_guard<std::mutex> lock(mutex_);
      clients_.push_back(client);
    }
  }
}

void JsonlTcpServer::broadcast(const std::string& line) {
  std::lock_guard<std::mutex> lock(mutex_);
  for (auto it = clients_.begin(); it != clients_.end();) {
    const std::string payload = line + "\n";
    const ssize_t n = ::send(*it, payload.data(), payload.size(), MSG_NOSIGNAL);
    if (n < 0) {
      ::close(*it);
      it = clients_.erase(it);
    } else {
      ++it;
    }
  }
}

JsonlTcpServer::~JsonlTcpServer() {
  stopped_ = true;
  if (accept_thread_.joinable()) accept_thread_.join();
  std::lock_guard<std::mutex> lock(mutex_);
  for (int c : clients_) ::close(c);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

}  // namespace wearpose::ingest
