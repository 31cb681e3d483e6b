// wearpose: train and serve the wearable arm-pose filter.
//
// Subcommands: synth | train | eval | serve | replay. Configuration comes
// from an optional JSON file plus flag overrides; every command honors
// --seed with full determinism. Exit codes: 0 success, 1 usage,
// 2 data error, 3 runtime error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "wearpose/data.hpp"
#include "wearpose/ingest.hpp"
#include "wearpose/models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wearpose;

namespace {

std::atomic<bool> g_interrupted{false};

void handle_signal(int) { g_interrupted.store(true); }

struct AppOptions {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string dataset;
  std::string checkpoint;
  std::string capture;
  std::string output;
  int port = 46000;
  kin::ArmConfig arm;

  // synth
  std::string synth_config_path;
  std::string captures_dir;
  double duration = 20.0;
  int yaws = 8;
  int repeats = 1;

  // train
  models::TrainConfig train;
  std::string resume;
  std::string arch = "default";

  // eval
  std::string baseline_dataset;
  int limit_traj = 0;

  // replay/serve
  std::string speed = "max";
  int json_port = 0;
};

void apply_config_file(AppOptions& opt) {
  if (opt.config_path.empty()) return;
  std::ifstream f(opt.config_path);
  if (!f) throw IoError("cannot open config file " + opt.config_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad config JSON: ") + e.what());
  }
  opt.seed = j.value("seed", opt.seed);
  opt.dataset = j.value("dataset", opt.dataset);
  opt.checkpoint = j.value("checkpoint", opt.checkpoint);
  opt.capture = j.value("capture", opt.capture);
  opt.output = j.value("output", opt.output);
  opt.port = j.value("port", opt.port);
  if (j.contains("arm")) {
    const json& a = j["arm"];
    opt.arm.upper_len = a.value("upper_len", opt.arm.upper_len);
    opt.arm.lower_len = a.value("lower_len", opt.arm.lower_len);
    if (a.contains("shoulder_offset")) {
      const auto v = a["shoulder_offset"].get<std::vector<double>>();
      if (v.size() != 3) throw ParseError("arm.shoulder_offset needs 3 values");
      opt.arm.shoulder_offset = {v[0], v[1], v[2]};
    }
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    opt.train.epochs = t.value("epochs", opt.train.epochs);
    opt.train.batch_size = t.value("batch_size", opt.train.batch_size);
    opt.train.lr = t.value("lr", opt.train.lr);
    opt.train.ensemble = t.value("ensemble", opt.train.ensemble);
    opt.train.bptt_steps = t.value("bptt_steps", opt.train.bptt_steps);
    opt.train.stride = t.value("stride", opt.train.stride);
    opt.train.max_windows_per_epoch =
        t.value("max_windows_per_epoch", opt.train.max_windows_per_epoch);
  }
  if (j.contains("synth") && j["synth"].is_string()) {
    opt.synth_config_path = j["synth"].get<std::string>();
  }
}

models::BundleConfig bundle_config_for(const std::string& arch, int window, int ensemble) {
  models::BundleConfig cfg;
  cfg.window = window;
  cfg.ensemble = ensemble;
  if (arch == "default") {
    // paper-scale defaults
  } else if (arch == "small") {
    cfg.transition_hidden = {64, 64};
    cfg.sensor_hidden = {96, 96};
    cfg.observation_hidden = {48, 48};
    cfg.noise_hidden = {32};
  } else if (arch == "tiny") {
    cfg.transition_hidden = {16};
    cfg.sensor_hidden = {16};
    cfg.observation_hidden = {32, 32};
    cfg.noise_hidden = {16};
  } else {
    throw InvalidConfig("unknown --arch preset: " + arch);
  }
  return cfg;
}

data::SynthConfig load_synth_config(const AppOptions& opt) {
  if (opt.synth_config_path.empty()) {
    data::SynthConfig cfg = data::default_synth_config();
    cfg.duration_s = opt.duration;
    return cfg;
  }
  std::ifstream f(opt.synth_config_path);
  if (!f) throw IoError("cannot open synth config " + opt.synth_config_path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data::SynthConfig::from_json(text);
}

int cmd_synth(const AppOptions& opt) {
  if (opt.output.empty()) throw InvalidConfig("synth: --output is required");
  data::SynthConfig synth_cfg = load_synth_config(opt);

  Rng rng(opt.seed);
  std::vector<data::Trajectory> dataset;
  std::vector<data::SynthTrajectory> bases;
  for (int rep = 0; rep < opt.repeats; ++rep) {
    data::SynthConfig cfg = synth_cfg;
    if (opt.repeats > 1) cfg.subject = synth_cfg.subject + "-" + std::to_string(rep);
    for (auto& st : data::synthesize(cfg, rng)) {
      bases.push_back(std::move(st));
    }
  }
  for (const auto& st : bases) {
    for (int k = 0; k < opt.yaws; ++k) {
      const double delta = 2.0 * M_PI * static_cast<double>(k) / opt.yaws;
      data::Trajectory t = data::augment_yaw(st.trajectory, delta);
      t.motion += "/y" + std::to_string(k);
      dataset.push_back(std::move(t));
    }
  }
  data::save_dataset(dataset, opt.output);

  if (!opt.captures_dir.empty()) {
    fs::create_directories(opt.captures_dir);
    for (const auto& st : bases) {
      std::string name = st.trajectory.subject + "_" + st.trajectory.motion + ".capture";
      for (char& c : name) {
        if (c == '/' || c == ' ') c = '_';
      }
      ingest::write_capture((fs::path(opt.captures_dir) / name).string(),
                            ingest::packets_from_synth(st));
    }
  }

  std::map<std::string, std::size_t> per_motion;
  for (const auto& t : dataset) per_motion[t.motion] += t.samples.size();
  std::size_t total = 0;
  for (const auto& [motion, count] : per_motion) {
    std::cout << motion << ": " << count << " samples\n";
    total += count;
  }
  std::cout << "trajectories: " << dataset.size() << "\n";
  std::cout << "total samples: " << total << "\n";
  std::cout << "dataset: " << opt.output << "\n";
  return 0;
}

int cmd_train(const AppOptions& opt) {
  if (opt.dataset.empty()) throw InvalidConfig("train: --dataset is required");
  if (opt.checkpoint.empty()) throw InvalidConfig("train: --checkpoint is required");
  const auto dataset = data::load_dataset(opt.dataset);

  models::TrainConfig tc = opt.train;
  tc.seed = opt.seed;

  models::ModelBundle bundle = [&] {
    if (!opt.resume.empty()) {
      return models::ModelBundle::load(opt.resume);
    }
    models::BundleConfig bc = bundle_config_for(opt.arch, 5, tc.ensemble);
    Rng rng(Rng::derive(opt.seed, 0x1417ULL));
    models::ModelBundle fresh = models::ModelBundle::init(bc, rng);
    models::standardize_sensor_input(fresh, dataset);
    return fresh;
  }();

  std::cout << "train: epochs=" << tc.epochs << " batch=" << tc.batch_size
            << " lr=" << tc.lr << " ensemble=" << tc.ensemble
            << " window=" << bundle.cfg.window << " bptt=" << tc.bptt_steps
            << " seed=" << opt.seed << "\n";

  const models::TrainResult result = models::train(bundle, dataset, tc);
  result.bundle.save(opt.checkpoint);

  std::ofstream metrics(fs::path(opt.checkpoint) / "metrics.jsonl");
  for (const auto& m : result.metrics) {
    json j;
    j["epoch"] = m.epoch;
    j["train_total"] = m.train.total;
    j["train_e2e"] = m.train.end_to_end;
    j["train_transition"] = m.train.transition;
    j["train_sensor"] = m.train.sensor;
    j["val_e2e"] = m.val_end_to_end;
    j["best"] = m.best;
    metrics << j.dump() << "\n";
    std::cout << "epoch " << m.epoch << ": train " << m.train.total << " val "
              << m.val_end_to_end << (m.best ? " *" : "") << "\n";
  }
  std::cout << "checkpoint: " << opt.checkpoint << "\n";
  return 0;
}

int cmd_eval(const AppOptions& opt) {
  if (opt.dataset.empty()) throw InvalidConfig("eval: --dataset is required");
  if (opt.checkpoint.empty()) throw InvalidConfig("eval: --checkpoint is required");
  auto dataset = data::load_dataset(opt.dataset);
  if (dataset.empty()) throw EmptyDataset("eval: dataset has no trajectories");
  if (opt.limit_traj > 0 && static_cast<int>(dataset.size()) > opt.limit_traj) {
    dataset.resize(opt.limit_traj);
  }
  const models::ModelBundle bundle = models::ModelBundle::load(opt.checkpoint);

  const models::EvalMetrics metrics = models::evaluate(bundle, dataset, opt.arm, opt.seed);
  const enkf::Vector baseline_state = models::mean_state(
      opt.baseline_dataset.empty() ? dataset : data::load_dataset(opt.baseline_dataset));
  const models::EvalMetrics baseline =
      models::evaluate_constant(baseline_state, dataset, opt.arm);

  std::cout << "wrist_cm: " << metrics.wrist_cm << "\n";
  std::cout << "elbow_cm: " << metrics.elbow_cm << "\n";
  std::cout << "hip_deg: " << metrics.hip_deg << "\n";
  std::cout << "baseline_wrist_cm: " << baseline.wrist_cm << "\n";
  std::cout << "baseline_elbow_cm: " << baseline.elbow_cm << "\n";
  std::cout << "baseline_hip_deg: " << baseline.hip_deg << "\n";
  std::cout << "throughput_hz: " << metrics.throughput_hz << "\n";
  std::cout << "steps: " << metrics.steps << "\n";
  // published reference errors on real data, for context only
  std::cout << "reference (real-data): wrist 9.94 cm, elbow 9.27 cm, hip 7.75 deg\n";

  // per-motion breakdown
  std::map<std::string, std::vector<data::Trajectory>> by_motion;
  for (const auto& t : dataset) by_motion[t.motion].push_back(t);
  for (const auto& [motion, trajs] : by_motion) {
    const models::EvalMetrics m = models::evaluate(bundle, trajs, opt.arm, opt.seed);
    std::cout << "motion " << motion << ": wrist_cm " << m.wrist_cm << " elbow_cm "
              << m.elbow_cm << " hip_deg " << m.hip_deg << "\n";
  }
  return 0;
}

int run_stream(const AppOptions& opt, ingest::PacketSource& source, bool lossless) {
  const models::ModelBundle bundle = models::ModelBundle::load(opt.checkpoint);
  ingest::SessionConfig scfg;
  scfg.seed = opt.seed;
  scfg.arm = opt.arm;

  std::ofstream file_out;
  if (!opt.output.empty()) {
    file_out.open(opt.output);
    if (!file_out) throw IoError("cannot open output file " + opt.output);
  }
  std::unique_ptr<ingest::JsonlTcpServer> tcp;
  if (opt.json_port > 0) {
    tcp = std::make_unique<ingest::JsonlTcpServer>(opt.json_port);
    std::cerr << "jsonl listening on tcp port " << tcp->port() << "\n";
  }

  const auto started = std::chrono::steady_clock::now();
  ingest::Session session(bundle, scfg, [&](const ingest::EstimateRecord& r) {
    const std::string line = ingest::to_json_line(r);
    if (file_out.is_open()) {
      file_out << line << "\n";
    } else {
      std::cout << line << "\n";
    }
    if (tcp) tcp->broadcast(line);
  });

  ingest::PumpOptions pump;
  pump.drop_oldest = !lossless;
  const ingest::SessionStats stats = ingest::run_session(source, session, pump);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (file_out.is_open()) file_out.flush();

  std::cerr << "estimates: " << stats.estimates << "\n";
  std::cerr << "watch_packets: " << stats.watch_packets
            << " phone_packets: " << stats.phone_packets << "\n";
  std::cerr << "decode_errors: " << stats.decode_errors
            << " out_of_order: " << stats.out_of_order
            << " queue_dropped: " << stats.queue_dropped << "\n";
  if (seconds > 0.0) {
    std::cerr << "throughput_hz: " << static_cast<double>(stats.estimates) / seconds << "\n";
  }
  return 0;
}

int cmd_replay(const AppOptions& opt) {
  if (opt.checkpoint.empty()) throw InvalidConfig("replay: --checkpoint is required");
  if (opt.capture.empty()) throw InvalidConfig("replay: --capture is required");
  const auto speed =
      opt.speed == "realtime" ? ingest::ReplaySpeed::kRealtime : ingest::ReplaySpeed::kMax;
  ingest::CaptureSource source(opt.capture, speed);
  return run_stream(opt, source, /*lossless=*/true);
}

int cmd_serve(const AppOptions& opt) {
  if (opt.checkpoint.empty()) throw InvalidConfig("serve: --checkpoint is required");
  ingest::UdpSource source(opt.port);
  std::cerr << "listening on udp port " << source.port() << "\n";

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::atomic<bool> done{false};
  std::thread watchdog([&] {
    while (!done.load() && !g_interrupted.load()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    source.stop();
  });
  const int rc = run_stream(opt, source, /*lossless=*/false);
  done.store(true);
  watchdog.join();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wearable arm-pose estimation: synthesize, train, evaluate, stream"};
  app.require_subcommand(1);

  AppOptions opt;
  app.add_option("--config", opt.config_path, "JSON config file");
  app.add_option("--seed", opt.seed, "master random seed");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--output", opt.output, "output CSV path");
  synth->add_option("--captures", opt.captures_dir, "directory for packet captures");
  synth->add_option("--synth-config", opt.synth_config_path, "synth config JSON");
  synth->add_option("--duration", opt.duration, "seconds per motion");
  synth->add_option("--yaws", opt.yaws, "yaw augmentation variants");
  synth->add_option("--repeats", opt.repeats, "repeats per motion with fresh phases");

  CLI::App* train = app.add_subcommand("train", "train the filter models");
  train->add_option("--dataset", opt.dataset, "training dataset CSV");
  train->add_option("--checkpoint", opt.checkpoint, "output checkpoint directory");
  train->add_option("--resume", opt.resume, "checkpoint to resume from");
  train->add_option("--arch", opt.arch, "architecture preset: default|small|tiny");
  train->add_option("--epochs", opt.train.epochs, "training epochs");
  train->add_option("--batch", opt.train.batch_size, "batch size");
  train->add_option("--lr", opt.train.lr, "learning rate");
  train->add_option("--ensemble", opt.train.ensemble, "ensemble size");
  train->add_option("--bptt", opt.train.bptt_steps, "filter steps per training window");
  train->add_option("--stride", opt.train.stride, "window stride");
  train->add_option("--max-windows", opt.train.max_windows_per_epoch,
                    "cap on windows per epoch (0 = all)");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--dataset", opt.dataset, "evaluation dataset CSV");
  eval_cmd->add_option("--checkpoint", opt.checkpoint, "checkpoint directory");
  eval_cmd->add_option("--baseline-dataset", opt.baseline_dataset,
                       "dataset for the constant-mean baseline (default: eval dataset)");
  eval_cmd->add_option("--limit-traj", opt.limit_traj, "evaluate at most N trajectories");

  CLI::App* serve = app.add_subcommand("serve", "estimate live from UDP packets");
  serve->add_option("--checkpoint", opt.checkpoint, "checkpoint directory");
  serve->add_option("--port", opt.port, "UDP listen port");
  serve->add_option("--output", opt.output, "JSONL output file (default stdout)");
  serve->add_option("--json-port", opt.json_port, "also broadcast JSONL on this TCP port");

  CLI::App* replay = app.add_subcommand("replay", "estimate from a packet capture");
  replay->add_option("--checkpoint", opt.checkpoint, "checkpoint directory");
  replay->add_option("--capture", opt.capture, "capture file");
  replay->add_option("--speed", opt.speed, "realtime|max")
      ->check(CLI::IsMember({"realtime", "max"}));
  replay->add_option("--output", opt.output, "JSONL output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    apply_config_file(opt);
    if (synth->parsed()) return cmd_synth(opt);
    if (train->parsed()) return cmd_train(opt);
    if (eval_cmd->parsed()) return cmd_eval(opt);
    if (serve->parsed()) return cmd_serve(opt);
    if (replay->parsed()) return cmd_replay(opt);
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_data_error(e) || dynamic_cast<const IoError*>(&e) != nullptr ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
