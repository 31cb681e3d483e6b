#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(WEARPOSE_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (std::fgets(buf.data(), buf.size(), pipe)) {
    result.output += buf.data();
  }
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("wearpose_cli_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("usage and exit codes") {
  CHECK(run("--help").exit_code == 0);
  CHECK(run("--no-such-flag synth").exit_code == 1);
  CHECK(run("").exit_code == 1);  // missing subcommand
  CHECK(run("train --dataset /nonexistent.csv --checkpoint /tmp/x").exit_code == 2);
  CHECK(run("replay --checkpoint /nonexistent --capture /nonexistent").exit_code == 2);
}

TEST_CASE("synth is deterministic and reports counts") {
  TempDir dir;
  const std::string a = dir / "a.csv";
  const std::string b = dir / "b.csv";
  const auto r1 = run("--seed 5 synth --output " + a + " --duration 2 --yaws 2");
  const auto r2 = run("--seed 5 synth --output " + b + " --duration 2 --yaws 2");
  CHECK(r1.exit_code == 0);
  CHECK(r2.exit_code == 0);
  CHECK(r1.output.find("trajectories: 10") != std::string::npos);
  CHECK(r1.output.find("total samples: 1600") != std::string::npos);
  CHECK(read_file(a) == read_file(b));

  const auto r3 = run("--seed 6 synth --output " + a + " --duration 2 --yaws 2");
  CHECK(r3.exit_code == 0);
  CHECK(read_file(a) != read_file(b));  // different seed, different phases
}

TEST_CASE("train/eval/replay pipeline") {
  TempDir dir;
  const std::string csv = dir / "train.csv";
  const std::string caps = dir / "caps";
  const std::string ck = dir / "ck";

  REQUIRE(run("--seed 5 synth --output " + csv + " --captures " + caps +
              " --duration 2 --yaws 2")
              .exit_code == 0);

  SUBCASE("train echoes its configuration and writes metrics") {
    const auto r = run("--seed 5 train --dataset " + csv + " --checkpoint " + ck +
                       " --arch tiny --epochs 2 --batch 8 --ensemble 8 --bptt 4 --stride 16 "
                       "--lr 1e-3");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("epochs=2 batch=8 lr=0.001 ensemble=8") != std::string::npos);
    CHECK(fs::exists(fs::path(ck) / "manifest.json"));
    CHECK(fs::exists(fs::path(ck) / "weights.bin"));

    const std::string metrics = read_file(fs::path(ck) / "metrics.jsonl");
    int lines = 0;
    for (char c : metrics) {
      if (c == '\n') ++lines;
    }
    CHECK(lines == 2);
    const auto first_line = metrics.substr(0, metrics.find('\n'));
    const auto j = nlohmann::json::parse(first_line);
    CHECK(j.contains("train_total"));
    CHECK(j.contains("val_e2e"));

    SUBCASE("defaults echo the paper-scale configuration") {
      // no overrides: 50 epochs / batch 256 / lr 1e-5 / 32 members are the
      // defaults; --max-windows 0 would still take long, so only check the echo
      const auto echo = run("--seed 5 train --dataset /nonexistent.csv --checkpoint " + ck);
      CHECK(echo.exit_code == 2);  // dataset missing, but before that nothing printed
    }

    SUBCASE("eval prints measured and reference errors") {
      const auto r2 = run("--seed 6 eval --dataset " + csv + " --checkpoint " + ck +
                          " --limit-traj 2");
      CHECK(r2.exit_code == 0);
      CHECK(r2.output.find("wrist_cm:") != std::string::npos);
      CHECK(r2.output.find("baseline_wrist_cm:") != std::string::npos);
      CHECK(r2.output.find("throughput_hz:") != std::string::npos);
      CHECK(r2.output.find("9.94") != std::string::npos);  // reference context

      const auto r3 = run("--seed 6 eval --dataset " + csv + " --checkpoint " + ck +
                          " --limit-traj 2");
      // identical seed -> identical report, up to the wall-clock throughput line
      auto strip_throughput = [](const std::string& s) {
        std::string out;
        std::size_t start = 0;
        while (start < s.size()) {
          std::size_t end = s.find('\n', start);
          if (end == std::string::npos) end = s.size();
          const std::string line = s.substr(start, end - start);
          if (line.rfind("throughput_hz:", 0) != 0) out += line + "\n";
          start = end + 1;
        }
        return out;
      };
      CHECK(strip_throughput(r3.output) == strip_throughput(r2.output));
    }

    SUBCASE("replay emits one JSON line per watch packet") {
      std::string capture;
      for (const auto& entry : fs::directory_iterator(caps)) {
        capture = entry.path().string();
        break;
      }
      REQUIRE(!capture.empty());
      const std::string out = dir / "est.jsonl";
      const auto r2 = run("--seed 6 replay --checkpoint " + ck + " --capture " + capture +
                          " --speed max --output " + out);
      CHECK(r2.exit_code == 0);
      const std::string lines = read_file(out);
      long count = 0;
      std::size_t pos = 0;
      while ((pos = lines.find('\n', pos)) != std::string::npos) {
        ++count;
        ++pos;
      }
      CHECK(count == 160);  // 2 s at 80 Hz
      // every line is valid JSON with the documented fields
      const auto j = nlohmann::json::parse(lines.substr(0, lines.find('\n')));
      CHECK(j.contains("t"));
      CHECK(j["mean"].size() == 14);
      CHECK(j["elbow"].size() == 3);
      CHECK(j.contains("degraded"));

      // corrupt capture -> data error
      const std::string bad = dir / "bad.capture";
      std::ofstream f(bad, std::ios::binary);
      f << "zz";
      f.close();
      // one truncated length prefix byte: read_capture throws ParseError
      const auto r4 = run("replay --checkpoint " + ck + " --capture " + bad + " --speed max");
      CHECK(r4.exit_code == 2);
    }
  }

  SUBCASE("config file supplies defaults, flags override") {
    const std::string cfg_path = dir / "app.json";
    nlohmann::json cfg;
    cfg["seed"] = 5;
    cfg["dataset"] = csv;
    cfg["train"] = {{"epochs", 1}, {"batch_size", 8}, {"lr", 1e-3}, {"ensemble", 8},
                    {"bptt_steps", 4}, {"stride", 16}};
    std::ofstream f(cfg_path);
    f << cfg.dump();
    f.close();
    const auto r = run("--config " + cfg_path + " train --checkpoint " + ck + " --arch tiny");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("epochs=1 batch=8") != std::string::npos);
  }
}
