#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "pieeg/analysis.hpp"
#include "pieeg/recording.hpp"
#include "pieeg/server.hpp"

using namespace pieeg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string scenario(const std::string& name) { return (fs::path(PIEEG_SOURCE_DIR) / "scenarios" / name).string(); }

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pieeg_cli_" + make_session_id());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::vector<nlohmann::json> json_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

std::size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("simulate writes exactly duration x rate frames") {
  TempDir dir;
  const auto r = cli({"simulate", "--scenario", scenario("alpha.scn"), "--duration", "10", "--sps", "250", "--out",
                      dir / "a.rec"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["frames"] == 2500);
  const auto rec = read_recording(dir / "a.rec");
  CHECK(rec.frame_count() == 2500);
  CHECK(rec.complete());
  CHECK(rec.header.sample_rate == 250);
}

TEST_CASE("simulate is deterministic for a given scenario") {
  TempDir dir;
  REQUIRE(cli({"simulate", "--scenario", scenario("chew.scn"), "--out", dir / "1.rec"}).code == 0);
  REQUIRE(cli({"simulate", "--scenario", scenario("chew.scn"), "--out", dir / "2.rec"}).code == 0);
  CHECK(read_recording(dir / "1.rec").frames == read_recording(dir / "2.rec").frames);
  CHECK(read_recording(dir / "1.rec").frame_count() == 12 * 250);
}

TEST_CASE("export row count is frame count plus header") {
  TempDir dir;
  REQUIRE(cli({"simulate", "--duration", "2", "--sps", "500", "--gain", "12", "--out", dir / "a.rec"}).code == 0);
  const auto r = cli({"export", "--in", dir / "a.rec", "--csv", dir / "a.csv"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["rows"] == 1000);
  CHECK(count_lines(dir / "a.csv") == 1001);
  const auto to_stdout = cli({"export", "--in", dir / "a.rec", "--csv", "-"});
  REQUIRE(to_stdout.code == 0);
  CHECK(to_stdout.out.rfind("t_s,ch1_uV,", 0) == 0);
}

TEST_CASE("analyze finds the ten blinks and agrees with replay") {
  TempDir dir;
  REQUIRE(cli({"simulate", "--scenario", scenario("blink10.scn"), "--out", dir / "b.rec"}).code == 0);
  const auto r = cli({"analyze", "--in", dir / "b.rec", "--detect", "blink", "--csv", dir / "bp.csv"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto report = nlohmann::json::parse(r.out);
  int blinks = 0;
  for (const auto& e : report["events"]) blinks += e["kind"] == "blink";
  CHECK(blinks >= 9);
  CHECK(report["band_power"].size() == 8);
  CHECK(count_lines(dir / "bp.csv") == 9);

  // deterministic
  CHECK(cli({"analyze", "--in", dir / "b.rec", "--detect", "blink"}).out ==
        cli({"analyze", "--in", dir / "b.rec", "--detect", "blink"}).out);

  const auto rp = cli({"replay", "--in", dir / "b.rec", "--detect", "blink"});
  REQUIRE(rp.code == 0);
  const auto replayed = json_lines(rp.out);
  REQUIRE(replayed.size() == report["events"].size());
  const double block_s = 0.05;
  for (std::size_t i = 0; i < replayed.size(); ++i) {
    const auto& a = report["events"][i];
    const auto& b = replayed[i];
    CHECK(a["kind"] == b["kind"]);
    CHECK(std::abs(a["t_start"].get<double>() - b["t_start"].get<double>()) <= block_s + 1e-9);
    CHECK(std::abs(a["t_end"].get<double>() - b["t_end"].get<double>()) <= block_s + 1e-9);
  }
}

TEST_CASE("analyze and replay agree on chew and alpha") {
  TempDir dir;
  for (const auto* name : {"chew.scn", "alpha.scn"}) {
    const auto rec = dir / (std::string(name) + ".rec");
    REQUIRE(cli({"simulate", "--scenario", scenario(name), "--out", rec}).code == 0);
    const auto report = nlohmann::json::parse(cli({"analyze", "--in", rec}).out);
    const auto replayed = json_lines(cli({"replay", "--in", rec}).out);
    INFO(name);
    REQUIRE(replayed.size() == report["events"].size());
    REQUIRE_FALSE(replayed.empty());
    for (std::size_t i = 0; i < replayed.size(); ++i) {
      CHECK(report["events"][i]["kind"] == replayed[i]["kind"]);
      CHECK(std::abs(report["events"][i]["t_start"].get<double>() - replayed[i]["t_start"].get<double>()) <= 0.05);
    }
  }
}

TEST_CASE("bad flags and files exit with status 1") {
  TempDir dir;
  CHECK(cli({}).code == 1);
  CHECK(cli({"fly"}).code == 1);
  CHECK(cli({"simulate"}).code == 1);  // --out missing
  auto r = cli({"simulate", "--sps", "300", "--out", dir / "x.rec"});
  CHECK(r.code == 1);
  CHECK(r.err.find("300") != std::string::npos);
  CHECK(r.out.empty());
  CHECK(cli({"simulate", "--gain", "3", "--out", dir / "x.rec"}).code == 1);
  CHECK(cli({"simulate", "--scenario", dir / "missing.scn", "--out", dir / "x.rec"}).code == 1);
  r = cli({"analyze", "--in", dir / "missing.rec"});
  CHECK(r.code == 1);
  CHECK(r.err.find("missing.rec") != std::string::npos);
  CHECK(cli({"analyze", "--in", dir / "x.rec", "--detect", "sneeze"}).code == 1);
  {
    std::ofstream junk(dir / "junk.rec");
    junk << "not a recording at all, definitely longer than sixty-four bytes of header ..........";
  }
  CHECK(cli({"export", "--in", dir / "junk.rec", "--csv", dir / "j.csv"}).code == 1);
  CHECK(cli({"record", "--out", dir / "r.rec"}).code == 1);  // needs --duration
  CHECK(cli({"record", "--transport", "spi9", "--duration", "1", "--out", dir / "r.rec"}).code == 1);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("record paces to wall clock") {
  TempDir dir;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = cli({"record", "--transport", "sim", "--duration", "1", "--out", dir / "r.rec"});
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(r.code == 0);
  CHECK(elapsed >= 0.9);
  CHECK(read_recording(dir / "r.rec").frame_count() == 250);
}

TEST_CASE("serve binds, reports its port and exits on schedule") {
  const auto r = cli({"serve", "--port", "0", "--for", "0.5"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto lines = json_lines(r.out);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0]["port"].get<int>() > 0);
  CHECK(lines[1]["stopped"] == true);

  AcquisitionEngine engine(std::make_unique<SimTransport>(Scenario{}), Session::create());
  Server busy(engine, {"127.0.0.1", 0, 16});
  busy.start();
  const auto clash = cli({"serve", "--port", std::to_string(busy.port()), "--for", "0.2"});
  CHECK(clash.code == 1);
  CHECK(clash.err.find("cannot listen") != std::string::npos);
}
