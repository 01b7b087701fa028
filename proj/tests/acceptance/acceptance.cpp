// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "pieeg/analysis.hpp"
#include "pieeg/daemon.hpp"
#include "pieeg/recording.hpp"
#include "pieeg/server.hpp"
#include "pieeg/simulator.hpp"
#include "ws_client.hpp"

using namespace pieeg;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "FAILED " + what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("pieeg_acc_" + make_session_id());
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// ------------------------------------------------------------------ codec

Outcome codec() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(0xC0DEC);
  std::uniform_int_distribution<std::int32_t> value(kRawMin, kRawMax);
  std::uniform_int_distribution<std::uint32_t> byte(0, 255);
  constexpr int kFrames = 100'000;
  int mismatches = 0;
  for (int i = 0; i < kFrames; ++i) {
    SampleFrame f;
    f.status = make_status(static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
                           static_cast<std::uint8_t>(byte(rng) & 0xF));
    for (auto& c : f.channels) c = value(rng);
    const auto d = decode_frame(encode_frame(f));
    if (!d.sync_valid || !(d.frame == f)) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " round-trip mismatches");
  o.require(sign_extend_24(0x7FFFFF) == 8'388'607, "0x7FFFFF -> 8388607");
  o.require(sign_extend_24(0x800000) == -8'388'608, "0x800000 -> -8388608");
  o.require(sign_extend_24(0xFFFFFF) == -1, "0xFFFFFF -> -1");
  o.require(sign_extend_24(0x000000) == 0, "0x000000 -> 0");
  const double t = seconds_since(t0);
  o.require(t < 5.0, "runtime < 5 s");
  o.note(std::to_string(kFrames) + " random frames identical, 4 edge cases exact, " + fmt("%.2f s", t));
  return o;
}

// ------------------------------------------------------------ config grid

Outcome config_domain() {
  Outcome o;
  auto ladder = [](int r) { return std::find(kSampleRates.begin(), kSampleRates.end(), r) != kSampleRates.end(); };
  auto gain_ok = [](int g) { return std::find(kGains.begin(), kGains.end(), g) != kGains.end(); };
  long checked = 0, wrong = 0;
  for (int rate = -1; rate <= 32'000; ++rate) {
    for (int gain = -1; gain <= 32; ++gain) {
      RegisterFile r;
      r.sample_rate = rate;
      r.channel_gain.fill(gain);
      const bool accepted = validate_config(r).empty();
      if (accepted != (ladder(rate) && gain_ok(gain))) ++wrong;
      ++checked;
    }
  }
  // mixed per-channel gains
  std::mt19937 rng(8);
  std::uniform_int_distribution<int> pick(0, 9);
  const std::array<int, 10> candidates = {1, 2, 4, 6, 8, 12, 24, 3, 16, 0};
  for (int i = 0; i < 20'000; ++i) {
    RegisterFile r;
    bool valid = true;
    for (auto& g : r.channel_gain) {
      g = candidates[pick(rng)];
      valid = valid && gain_ok(g);
    }
    if (validate_config(r).empty() != valid) ++wrong;
    ++checked;
  }
  o.require(wrong == 0, std::to_string(wrong) + " misclassified configurations");
  o.note(std::to_string(checked) + " configurations (rate -1..32000 x gain -1..32, 20000 mixed gain vectors)");
  return o;
}

// ------------------------------------------------------------- conversion

Outcome conversion() {
  Outcome o;
  const double fs_uv = raw_to_microvolts(kRawMax, 24, 4.5);
  o.require(std::abs(fs_uv - 187'500.0) <= 187'500.0 * 1e-4, "full scale 187500 uV within 0.01%");
  std::mt19937 rng(31);
  std::uniform_int_distribution<std::int32_t> half(kRawMin / 2, kRawMax / 2);
  double worst = 0.0;
  for (int i = 0; i < 100'000; ++i) {
    const std::int32_t a = half(rng), b = half(rng);
    for (int g : kGains) {
      const double lhs = raw_to_microvolts(a + b, g, 4.5);
      const double rhs = raw_to_microvolts(a, g, 4.5) + raw_to_microvolts(b, g, 4.5);
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    }
  }
  o.require(worst < 1e-12, "linearity f(a+b) = f(a)+f(b)");
  const double span = raw_to_microvolts(kRawMax, 24, 4.5) - raw_to_microvolts(kRawMin, 24, 4.5);
  o.require(std::abs(span - (2 * 4.5 / 24 * 1e6 - lsb_microvolts(24, 4.5))) < 1e-6, "span 2*vref/gain minus one LSB");
  o.note(fmt("full scale %.4f uV", fs_uv) + fmt(", worst relative linearity error %.1e", worst));
  return o;
}

// ------------------------------------------------------------------ noise

Outcome noise_calibration() {
  Outcome o;
  Scenario s;
  s.duration = 60.0;
  s.seed = 60;
  s.background_noise_uv_rms = kInternalNoiseUvRms;
  s.environment_noise_uv_rms = 0.0;  // amplifier noise alone, as in the datasheet figure
  const SignalBlock b = render_scenario(s, 250, 24);
  std::string per;
  for (std::size_t c = 0; c < b.channels(); ++c) {
    double sum = 0, sq = 0;
    for (double v : b.data[c]) sum += v;
    const double mean = sum / static_cast<double>(b.samples());
    for (double v : b.data[c]) sq += (v - mean) * (v - mean);
    const double rms = std::sqrt(sq / static_cast<double>(b.samples()));
    o.require(rms >= 0.36 && rms <= 0.44, "channel " + std::to_string(c + 1) + fmt(" rms %.4f", rms));
    per += fmt(c ? ",%.3f" : "%.3f", rms);
  }
  o.require(b.samples() == 15'000, "15000 samples");
  o.note("per-channel RMS uV [" + per + "], target 0.4 +- 10%");
  return o;
}

// ----------------------------------------------------------------- filter

Outcome filter_response() {
  Outcome o;
  const auto bp = design_bandpass(250.0, 1.0, 30.0, 4, 8);
  const double h10 = bp.magnitude_db(10.0, 250.0), h01 = bp.magnitude_db(0.1, 250.0),
               h60 = bp.magnitude_db(60.0, 250.0);
  o.require(std::abs(h10) <= 1.0, "|H(10 Hz)| within 1 dB");
  o.require(h01 <= -20.0, "|H(0.1 Hz)| <= -20 dB");
  o.require(h60 <= -20.0, "|H(60 Hz)| <= -20 dB");
  double max_pole = 0.0;
  for (const auto& p : bp.poles()) max_pole = std::max(max_pole, std::abs(p));
  o.require(bp.stable() && max_pole < 1.0, "poles inside unit circle");

  std::mt19937 rng(5);
  std::normal_distribution<double> n(0.0, 50.0);
  SignalBlock x(250.0, 8, 5000);
  for (auto& ch : x.data) {
    for (auto& v : ch) v = n(rng);
  }
  auto whole_filter = bp;
  const SignalBlock whole = filter_block(whole_filter, x);
  std::uniform_int_distribution<std::size_t> len(1, 400);
  int unequal = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto f = bp;
    std::size_t pos = 0;
    while (pos < x.samples()) {
      const std::size_t m = std::min(len(rng), x.samples() - pos);
      SignalBlock part(250.0, 8, m);
      for (std::size_t c = 0; c < 8; ++c) {
        std::copy_n(x.data[c].begin() + static_cast<std::ptrdiff_t>(pos), m, part.data[c].begin());
      }
      const SignalBlock y = filter_block(f, part);
      for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t i = 0; i < m; ++i) unequal += y.data[c][i] != whole.data[c][pos + i];
      }
      pos += m;
    }
  }
  o.require(unequal == 0, std::to_string(unequal) + " samples differ between split and whole filtering");
  o.note(fmt("H(10)=%.3f dB", h10) + fmt(", H(0.1)=%.1f dB", h01) + fmt(", H(60)=%.1f dB", h60) +
         fmt(", max |pole| %.5f", max_pole) + ", 20 random splittings bit-identical");
  return o;
}

// -------------------------------------------------------------- detection

std::vector<DetectionEvent> detect(const Scenario& s, DetectorSelection sel) {
  return replay_block(render_scenario(s), sel);  // causal real-time path, 50 ms blocks
}

double jaccard(double a0, double a1, double b0, double b1) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = std::max(a1, b1) - std::min(a0, b0);
  return uni > 0 ? inter / uni : 0.0;
}

Outcome detection_ground_truth() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  // 10 blink-rich minutes
  int truth_blinks = 0, hits = 0, blink_false = 0;
  for (int k = 0; k < 10; ++k) {
    Scenario s;
    s.duration = 60.0;
    s.seed = 100 + k;
    double t = 2.5;
    for (int i = 0; i < 10; ++i) {
      s.blink_events.push_back({t, uni(0.2, 0.4), uni(100.0, 200.0), {0, 1}});
      t += uni(4.0, 6.0);
    }
    const auto ev = detect(s, {true, false, false});
    std::vector<bool> used(s.blink_events.size(), false);
    for (const auto& e : ev) {
      bool matched = false;
      for (std::size_t i = 0; i < used.size() && !matched; ++i) {
        if (!used[i] && std::abs(e.t_center() - s.blink_events[i].t_center) <= 0.2) used[i] = matched = true;
      }
      hits += matched;
      blink_false += !matched;
    }
    truth_blinks += static_cast<int>(used.size());
  }
  const double sensitivity = static_cast<double>(hits) / truth_blinks;
  o.require(sensitivity >= 0.9, fmt("blink sensitivity %.3f >= 0.9", sensitivity));

  // ten minutes of noise for the false-event rate
  Scenario quiet;
  quiet.duration = 600.0;
  quiet.seed = 777;
  const auto quiet_events = detect(quiet, {true, true, false});
  const auto quiet_blinks = std::count_if(quiet_events.begin(), quiet_events.end(),
                                          [](const DetectionEvent& e) { return e.kind == EventKind::blink; });
  o.require(quiet_blinks <= 1, std::to_string(quiet_blinks) + " false blinks in 10 min of noise (<= 1)");

  // 5 chew episodes
  double worst_j = 1.0;
  for (int k = 0; k < 5; ++k) {
    Scenario s;
    s.duration = 20.0;
    s.seed = 200 + k;
    const double start = uni(4.0, 8.0);
    s.chew_episodes.push_back({start, start + uni(4.0, 8.0), uni(1.0, 2.0), uni(60.0, 100.0), {0, 1, 2, 3, 4, 5, 6, 7}});
    double best = 0.0;
    for (const auto& e : detect(s, {false, true, false})) {
      if (e.kind == EventKind::chew) {
        best = std::max(best, jaccard(e.t_start, e.t_end, s.chew_episodes[0].t_start, s.chew_episodes[0].t_end));
      }
    }
    worst_j = std::min(worst_j, best);
  }
  o.require(worst_j >= 0.6, fmt("worst chew Jaccard %.3f >= 0.6", worst_j));

  // 5 eyes-closed intervals
  double worst_latency = 0.0;
  for (int k = 0; k < 5; ++k) {
    Scenario s;
    s.duration = 30.0;
    s.seed = 300 + k;
    const double start = uni(5.0, 10.0);
    s.alpha_intervals.push_back({start, start + uni(8.0, 15.0), uni(15.0, 25.0), uni(9.0, 11.0), {6, 7}});
    double latency = 1e9;
    for (const auto& e : detect(s, {false, false, true})) {
      if (e.kind == EventKind::alpha && e.t_end > start) latency = std::min(latency, std::abs(e.t_start - start));
    }
    worst_latency = std::max(worst_latency, latency);
  }
  o.require(worst_latency <= 2.0, fmt("worst alpha onset latency %.2f s <= 2 s", worst_latency));

  Scenario no_alpha;
  no_alpha.duration = 60.0;
  no_alpha.seed = 400;
  const auto alpha_false = detect(no_alpha, {false, false, true}).size();
  o.require(alpha_false == 0, std::to_string(alpha_false) + " alpha events in 60 s of noise");

  const double t = seconds_since(t0);
  o.require(t < 60.0, "runtime < 60 s");
  o.note(fmt("blink sensitivity %.3f", sensitivity) + " (" + std::to_string(hits) + "/" +
         std::to_string(truth_blinks) + ", " + std::to_string(blink_false) + " unmatched), " +
         std::to_string(quiet_blinks) + " blink(s) in 10 min noise" + fmt(", chew Jaccard min %.3f", worst_j) +
         fmt(", alpha latency max %.2f s", worst_latency) + ", " + std::to_string(alpha_false) +
         " alpha on noise" + fmt(", %.1f s", t));
  return o;
}

// ------------------------------------------------------------- throughput

Outcome throughput() {
  Outcome o;
  Session session = Session::create();
  session.registers.sample_rate = 16'000;
  session.filter_enabled = true;
  EngineOptions opt;
  opt.pacing = Pacing::max_speed;
  opt.max_samples = 160'000;
  AcquisitionEngine engine(std::make_unique<SimTransport>(Scenario{}), session, opt);
  auto display = engine.subscribe(256, SinkKind::stream);
  std::uint64_t displayed = 0;
  std::thread consumer([&] {
    while (!display->finished()) {
      if (auto item = display->pop(std::chrono::milliseconds(50))) {
        if (auto* b = std::get_if<SampleBatch>(&*item)) displayed += b->block.samples();
      }
    }
  });
  const auto t0 = Clock::now();
  {
    DetectionWorker worker(engine);
    worker.start();
    engine.start();
    engine.wait();
    engine.stop();
    worker.join();
    const double t = seconds_since(t0);
    consumer.join();
    o.require(t < 10.0, fmt("wall time %.2f s < 10 s", t));
    o.require(worker.dropped() == 0, "detector sink drops 0");
    o.require(worker.samples_seen() == 160'000, "detector saw all samples");
    o.require(!worker.error(), "detector error");
    o.note(fmt("10 s of 16 kSPS x 8 ch in %.2f s", t) + ", detector drops " + std::to_string(worker.dropped()) +
           ", display drops " + std::to_string(display->dropped()));
  }
  o.require(display->dropped() == 0, "display sink drops 0");
  o.require(displayed == 160'000, "display sink received all samples");
  o.require(!engine.error(), "engine error");
  return o;
}

// -------------------------------------------------------------- recording

Outcome recording_roundtrip() {
  Outcome o;
  TempDir dir;
  Scenario s;
  s.duration = 20.0;
  s.blink_events.push_back({5.0, 0.3, 150.0, {0, 1}});
  SimDevice dev(s);
  dev.send_command(Command::simple(CommandKind::RESET));
  dev.send_command(Command::simple(CommandKind::START));
  dev.send_command(Command::simple(CommandKind::RDATAC));
  std::vector<std::uint8_t> frames;
  dev.step_into(5000, frames);
  const auto path = dir.path / "r.rec";
  write_recording(path, Session::create(), frames);
  const auto rec = read_recording(path);
  o.require(rec.frames == frames && rec.complete() && rec.warnings.empty(), "byte-lossless round trip");

  int recovered_ok = 0;
  const std::vector<std::size_t> cuts = {1, 2, 13, 26, 27, 28, 100};
  for (std::size_t cut : cuts) {
    std::filesystem::resize_file(path, kRecordingHeaderBytes + frames.size() - cut);
    const auto t = read_recording(path);
    const std::size_t expect = (frames.size() - cut) / kFrameBytes;
    recovered_ok += t.frame_count() == expect &&
                    std::equal(t.frames.begin(), t.frames.end(), frames.begin());
    write_recording(path, Session::create(), frames);
  }
  o.require(recovered_ok == static_cast<int>(cuts.size()), "truncated files recover every complete frame");

  std::ostringstream csv;
  const auto rows = write_csv(rec, csv);
  const std::string text = csv.str();
  const auto lines = std::count(text.begin(), text.end(), '\n');
  o.require(rows == 5000 && lines == 5001, "CSV rows = frames + 1");
  o.note("5000 frames lossless, " + std::to_string(recovered_ok) + "/" + std::to_string(cuts.size()) +
         " truncations recovered, CSV " + std::to_string(lines) + " lines");
  return o;
}

// ----------------------------------------------------------------- daemon

Outcome daemon_protocol() {
  Outcome o;
  TempDir dir;
  AcquisitionEngine engine(std::make_unique<SimTransport>(Scenario{}), Session::create());
  Server server(engine, {"127.0.0.1", 0, 256});
  engine.start();
  server.start();
  {
    testing::WsClient a(server.port());
    testing::WsClient b(server.port());
    const auto snap = a.recv();
    o.require(snap && (*snap)["type"] == "status" && (*snap)["lead_off"].size() == 8 && (*snap)["labels"].size() == 8,
              "first message is a status snapshot");
    o.require(b.recv().value_or(nlohmann::json{})["type"] == "status", "second client snapshot");
    o.require(a.recv_type("samples").has_value(), "samples flow");

    a.send({{"type", "set_gain"}, {"channel", "all"}, {"value", 8}, {"ref", "g"}});
    const auto ack = a.recv_type("ack");
    o.require(ack && (*ack)["ref"] == "g", "set_gain acknowledged");
    const auto next = a.recv_type("samples");
    const bool reflected = next && (*next)["gain"] == nlohmann::json(std::vector<int>(8, 8));
    o.require(reflected, "gain reflected in the next block");
    if (next) {
      const auto seq = (*next)["seq"].get<std::uint64_t>();
      bool b_ok = false;
      while (auto m = b.recv_type("samples")) {
        const auto s = (*m)["seq"].get<std::uint64_t>();
        if (s + 1 == seq) o.require((*m)["gain"][0] == 24, "block before the change still at gain 24");
        if (s >= seq) {
          b_ok = (*m)["gain"] == nlohmann::json(std::vector<int>(8, 8));
          break;
        }
      }
      o.require(b_ok, "second client sees the change in the same block");
    }

    a.send({{"type", "set_sps"}, {"value", 300}, {"ref", "bad"}});
    const auto err = a.recv_type("error");
    o.require(err && (*err)["ref"] == "bad", "set_sps 300 rejected");
    const auto still = a.recv_type("samples");
    o.require(still && (*still)["fs"] == 250.0, "rate unchanged after rejection");

    const auto path = (dir.path / "live.rec").string();
    a.send({{"type", "record"}, {"action", "start"}, {"path", path}});
    const auto started = a.recv_type("ack");
    const auto t_start = Clock::now();
    o.require(started.has_value(), "record start acknowledged");
    std::this_thread::sleep_for(std::chrono::seconds(2));
    a.send({{"type", "record"}, {"action", "stop"}});
    const auto stopped = a.recv_type("ack");
    const double elapsed = seconds_since(t_start);
    o.require(stopped && stopped->contains("frames"), "record stop acknowledged");
    if (stopped) {
      const auto frames = (*stopped)["frames"].get<std::size_t>();
      const auto rec = read_recording(path);
      o.require(rec.complete() && rec.frame_count() == frames, "recording complete and frame count matches");
      o.require(std::abs(static_cast<double>(frames) - elapsed * 250.0) <= 2 * 13 + 1,
                "frames within a block of elapsed x 250");
      o.note(std::to_string(frames) + " frames recorded over " + fmt("%.2f s", elapsed));
    }
  }
  server.stop();
  engine.stop();
  o.note("snapshot, set_gain reflected in next block on both clients, set_sps 300 rejected, record start/stop");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"codec", codec},
      {"config-domain", config_domain},
      {"conversion", conversion},
      {"noise-calibration", noise_calibration},
      {"filter-response", filter_response},
      {"detection-ground-truth", detection_ground_truth},
      {"throughput", throughput},
      {"recording-roundtrip", recording_roundtrip},
      {"daemon-protocol", daemon_protocol},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s %-24s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu primary criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
