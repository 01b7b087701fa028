#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include "CLI11.hpp"
#include "pieeg/analysis.hpp"
#include "pieeg/daemon.hpp"
#include "pieeg/server.hpp"

namespace pieeg {

namespace {

namespace fs = std::filesystem;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

/// Flags that error paths must report with exit status 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AcquireFlags {
  std::string scenario;
  std::optional<double> duration;
  int sps = 250;
  int gain = 24;
  std::optional<std::uint64_t> seed;
};

void add_acquire_flags(CLI::App* cmd, AcquireFlags& f) {
  cmd->add_option("--scenario", f.scenario, "Scenario file (default: noise only)");
  cmd->add_option("--duration", f.duration, "Seconds of signal")->check(CLI::PositiveNumber);
  cmd->add_option("--sps", f.sps, "Sample rate (250..16000)");
  cmd->add_option("--gain", f.gain, "PGA gain for every channel (1,2,4,6,8,12,24)");
  cmd->add_option("--seed", f.seed, "Override the scenario seed");
}

Scenario load_or_default(const AcquireFlags& f) {
  Scenario s = f.scenario.empty() ? Scenario{} : load_scenario(f.scenario);
  if (f.duration) s.duration = *f.duration;
  if (f.seed) s.seed = *f.seed;
  return s;
}

Session make_session(const AcquireFlags& f) {
  Session session = Session::create();
  session.registers.sample_rate = f.sps;
  session.registers.channel_gain.fill(f.gain);
  if (auto v = validate_session(session); !v.empty()) throw ConfigError(std::move(v));
  return session;
}

void expect_ack(const nlohmann::json& reply) {
  if (reply.value("type", "") != "ack") throw std::runtime_error(reply.value("detail", reply.dump()));
}

/// Acquires `scenario` through the engine into a recording at `out_path`.
nlohmann::json acquire(std::unique_ptr<DeviceTransport> transport, const Scenario& scenario, const Session& session,
                       Pacing pacing, const std::string& out_path, std::ostream& err) {
  EngineOptions options;
  options.pacing = pacing;
  options.max_samples = static_cast<std::uint64_t>(std::llround(scenario.duration * session.registers.sample_rate));
  const std::string transport_name = transport->name();
  AcquisitionEngine engine(std::move(transport), session, options);
  expect_ack(engine.control({{"type", "record"}, {"action", "start"}, {"path", out_path}}));
  engine.start();
  while (engine.running()) {
    if (g_interrupted) {
      err << "pieeg: interrupted, finalizing " << out_path << "\n";
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  engine.stop();
  if (auto e = engine.error()) throw std::runtime_error("acquisition failed: " + *e);
  const auto frames = (fs::file_size(out_path) - kRecordingHeaderBytes) / kFrameBytes;
  return {{"out", out_path},
          {"transport", transport_name},
          {"frames", frames},
          {"sample_rate", session.registers.sample_rate},
          {"gain", session.registers.channel_gain[0]},
          {"duration_s", static_cast<double>(frames) / session.registers.sample_rate}};
}

Recording load_recording(const std::string& path, std::ostream& err) {
  Recording rec = read_recording(path);
  for (const auto& w : rec.warnings) err << "pieeg: warning: " << path << ": " << w << "\n";
  if (rec.frame_count() == 0) throw RecordingFormatError(path + ": recording holds no frames");
  return rec;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PiEEG acquisition, analysis and streaming tool", "pieeg"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  AcquireFlags sim_flags;
  std::string sim_out;
  auto* simulate = app.add_subcommand("simulate", "Simulate a scenario through the daemon pipeline into a recording");
  add_acquire_flags(simulate, sim_flags);
  simulate->add_option("--out", sim_out, "Recording to write")->required();

  AcquireFlags rec_flags;
  std::string rec_out, rec_transport = "sim";
  auto* record = app.add_subcommand("record", "Record from a device transport in real time");
  add_acquire_flags(record, rec_flags);
  record->add_option("--transport", rec_transport, "Device transport (sim)");
  record->add_option("--out", rec_out, "Recording to write")->required();

  std::string replay_in, replay_detect = "blink,chew,alpha";
  bool replay_realtime = false;
  double replay_block_ms = 50.0;
  auto* replay = app.add_subcommand("replay", "Stream a recording through the causal detectors");
  replay->add_option("--in", replay_in, "Recording to read")->required();
  replay->add_option("--detect", replay_detect, "Detectors: blink,chew,alpha");
  replay->add_flag("--realtime", replay_realtime, "Pace blocks to wall-clock time (default: max speed)");
  replay->add_option("--block-ms", replay_block_ms, "Block length in ms")->check(CLI::PositiveNumber);

  std::string an_in, an_detect = "blink,chew,alpha", an_csv;
  auto* analyze = app.add_subcommand("analyze", "Zero-phase offline analysis: events and band powers");
  analyze->add_option("--in", an_in, "Recording to read")->required();
  analyze->add_option("--detect", an_detect, "Detectors: blink,chew,alpha");
  analyze->add_option("--csv", an_csv, "Also write the band-power table as CSV");

  AcquireFlags serve_flags;
  std::optional<int> serve_port;
  std::string serve_address = "127.0.0.1";
  bool serve_no_detect = false;
  std::optional<double> serve_for;
  auto* serve = app.add_subcommand("serve", "Run the HTTP/WebSocket daemon on a simulated device");
  serve->add_option("--scenario", serve_flags.scenario, "Scenario file (default: noise only)");
  serve->add_option("--sps", serve_flags.sps, "Initial sample rate");
  serve->add_option("--gain", serve_flags.gain, "Initial gain for every channel");
  serve->add_option("--port", serve_port, "Listen port (default: PIEEG_PORT or 9090; 0 = any)")
      ->check(CLI::Range(0, 65535));
  serve->add_option("--address", serve_address, "Listen address");
  serve->add_flag("--no-detect", serve_no_detect, "Do not run the detectors");
  serve->add_option("--for", serve_for, "Exit after this many seconds")->check(CLI::PositiveNumber);

  std::string ex_in, ex_csv;
  auto* exporter = app.add_subcommand("export", "Convert a recording to CSV");
  exporter->add_option("--in", ex_in, "Recording to read")->required();
  exporter->add_option("--csv", ex_csv, "CSV to write ('-' for stdout)")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  g_interrupted = false;
  auto old_int = std::signal(SIGINT, on_signal);
  auto old_term = std::signal(SIGTERM, on_signal);
  struct RestoreSignals {
    decltype(old_int) i, t;
    ~RestoreSignals() {
      std::signal(SIGINT, i);
      std::signal(SIGTERM, t);
    }
  } restore{old_int, old_term};

  try {
    if (*simulate) {
      const Scenario s = load_or_default(sim_flags);
      const Session session = make_session(sim_flags);
      auto summary = acquire(std::make_unique<SimTransport>(s), s, session, Pacing::max_speed, sim_out, err);
      out << summary.dump() << "\n";
    } else if (*record) {
      if (!rec_flags.duration) throw UsageError("record needs --duration");
      const Scenario s = load_or_default(rec_flags);
      const Session session = make_session(rec_flags);
      auto summary = acquire(make_transport(rec_transport, s), s, session, Pacing::realtime, rec_out, err);
      out << summary.dump() << "\n";
    } else if (*replay) {
      const DetectorSelection sel = parse_selection(replay_detect);
      const Recording rec = load_recording(replay_in, err);
      ReplayOptions opt;
      opt.block_ms = replay_block_ms;
      opt.realtime = replay_realtime;
      opt.on_event = [&](const DetectionEvent& e) { out << to_json(e).dump() << std::endl; };
      replay_block(recording_to_block(rec), sel, {}, opt);
    } else if (*analyze) {
      const DetectorSelection sel = parse_selection(an_detect);
      const Recording rec = load_recording(an_in, err);
      const AnalysisReport report = analyze_block(recording_to_block(rec), sel, {}, rec.header.labels);
      nlohmann::json doc = to_json(report);
      doc["in"] = an_in;
      out << doc.dump(2) << "\n";
      if (!an_csv.empty()) {
        auto csv = open_output(an_csv);
        write_band_power_csv(report, csv);
      }
    } else if (*serve) {
      const Scenario s = load_or_default(serve_flags);
      const Session session = make_session(serve_flags);
      ServerOptions so;
      so.address = serve_address;
      so.port = serve_port ? static_cast<unsigned short>(*serve_port) : port_from_env();
      AcquisitionEngine engine(std::make_unique<SimTransport>(s), session);
      {
        Server server(engine, so);
        std::optional<DetectionWorker> worker;
        if (!serve_no_detect) worker.emplace(engine);
        server.start();
        if (worker) worker->start();
        engine.start();
        out << nlohmann::json{{"listening", so.address}, {"port", server.port()}, {"session", session.id}}.dump()
            << std::endl;
        err << "pieeg: serving on http://" << so.address << ":" << server.port() << " (ws at /ws)\n";
        const auto until = serve_for ? std::chrono::steady_clock::now() +
                                           std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                               std::chrono::duration<double>(*serve_for))
                                     : std::chrono::steady_clock::time_point::max();
        while (!g_interrupted && engine.running() && std::chrono::steady_clock::now() < until) {
          std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        server.stop();
        engine.stop();
        if (worker) worker->join();
      }
      if (auto e = engine.error()) throw std::runtime_error("acquisition failed: " + *e);
      out << nlohmann::json{{"stopped", true}, {"samples", engine.samples_produced()}}.dump() << std::endl;
    } else if (*exporter) {
      const Recording rec = load_recording(ex_in, err);
      std::size_t rows = 0;
      if (ex_csv == "-") {
        rows = write_csv(rec, out);
      } else {
        auto csv = open_output(ex_csv);
        rows = write_csv(rec, csv);
        out << nlohmann::json{{"csv", ex_csv}, {"rows", rows}}.dump() << "\n";
      }
    }
  } catch (const ConfigError& e) {
    err << "pieeg: invalid configuration:";
    for (const auto& v : e.violations()) err << "\n  " << v;
    err << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "pieeg: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace pieeg
