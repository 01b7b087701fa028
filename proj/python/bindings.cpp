// Python bindings for the pieeg core. Signals cross the boundary as float64
// arrays shaped (channels, samples); structured results travel as JSON text
// and are decoded on the Python side.

#include <fstream>
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "pieeg/analysis.hpp"
#include "pieeg/daemon.hpp"
#include "pieeg/recording.hpp"
#include "pieeg/simulator.hpp"

namespace py = pybind11;
using namespace pieeg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

SignalBlock to_block(const Array& data, double fs, double t0 = 0.0) {
  if (data.ndim() != 2) throw std::invalid_argument("expected a 2-D array shaped (channels, samples)");
  const auto ch = static_cast<std::size_t>(data.shape(0));
  const auto n = static_cast<std::size_t>(data.shape(1));
  SignalBlock b(fs, ch, n, t0);
  auto r = data.unchecked<2>();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < n; ++i) b.data[c][i] = r(c, i);
  }
  b.check();
  return b;
}

Array to_array(const SignalBlock& b) {
  Array out({b.channels(), b.samples()});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t c = 0; c < b.channels(); ++c) {
    for (std::size_t i = 0; i < b.samples(); ++i) w(c, i) = b.data[c][i];
  }
  return out;
}

std::string events_json(const std::vector<DetectionEvent>& events) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : events) arr.push_back(to_json(e));
  return arr.dump();
}

std::string header_json(const RecordingHeader& h) {
  return nlohmann::json{{"version", h.version},
                        {"channels", h.channels},
                        {"flags", h.flags},
                        {"sample_rate", h.sample_rate},
                        {"vref", h.vref},
                        {"gains", h.gains},
                        {"start_unix_micros", h.start_unix_micros},
                        {"labels", h.labels}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_pieeg, m) {
  m.doc() = "PiEEG acquisition chain: codec, simulator, filters, detectors, recordings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FrameError>(m, "FrameError", PyExc_ValueError);
  py::register_exception<RecordingFormatError>(m, "RecordingFormatError", PyExc_ValueError);
  py::register_exception<RecordingIoError>(m, "RecordingIoError", PyExc_OSError);
  py::register_exception<DesignError>(m, "DesignError", PyExc_ValueError);
  py::register_exception<DetectorConfigError>(m, "DetectorConfigError", PyExc_ValueError);

  m.attr("FRAME_BYTES") = kFrameBytes;
  m.attr("SAMPLE_RATES") = kSampleRates;
  m.attr("GAINS") = kGains;

  // codec and conversion
  m.def(
      "encode_frame",
      [](std::uint32_t status, const std::array<std::int32_t, kChannels>& channels) {
        const auto b = encode_frame({status, channels});
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      },
      py::arg("status"), py::arg("channels"));
  m.def(
      "decode_frame",
      [](const py::bytes& data) {
        const std::string s = data;
        const auto d = decode_frame(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
        return py::make_tuple(d.frame.status, d.frame.channels, d.sync_valid);
      },
      py::arg("frame"), "Returns (status, channels, sync_valid).");
  m.def("make_status", &make_status, py::arg("loff_statp"), py::arg("loff_statn") = 0, py::arg("gpio") = 0);
  m.def("sign_extend_24", &sign_extend_24, py::arg("word"));
  m.def("raw_to_microvolts", &raw_to_microvolts, py::arg("raw"), py::arg("gain") = 24, py::arg("vref") = 4.5);
  m.def(
      "microvolts_to_raw",
      [](double uv, int gain, double vref) {
        const auto q = microvolts_to_raw(uv, gain, vref);
        return py::make_tuple(q.raw, q.saturated);
      },
      py::arg("microvolts"), py::arg("gain") = 24, py::arg("vref") = 4.5);
  m.def(
      "validate_config",
      [](int sample_rate, const std::array<int, kChannels>& gains) {
        RegisterFile r;
        r.sample_rate = sample_rate;
        r.channel_gain = gains;
        return validate_config(r);
      },
      py::arg("sample_rate"), py::arg("gains"), "List of violations; empty when valid.");

  // simulator
  m.def(
      "render_scenario",
      [](const std::string& yaml, int sample_rate, int gain) {
        const Scenario s = parse_scenario(yaml);
        SignalBlock b;
        {
          py::gil_scoped_release release;
          b = render_scenario(s, sample_rate, gain);
        }
        return to_array(b);
      },
      py::arg("scenario_yaml"), py::arg("sample_rate") = 250, py::arg("gain") = 24,
      "Synthesizes a scenario through the simulated device; returns uV shaped (8, n).");

  // dsp
  m.def(
      "bandpass_sos",
      [](double fs, double lo, double hi, int order) {
        const BiquadCascade cascade = design_bandpass(fs, lo, hi, order, 1);
        std::vector<std::array<double, 6>> sos;
        for (const auto& s : cascade.sections()) {
          sos.push_back({s.b0, s.b1, s.b2, 1.0, s.a1, s.a2});
        }
        return sos;
      },
      py::arg("fs"), py::arg("lo") = 1.0, py::arg("hi") = 30.0, py::arg("order") = 4,
      "Second-order sections in scipy's [b0, b1, b2, 1, a1, a2] layout.");
  m.def(
      "bandpass",
      [](const Array& data, double fs, double lo, double hi, int order, bool zero_phase) {
        const SignalBlock in = to_block(data, fs);
        auto filter = design_bandpass(fs, lo, hi, order, in.channels());
        return to_array(zero_phase ? filtfilt_block(filter, in) : filter_block(filter, in));
      },
      py::arg("data"), py::arg("fs"), py::arg("lo") = 1.0, py::arg("hi") = 30.0, py::arg("order") = 4,
      py::arg("zero_phase") = false);
  m.def(
      "welch_psd",
      [](const Array& data, double fs, std::size_t segment_len, double overlap) {
        const Spectrum s = welch_psd(to_block(data, fs), {segment_len, overlap, Detrend::constant});
        return py::make_tuple(s.freqs, s.psd);
      },
      py::arg("data"), py::arg("fs"), py::arg("segment_len") = 256, py::arg("overlap") = 0.5,
      "Returns (freqs, psd[channel][bin]) in uV^2/Hz.");
  m.def(
      "alpha_index", [](const Array& data, double fs) { return alpha_index(to_block(data, fs)); }, py::arg("data"),
      py::arg("fs"));

  // detection
  m.def(
      "_detect",
      [](const Array& data, double fs, const std::string& detectors, bool offline) {
        const SignalBlock b = to_block(data, fs);
        const DetectorSelection sel = parse_selection(detectors);
        py::gil_scoped_release release;
        return offline ? events_json(analyze_block(b, sel).events) : events_json(replay_block(b, sel));
      },
      py::arg("data"), py::arg("fs"), py::arg("detectors") = "blink,chew,alpha", py::arg("offline") = true);
  m.def(
      "_analyze",
      [](const Array& data, double fs, const std::string& detectors) {
        const SignalBlock b = to_block(data, fs);
        const DetectorSelection sel = parse_selection(detectors);
        py::gil_scoped_release release;
        return to_json(analyze_block(b, sel)).dump();
      },
      py::arg("data"), py::arg("fs"), py::arg("detectors") = "blink,chew,alpha");

  // recordings
  m.def(
      "_read_recording",
      [](const std::filesystem::path& path) {
        const Recording rec = read_recording(path);
        return py::make_tuple(header_json(rec.header), to_array(recording_to_block(rec)), rec.warnings,
                              rec.complete());
      },
      py::arg("path"));
  m.def(
      "write_recording",
      [](const std::filesystem::path& path, const py::bytes& frames, int sample_rate, int gain) {
        const std::string s = frames;
        Session session = Session::create();
        session.registers.sample_rate = sample_rate;
        session.registers.channel_gain.fill(gain);
        write_recording(path, session, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
      },
      py::arg("path"), py::arg("frames"), py::arg("sample_rate") = 250, py::arg("gain") = 24,
      "Writes raw 27-byte frames behind a header built from the given registers.");
  m.def(
      "export_csv",
      [](const std::filesystem::path& in, const std::filesystem::path& out) {
        const Recording rec = read_recording(in);
        std::ofstream os(out);
        if (!os) throw RecordingIoError("cannot write " + out.string());
        return write_csv(rec, os);
      },
      py::arg("recording"), py::arg("csv"), "Returns the number of data rows written.");

  // command line
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the pieeg command line; returns (exit_status, stdout, stderr).");
}
