#pragma once

// Streaming detectors for blink and chewing artifacts and for alpha rhythm.
// All decisions are taken on a global sample counter, so results do not
// depend on how the stream is cut into blocks.

#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pieeg/dsp.hpp"

namespace pieeg {

enum class EventKind { blink, chew, alpha };

std::string to_string(EventKind kind);

struct DetectionEvent {
  EventKind kind = EventKind::blink;
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<int> channels;
  double score = 0.0;

  double t_center() const { return 0.5 * (t_start + t_end); }
};

class DetectorConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DetectorConfig {
  std::vector<int> frontal = {0, 1};
  std::vector<int> occipital = {6, 7};
  std::vector<int> chew_channels = {0, 1, 2, 3, 4, 5, 6, 7};

  // blink: |x - median| > k * MAD for a 100-500 ms span
  double blink_k = 6.0;
  double blink_min_s = 0.1;
  double blink_max_s = 0.5;
  double blink_separation_s = 0.3;
  double blink_floor_uv = 0.0;  // absolute threshold floor; 0 keeps detection scale-free
  double baseline_window_s = 10.0;
  double baseline_update_s = 0.25;
  double baseline_warmup_s = 1.0;

  // chew: 15-30 Hz power over a sliding window vs its rolling baseline
  double chew_k = 5.0;
  double chew_band_lo = 15.0;
  double chew_band_hi = 30.0;
  double chew_window_s = 1.0;
  double chew_envelope_s = 0.1;
  double chew_hop_s = 0.025;
  double chew_baseline_window_s = 20.0;
  double chew_warmup_s = 2.0;
  double chew_hold_s = 1.0;
  int chew_min_channels = 2;
  double chew_rate_min_hz = 0.5;
  double chew_rate_max_hz = 2.5;
  double chew_rate_tolerance = 0.25;
  double chew_burst_fraction = 0.2;

  // alpha: 8-12 Hz / 1-30 Hz band-power ratio with hysteresis
  double alpha_enter = 0.4;
  double alpha_exit = 0.3;
  double alpha_min_s = 1.0;
  double alpha_window_s = 2.0;
  double alpha_hop_s = 0.25;

  /// Throws DetectorConfigError for inconsistent settings.
  void check(std::size_t channels) const;
};

/// Ratio of 8-12 Hz to 1-30 Hz band power per channel, from a Welch PSD with
/// roughly one-second segments. An all-zero channel scores 0. Throws
/// std::domain_error for blocks shorter than two seconds.
std::vector<double> alpha_index(const SignalBlock& block);

// Detector constructors never throw for missing channel roles or an
// unsupported rate; the first process() call raises DetectorConfigError.

/// Expects a 1-30 Hz band-passed stream.
class BlinkDetector {
 public:
  BlinkDetector(const DetectorConfig& config, double fs);
  std::vector<DetectionEvent> process(const SignalBlock& block);
  std::vector<DetectionEvent> finish();

 private:
  struct Run {
    std::int64_t start = 0;
    std::int64_t end = 0;
    double peak = 0.0;
    std::vector<int> channels;
  };
  void update_baseline();
  void end_run();
  void close_cluster(std::vector<DetectionEvent>& out);
  double time_of(std::int64_t n) const { return t_origin_ + static_cast<double>(n) / fs_; }

  DetectorConfig cfg_;
  double fs_;
  std::string config_error_;
  bool started_ = false;
  double t_origin_ = 0.0;
  std::int64_t n_ = 0;
  std::int64_t window_, update_every_, warmup_, min_len_, max_len_, separation_;
  std::vector<std::vector<double>> history_;  // ring per frontal channel
  std::size_t history_pos_ = 0;
  std::size_t history_fill_ = 0;
  std::vector<double> median_, mad_;
  bool baseline_ready_ = false;

  std::optional<Run> run_;
  int run_sign_ = 0;
  std::vector<Run> cluster_;
  std::int64_t cluster_last_end_ = 0;
};

class ChewDetector {
 public:
  ChewDetector(const DetectorConfig& config, double fs);
  std::vector<DetectionEvent> process(const SignalBlock& block);
  std::vector<DetectionEvent> finish();

 private:
  void evaluate(std::vector<DetectionEvent>& out);
  void close_episode(std::vector<DetectionEvent>& out);
  double time_of(std::int64_t n) const { return t_origin_ + static_cast<double>(n) / fs_; }

  DetectorConfig cfg_;
  double fs_;
  std::string config_error_;
  bool started_ = false;
  double t_origin_ = 0.0;
  std::int64_t n_ = 0;
  std::int64_t window_, envelope_, hop_, warmup_, hold_;
  std::size_t baseline_len_;
  BiquadCascade band_;
  struct Channel {
    std::vector<double> power_ring;  // squared samples, window_ long
    std::vector<double> env_ring;    // squared samples, envelope_ long
    double power_sum = 0.0;
    double env_sum = 0.0;
    std::deque<double> baseline;  // window power samples taken at each hop
  };
  std::vector<Channel> ch_;
  std::size_t ring_pos_ = 0, env_pos_ = 0;

  bool active_ = false;
  double start_time_ = 0.0;
  double last_activity_ = 0.0;
  std::int64_t last_active_hop_ = 0;
  double peak_ratio_ = 0.0;
  double env_peak_ = 0.0;
  bool in_burst_ = false;
  std::vector<double> burst_onsets_;
  std::vector<bool> involved_;
};

class AlphaDetector {
 public:
  AlphaDetector(const DetectorConfig& config, double fs);
  std::vector<DetectionEvent> process(const SignalBlock& block);
  std::vector<DetectionEvent> finish();

  /// Mean occipital alpha index at the most recent evaluation.
  double last_index() const { return last_index_; }

 private:
  void evaluate(std::vector<DetectionEvent>& out);
  double time_of(std::int64_t n) const { return t_origin_ + static_cast<double>(n) / fs_; }

  DetectorConfig cfg_;
  double fs_;
  std::string config_error_;
  bool started_ = false;
  double t_origin_ = 0.0;
  std::int64_t n_ = 0;
  std::int64_t window_, hop_;
  std::vector<std::deque<double>> buffer_;
  bool active_ = false;
  double start_time_ = 0.0;
  double score_sum_ = 0.0;
  int score_count_ = 0;
  double last_index_ = 0.0;
};

/// Per-stream detector state: one of each detector.
struct DetectorState {
  DetectorState(const DetectorConfig& config, double fs)
      : blink(config, fs), chew(config, fs), alpha(config, fs) {}
  BlinkDetector blink;
  ChewDetector chew;
  AlphaDetector alpha;
};

std::vector<DetectionEvent> detect_blink(DetectorState& state, const SignalBlock& bandpassed);
std::vector<DetectionEvent> detect_chew(DetectorState& state, const SignalBlock& block);
std::vector<DetectionEvent> detect_alpha(DetectorState& state, const SignalBlock& block);

struct DetectorSelection {
  bool blink = true;
  bool chew = true;
  bool alpha = true;
};

/// Runs the selected detectors over one stream. When the input is raw, the
/// blink path gets its own causal 1-30 Hz band-pass and blink times are moved
/// back by that filter's group delay at kBlinkReferenceHz, so they line up
/// with the input (and with zero-phase offline analysis).
inline constexpr double kBlinkReferenceHz = 2.0;  // dominant band of a 0.3 s blink

class DetectorBank {
 public:
  DetectorBank(const DetectorConfig& config, double fs, DetectorSelection selection = {},
               bool input_bandpassed = false);

  std::vector<DetectionEvent> process(const SignalBlock& block);
  /// Closes episodes still open at the end of the stream.
  std::vector<DetectionEvent> finish();

  double fs() const { return fs_; }

 private:
  double fs_;
  DetectorSelection selection_;
  bool input_bandpassed_;
  std::optional<BiquadCascade> prefilter_;
  double blink_delay_s_ = 0.0;
  DetectorState state_;
  std::vector<DetectionEvent> compensate(std::vector<DetectionEvent> blinks) const;
};

/// Orders events by start time, then kind.
void sort_events(std::vector<DetectionEvent>& events);

}  // namespace pieeg
