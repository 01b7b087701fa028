#pragma once

// Batch workflows over a finished signal: zero-phase offline analysis and a
// causal block-by-block replay of the same data.

#include <chrono>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pieeg/detect.hpp"
#include "pieeg/dsp.hpp"
#include "pieeg/session.hpp"

namespace pieeg {

struct Band {
  std::string name;
  double lo;
  double hi;
};

/// delta 1-4, theta 4-8, alpha 8-12, beta 12-30 Hz.
const std::vector<Band>& standard_bands();

struct BandPowerRow {
  int channel = 0;
  std::string label;
  std::vector<double> power;  // uV^2, one per standard band
};

struct AnalysisReport {
  double fs = 0.0;
  double duration_s = 0.0;
  std::vector<DetectionEvent> events;
  std::vector<BandPowerRow> band_power;
};

/// Offline analysis: the blink path sees the 1-30 Hz band-pass applied
/// forward and backward; chew and alpha detectors see the raw signal, as in
/// replay. Band powers come from a Welch PSD with one-second segments.
AnalysisReport analyze_block(const SignalBlock& raw, const DetectorSelection& selection = {},
                             const DetectorConfig& config = {}, const ChannelLabels& labels = kDefaultLabels);

struct ReplayOptions {
  double block_ms = 50.0;
  bool realtime = false;
  /// Called with each event as soon as it is detected.
  std::function<void(const DetectionEvent&)> on_event;
};

/// Streams `raw` through the causal detector bank in blocks of `block_ms`,
/// optionally paced to wall-clock time. Returns every event in order.
std::vector<DetectionEvent> replay_block(const SignalBlock& raw, const DetectorSelection& selection = {},
                                         const DetectorConfig& config = {}, const ReplayOptions& options = {});

/// Parses "blink,chew,alpha" (any subset, any order). Throws std::invalid_argument.
DetectorSelection parse_selection(const std::string& text);

nlohmann::json to_json(const AnalysisReport& report);
/// CSV with columns channel,label,<band>_uV2...
void write_band_power_csv(const AnalysisReport& report, std::ostream& out);

}  // namespace pieeg
