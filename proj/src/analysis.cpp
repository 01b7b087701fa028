#include "pieeg/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pieeg/daemon.hpp"

namespace pieeg {

const std::vector<Band>& standard_bands() {
  static const std::vector<Band> bands = {
      {"delta", 1.0, 4.0}, {"theta", 4.0, 8.0}, {"alpha", 8.0, 12.0}, {"beta", 12.0, 30.0}};
  return bands;
}

namespace {

SignalBlock slice(const SignalBlock& block, std::size_t start, std::size_t n) {
  SignalBlock part(block.fs, block.channels(), n, block.t0 + static_cast<double>(start) / block.fs);
  for (std::size_t c = 0; c < block.channels(); ++c) {
    std::copy_n(block.data[c].begin() + static_cast<std::ptrdiff_t>(start), n, part.data[c].begin());
  }
  return part;
}

void append(std::vector<DetectionEvent>& to, std::vector<DetectionEvent> from) {
  to.insert(to.end(), std::make_move_iterator(from.begin()), std::make_move_iterator(from.end()));
}

std::vector<BandPowerRow> band_table(const SignalBlock& raw, const ChannelLabels& labels) {
  std::size_t seg = std::size_t{1} << static_cast<int>(std::lround(std::log2(raw.fs)));
  while (seg > raw.samples() && seg > 1) seg /= 2;
  if (seg < 8) return {};
  const Spectrum spec = welch_psd(raw, {seg, 0.5, Detrend::constant});
  std::vector<BandPowerRow> rows(raw.channels());
  for (std::size_t c = 0; c < rows.size(); ++c) {
    rows[c].channel = static_cast<int>(c);
    rows[c].label = c < labels.size() ? labels[c] : "ch" + std::to_string(c + 1);
  }
  for (const auto& band : standard_bands()) {
    const double hi = std::min(band.hi, raw.fs / 2.0);
    const auto p = hi > band.lo ? band_power(spec, band.lo, hi) : std::vector<double>(raw.channels(), 0.0);
    for (std::size_t c = 0; c < rows.size(); ++c) rows[c].power.push_back(p[c]);
  }
  return rows;
}

}  // namespace

AnalysisReport analyze_block(const SignalBlock& raw, const DetectorSelection& selection,
                             const DetectorConfig& config, const ChannelLabels& labels) {
  AnalysisReport report;
  report.fs = raw.fs;
  report.duration_s = static_cast<double>(raw.samples()) / raw.fs;
  if (selection.blink) {
    const SignalBlock bp = filtfilt_block(design_bandpass(raw.fs, 1.0, 30.0, 4, raw.channels()), raw);
    DetectorBank bank(config, raw.fs, {true, false, false}, true);
    append(report.events, bank.process(bp));
    append(report.events, bank.finish());
  }
  if (selection.chew || selection.alpha) {
    DetectorBank bank(config, raw.fs, {false, selection.chew, selection.alpha}, false);
    append(report.events, bank.process(raw));
    append(report.events, bank.finish());
  }
  sort_events(report.events);
  report.band_power = band_table(raw, labels);
  return report;
}

std::vector<DetectionEvent> replay_block(const SignalBlock& raw, const DetectorSelection& selection,
                                         const DetectorConfig& config, const ReplayOptions& options) {
  const std::size_t step =
      static_cast<std::size_t>(std::max<long long>(1, std::llround(options.block_ms / 1000.0 * raw.fs)));
  DetectorBank bank(config, raw.fs, selection, false);
  std::vector<DetectionEvent> events;
  auto emit = [&](std::vector<DetectionEvent> batch) {
    for (auto& e : batch) {
      if (options.on_event) options.on_event(e);
      events.push_back(std::move(e));
    }
  };
  const auto origin = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < raw.samples(); s += step) {
    const std::size_t n = std::min(step, raw.samples() - s);
    if (options.realtime) {
      std::this_thread::sleep_until(origin + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                 std::chrono::duration<double>(static_cast<double>(s + n) / raw.fs)));
    }
    emit(bank.process(slice(raw, s, n)));
  }
  emit(bank.finish());
  return events;
}

DetectorSelection parse_selection(const std::string& text) {
  DetectorSelection sel{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "blink") {
      sel.blink = true;
    } else if (item == "chew") {
      sel.chew = true;
    } else if (item == "alpha") {
      sel.alpha = true;
    } else if (item == "all") {
      sel = {};
    } else {
      throw std::invalid_argument("unknown detector '" + item + "' (expected blink, chew, alpha)");
    }
  }
  if (!sel.blink && !sel.chew && !sel.alpha) throw std::invalid_argument("no detector selected");
  return sel;
}

nlohmann::json to_json(const AnalysisReport& report) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : report.events) events.push_back(to_json(e));
  nlohmann::json table = nlohmann::json::array();
  for (const auto& row : report.band_power) {
    nlohmann::json r = {{"channel", row.channel}, {"label", row.label}};
    for (std::size_t b = 0; b < standard_bands().size(); ++b) r[standard_bands()[b].name + "_uV2"] = row.power[b];
    table.push_back(std::move(r));
  }
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : standard_bands()) bands.push_back({{"name", b.name}, {"lo_hz", b.lo}, {"hi_hz", b.hi}});
  return {{"fs", report.fs},   {"duration_s", report.duration_s}, {"events", std::move(events)},
          {"bands", bands},    {"band_power", std::move(table)}};
}

void write_band_power_csv(const AnalysisReport& report, std::ostream& out) {
  out << "channel,label";
  for (const auto& b : standard_bands()) out << ',' << b.name << "_uV2";
  out << '\n';
  char buf[32];
  for (const auto& row : report.band_power) {
    out << row.channel << ',' << row.label;
    for (double p : row.power) {
      std::snprintf(buf, sizeof buf, "%.6f", p);
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace pieeg
