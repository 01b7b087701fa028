#pragma once

// Ground-truth description of synthetic EEG and its generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pieeg/protocol.hpp"

namespace pieeg {

enum class MainsHum { off, hz50, hz60 };

struct AlphaInterval {
  double t_start = 0.0;
  double t_end = 0.0;
  double amplitude_uv = 0.0;
  double frequency_hz = 10.0;
  std::vector<int> channels;
};

struct BlinkEvent {
  double t_center = 0.0;
  double duration_s = 0.3;
  double amplitude_uv = 0.0;
  std::vector<int> channels;
};

struct ChewEpisode {
  double t_start = 0.0;
  double t_end = 0.0;
  double burst_rate_hz = 1.5;
  double burst_amplitude_uv = 0.0;
  std::vector<int> channels;
};

// Scripted change of electrode contact at a point in time.
struct ContactChange {
  double time = 0.0;
  int channel = 0;
  bool connected = true;
};

struct Scenario {
  double duration = 10.0;
  double background_noise_uv_rms = kInternalNoiseUvRms;
  double environment_noise_uv_rms = kExternalNoiseUvRms;
  MainsHum mains = MainsHum::off;
  double mains_amplitude_uv = 0.0;
  std::vector<AlphaInterval> alpha_intervals;
  std::vector<BlinkEvent> blink_events;
  std::vector<ChewEpisode> chew_episodes;
  std::array<bool, kChannels> electrode_connected = {true, true, true, true,
                                                     true, true, true, true};
  std::vector<ContactChange> contact_changes;
  std::uint64_t seed = 1;

  /// A scenario with every amplitude and noise level at zero.
  static Scenario silent(double duration);
};

/// Empty when the scenario is well formed.
std::vector<std::string> validate_scenario(const Scenario& s);

/// Parses the YAML scenario format documented in scenarios/README.md.
/// Throws std::runtime_error with a message naming the offending key.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);
std::string format_scenario(const Scenario& s);

/// Electrode contact for `channel` at time t, after applying scripted changes.
bool contact_at(const Scenario& s, int channel, double t);

// Deterministic, counter-based noise and signal synthesis. Every sample is a
// pure function of (scenario, sample index, channel), so any window can be
// regenerated without replaying the stream from the start.
class SignalGenerator {
 public:
  SignalGenerator(const Scenario& scenario, double fs);

  /// Microvolts at sample index n. `t` is the time used for the deterministic
  /// components; it equals n / fs unless the caller wraps the scenario.
  double sample(std::int64_t n, double t, int channel) const;

  /// Same values as sample(), with per-channel caching of the slow noise rows.
  /// Calls must use non-decreasing n.
  std::array<double, kChannels> next_frame(std::int64_t n, double t);

  double fs() const { return fs_; }
  int pink_rows() const { return rows_; }

 private:
  double pink(std::int64_t n, int channel) const;
  double white(std::int64_t n, int channel) const;
  double deterministic(double t, int channel) const;

  Scenario scenario_;
  double fs_;
  int rows_;
  double pink_scale_;
  std::vector<std::uint64_t> row_offsets_;
  struct RowCache {
    std::int64_t key = -1;
    double value = 0.0;
  };
  std::vector<RowCache> cache_;  // channel-major, rows_ per channel
  std::vector<std::array<double, 8>> chew_freqs_;   // per episode
  std::vector<std::array<double, 8>> chew_phases_;  // per episode x channel
};

/// Scenario signal at time t on one channel. Noise terms are drawn on a
/// sample clock of `noise_clock_hz`. Throws std::domain_error when t lies
/// outside [0, duration] or the channel is out of range.
double synth_sample(const Scenario& scenario, double t, int channel,
                    double noise_clock_hz = 250.0);

}  // namespace pieeg
