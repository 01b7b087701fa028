#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace pieeg {

/// Contiguous multi-channel samples in microvolts.
struct SignalBlock {
  double fs = 250.0;
  double t0 = 0.0;
  std::vector<std::vector<double>> data;  // [channel][sample]

  SignalBlock() = default;
  SignalBlock(double fs_, std::size_t channels, std::size_t samples, double t0_ = 0.0)
      : fs(fs_), t0(t0_), data(channels, std::vector<double>(samples, 0.0)) {}

  std::size_t channels() const { return data.size(); }
  std::size_t samples() const { return data.empty() ? 0 : data.front().size(); }
  double duration() const { return static_cast<double>(samples()) / fs; }

  /// Throws std::domain_error when fs <= 0 or channel lengths differ.
  void check() const;
};

class DesignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;  // a0 normalized to 1

  std::complex<double> response(double f, double fs) const;
  /// Group delay at f, in samples.
  double group_delay(double f, double fs) const;
  /// Both poles strictly inside the unit circle.
  bool stable() const;
};

/// Cascaded second-order sections in direct form II transposed, with
/// per-channel state carried across calls. Single owner per stream.
class BiquadCascade {
 public:
  BiquadCascade() = default;
  BiquadCascade(std::vector<Biquad> sections, std::size_t channels);

  const std::vector<Biquad>& sections() const { return sections_; }
  std::size_t channels() const { return channels_; }

  std::complex<double> response(double f, double fs) const;
  double magnitude_db(double f, double fs) const;
  /// Group delay at f, in seconds.
  double group_delay_s(double f, double fs) const;
  std::vector<std::complex<double>> poles() const;
  bool stable() const;

  void reset();
  /// Processes one channel in place, advancing that channel's state.
  void process(std::size_t channel, std::span<double> samples);
  /// Same cascade with a different channel count and zeroed state.
  BiquadCascade with_channels(std::size_t channels) const { return {sections_, channels}; }

  /// Steady-state delay values for a unit step, one pair per section.
  std::vector<std::array<double, 2>> step_state() const;

 private:
  std::vector<Biquad> sections_;
  std::size_t channels_ = 0;
  std::vector<double> state_;  // [channel][section][2]
};

/// Butterworth band-pass via the bilinear transform with pre-warped band
/// edges. `order` is the low-pass prototype order (must be even); the result
/// has 2 * order poles in `order` second-order sections.
BiquadCascade design_bandpass(double fs, double lo = 1.0, double hi = 30.0, int order = 4,
                              std::size_t channels = 8);

/// Second-order notch at f0 with quality factor q.
BiquadCascade design_notch(double fs, double f0, double q = 30.0, std::size_t channels = 8);

/// Causal streaming filter. The cascade's channel count must match the block.
SignalBlock filter_block(BiquadCascade& filter, const SignalBlock& block);

/// Forward-backward (zero-phase) filtering of a finished recording. Uses odd
/// extension at both ends and steady-state initial conditions. The cascade is
/// used for its coefficients only.
SignalBlock filtfilt_block(const BiquadCascade& filter, const SignalBlock& block);

struct Spectrum {
  std::vector<double> freqs;             // bin centres, ascending
  std::vector<std::vector<double>> psd;  // [channel][bin], uV^2/Hz
  double resolution = 0.0;
};

enum class Detrend { none, constant };

struct WelchOptions {
  std::size_t segment_len = 256;
  double overlap = 0.5;
  Detrend detrend = Detrend::constant;
};

/// Welch average of Hann-windowed periodograms, one-sided density scaling.
/// Throws std::domain_error when the block is shorter than one segment.
Spectrum welch_psd(const SignalBlock& block, const WelchOptions& options = {});

/// Trapezoidal integral of the PSD over [f_lo, f_hi], per channel. The PSD is
/// linearly interpolated at band edges that fall between bins.
std::vector<double> band_power(const Spectrum& spec, double f_lo, double f_hi);

}  // namespace pieeg
