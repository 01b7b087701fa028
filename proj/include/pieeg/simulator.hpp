#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pieeg/dsp.hpp"
#include "pieeg/protocol.hpp"
#include "pieeg/scenario.hpp"

namespace pieeg {

enum class DeviceMode { POWERED_DOWN, STANDBY, IDLE, CONTINUOUS_READ };

std::string to_string(DeviceMode mode);

/// Register-accurate stand-in for the acquisition board. Starts powered down;
/// RESET or WAKEUP brings it to IDLE. Samples are clocked by index, not by
/// wall time. Past the end of the scenario the deterministic content repeats
/// while the noise keeps running.
///
/// Single owner: one caller issues commands and steps the device.
class SimDevice {
 public:
  explicit SimDevice(Scenario scenario, double vref = 4.5);

  /// Executes one command. RREG returns the register bytes, RDATA one frame,
  /// everything else an empty vector. Throws ProtocolError for commands that
  /// are illegal in the current mode and ConfigError for rejected writes.
  std::vector<std::uint8_t> send_command(const Command& cmd);

  /// Requires CONTINUOUS_READ with conversions started.
  std::vector<FrameBytes> step(std::size_t n_frames);
  /// Appends frames to `out` without allocating per frame.
  void step_into(std::size_t n_frames, std::vector<std::uint8_t>& out);

  /// Per-channel lead-off fault flags. Throws ProtocolError when lead-off
  /// detection is disabled in the registers.
  std::array<bool, kChannels> lead_off_status() const;

  DeviceMode mode() const { return mode_; }
  bool converting() const { return converting_; }
  std::uint64_t clock() const { return clock_; }
  const RegisterFile& registers() const { return registers_; }
  const Scenario& scenario() const { return scenario_; }

 private:
  FrameBytes make_frame();
  void require_powered() const;
  double scenario_time(std::uint64_t index) const;
  std::uint8_t lead_off_mask(double t) const;

  Scenario scenario_;
  double vref_;
  RegisterFile registers_;
  RegisterImage image_;
  DeviceMode mode_ = DeviceMode::POWERED_DOWN;
  bool converting_ = false;
  std::uint64_t clock_ = 0;
  SignalGenerator generator_;
};

/// Runs a scenario through a fresh device (RESET, configure, START, RDATAC)
/// and decodes every frame back to microvolts. Covers the whole scenario.
SignalBlock render_scenario(const Scenario& scenario, int sample_rate = 250, int gain = 24,
                            double vref = 4.5);

/// Decodes concatenated frames to microvolts with per-channel gains.
SignalBlock frames_to_block(std::span<const std::uint8_t> bytes, const RegisterFile& regs, double t0 = 0.0);

}  // namespace pieeg
