#include "pieeg/simulator.hpp"

#include <cmath>

namespace pieeg {

std::string to_string(DeviceMode mode) {
  switch (mode) {
    case DeviceMode::POWERED_DOWN: return "POWERED_DOWN";
    case DeviceMode::STANDBY: return "STANDBY";
    case DeviceMode::IDLE: return "IDLE";
    case DeviceMode::CONTINUOUS_READ: return "CONTINUOUS_READ";
  }
  return "UNKNOWN";
}

SimDevice::SimDevice(Scenario scenario, double vref)
    : scenario_(std::move(scenario)),
      vref_(vref),
      image_(to_register_image(RegisterFile{})),
      generator_(scenario_, RegisterFile{}.sample_rate) {
  if (auto violations = validate_scenario(scenario_); !violations.empty()) {
    throw std::invalid_argument("SimDevice: invalid scenario: " + violations.front());
  }
  if (!(vref > 0.0)) throw std::invalid_argument("SimDevice: vref must be > 0");
  registers_.vref = vref_;
}

void SimDevice::require_powered() const {
  if (mode_ == DeviceMode::POWERED_DOWN) throw ProtocolError("device is powered down; send RESET or WAKEUP");
}

double SimDevice::scenario_time(std::uint64_t index) const {
  const double t = static_cast<double>(index) / registers_.sample_rate;
  return t <= scenario_.duration ? t : std::fmod(t, scenario_.duration);
}

std::uint8_t SimDevice::lead_off_mask(double t) const {
  if (!registers_.lead_off_enabled) return 0;
  std::uint8_t mask = 0;
  for (int ch = 0; ch < kChannels; ++ch) {
    if (registers_.channel_enabled[ch] && !contact_at(scenario_, ch, t)) {
      mask |= static_cast<std::uint8_t>(1u << ch);
    }
  }
  return mask;
}

std::vector<std::uint8_t> SimDevice::send_command(const Command& cmd) {
  check_command(cmd);
  switch (cmd.kind) {
    case CommandKind::RESET: {
      RegisterFile defaults;
      defaults.vref = vref_;
      registers_ = defaults;
      image_ = to_register_image(defaults);
      generator_ = SignalGenerator(scenario_, registers_.sample_rate);
      mode_ = DeviceMode::IDLE;
      converting_ = false;
      return {};
    }
    case CommandKind::WAKEUP:
      if (mode_ == DeviceMode::POWERED_DOWN || mode_ == DeviceMode::STANDBY) mode_ = DeviceMode::IDLE;
      return {};
    case CommandKind::STANDBY:
      require_powered();
      if (mode_ == DeviceMode::CONTINUOUS_READ) throw ProtocolError("STANDBY: send SDATAC first");
      mode_ = DeviceMode::STANDBY;
      converting_ = false;
      return {};
    case CommandKind::START:
      require_powered();
      if (mode_ == DeviceMode::STANDBY) throw ProtocolError("START: device in standby");
      converting_ = true;
      return {};
    case CommandKind::STOP:
      require_powered();
      converting_ = false;
      return {};
    case CommandKind::RDATAC:
      require_powered();
      if (mode_ == DeviceMode::STANDBY) throw ProtocolError("RDATAC: device in standby");
      mode_ = DeviceMode::CONTINUOUS_READ;
      return {};
    case CommandKind::SDATAC:
      require_powered();
      if (mode_ == DeviceMode::CONTINUOUS_READ) mode_ = DeviceMode::IDLE;
      return {};
    case CommandKind::RDATA: {
      require_powered();
      if (mode_ != DeviceMode::IDLE) throw ProtocolError("RDATA: only valid in IDLE (send SDATAC first)");
      if (!converting_) throw ProtocolError("RDATA: conversions not started");
      const FrameBytes f = make_frame();
      return {f.begin(), f.end()};
    }
    case CommandKind::RREG: {
      require_powered();
      if (mode_ == DeviceMode::CONTINUOUS_READ) throw ProtocolError("RREG: send SDATAC first");
      RegisterImage live = image_;
      live[reg::LOFF_STATP] = lead_off_mask(scenario_time(clock_));
      return {live.begin() + cmd.address, live.begin() + cmd.address + cmd.count};
    }
    case CommandKind::WREG: {
      require_powered();
      if (mode_ == DeviceMode::CONTINUOUS_READ) throw ProtocolError("WREG: send SDATAC first");
      RegisterImage next = image_;
      for (std::size_t i = 0; i < cmd.values.size(); ++i) {
        const std::size_t addr = cmd.address + i;
        if (addr == reg::ID || addr == reg::LOFF_STATP || addr == reg::LOFF_STATN) continue;  // read-only
        next[addr] = cmd.values[i];
      }
      RegisterFile decoded = from_register_image(next, vref_);
      if (auto violations = validate_config(decoded); !violations.empty()) throw ConfigError(std::move(violations));
      const bool rate_changed = decoded.sample_rate != registers_.sample_rate;
      image_ = next;
      registers_ = decoded;
      if (rate_changed) generator_ = SignalGenerator(scenario_, registers_.sample_rate);
      return {};
    }
  }
  throw ProtocolError("unknown command");
}

FrameBytes SimDevice::make_frame() {
  const double t = scenario_time(clock_);
  const auto values = generator_.next_frame(static_cast<std::int64_t>(clock_), t);
  SampleFrame frame;
  frame.status = make_status(lead_off_mask(t));
  for (int ch = 0; ch < kChannels; ++ch) {
    if (!registers_.channel_enabled[ch]) continue;
    frame.channels[ch] = microvolts_to_raw(values[ch], registers_.channel_gain[ch], vref_).raw;
  }
  ++clock_;
  return encode_frame(frame);
}

std::vector<FrameBytes> SimDevice::step(std::size_t n_frames) {
  if (mode_ != DeviceMode::CONTINUOUS_READ) {
    throw ProtocolError("step: device not in CONTINUOUS_READ (mode " + to_string(mode_) + ")");
  }
  if (!converting_) throw ProtocolError("step: conversions not started (send START)");
  std::vector<FrameBytes> out;
  out.reserve(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) out.push_back(make_frame());
  return out;
}

void SimDevice::step_into(std::size_t n_frames, std::vector<std::uint8_t>& out) {
  if (mode_ != DeviceMode::CONTINUOUS_READ) {
    throw ProtocolError("step: device not in CONTINUOUS_READ (mode " + to_string(mode_) + ")");
  }
  if (!converting_) throw ProtocolError("step: conversions not started (send START)");
  out.reserve(out.size() + n_frames * kFrameBytes);
  for (std::size_t i = 0; i < n_frames; ++i) {
    const FrameBytes f = make_frame();
    out.insert(out.end(), f.begin(), f.end());
  }
}

std::array<bool, kChannels> SimDevice::lead_off_status() const {
  if (!registers_.lead_off_enabled) throw ProtocolError("lead-off status unavailable: lead-off detection disabled");
  const std::uint8_t mask = lead_off_mask(scenario_time(clock_ == 0 ? 0 : clock_ - 1));
  std::array<bool, kChannels> out{};
  for (int ch = 0; ch < kChannels; ++ch) out[ch] = (mask >> ch) & 1u;
  return out;
}

SignalBlock frames_to_block(std::span<const std::uint8_t> bytes, const RegisterFile& regs, double t0) {
  if (bytes.size() % kFrameBytes != 0) throw FrameError("frame stream length is not a multiple of 27");
  const std::size_t n = bytes.size() / kFrameBytes;
  SignalBlock block(regs.sample_rate, kChannels, n, t0);
  for (std::size_t i = 0; i < n; ++i) {
    const DecodedFrame d = decode_frame(bytes.subspan(i * kFrameBytes, kFrameBytes));
    for (int ch = 0; ch < kChannels; ++ch) {
      block.data[ch][i] = raw_to_microvolts(d.frame.channels[ch], regs.channel_gain[ch], regs.vref);
    }
  }
  return block;
}

SignalBlock render_scenario(const Scenario& scenario, int sample_rate, int gain, double vref) {
  SimDevice dev(scenario, vref);
  RegisterFile regs;
  regs.sample_rate = sample_rate;
  regs.channel_gain.fill(gain);
  regs.vref = vref;
  dev.send_command(Command::simple(CommandKind::RESET));
  dev.send_command(Command::write_config(regs));
  dev.send_command(Command::simple(CommandKind::START));
  dev.send_command(Command::simple(CommandKind::RDATAC));
  const auto n = static_cast<std::size_t>(std::llround(scenario.duration * sample_rate));
  std::vector<std::uint8_t> bytes;
  dev.step_into(n, bytes);
  return frames_to_block(bytes, dev.registers());
}

}  // namespace pieeg
