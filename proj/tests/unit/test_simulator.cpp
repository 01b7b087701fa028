#include "doctest.h"

#include <cmath>
#include <numbers>

#include "pieeg/dsp.hpp"
#include "pieeg/simulator.hpp"

using namespace pieeg;

namespace {

void start_streaming(SimDevice& dev) {
  dev.send_command(Command::simple(CommandKind::RESET));
  dev.send_command(Command::simple(CommandKind::START));
  dev.send_command(Command::simple(CommandKind::RDATAC));
}

// Decoded microvolts, [channel][sample].
std::vector<std::vector<double>> decode_all(const std::vector<FrameBytes>& frames, const RegisterFile& regs) {
  std::vector<std::vector<double>> out(kChannels);
  for (const auto& f : frames) {
    const auto d = decode_frame(f);
    for (int ch = 0; ch < kChannels; ++ch) {
      out[ch].push_back(raw_to_microvolts(d.frame.channels[ch], regs.channel_gain[ch], regs.vref));
    }
  }
  return out;
}

double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("device starts powered down") {
  SimDevice dev(Scenario::silent(1.0));
  CHECK(dev.mode() == DeviceMode::POWERED_DOWN);
  CHECK_THROWS_AS(dev.send_command(Command::simple(CommandKind::START)), ProtocolError);
  dev.send_command(Command::simple(CommandKind::WAKEUP));
  CHECK(dev.mode() == DeviceMode::IDLE);
}

TEST_CASE("RESET restores the default register file") {
  SimDevice dev(Scenario::silent(1.0));
  dev.send_command(Command::simple(CommandKind::RESET));
  const auto bytes = dev.send_command(Command::rreg(0, reg::kCount));
  REQUIRE(bytes.size() == reg::kCount);
  const RegisterFile regs = from_register_image(bytes, 4.5);
  CHECK(regs == RegisterFile{});
  CHECK(regs.sample_rate == 250);
  for (int g : regs.channel_gain) CHECK(g == 24);
  CHECK(regs.bias_enabled);
  CHECK_FALSE(regs.lead_off_enabled);
  CHECK(dev.mode() == DeviceMode::IDLE);
}

TEST_CASE("register access is refused during continuous read") {
  SimDevice dev(Scenario::silent(1.0));
  dev.send_command(Command::simple(CommandKind::RESET));
  dev.send_command(Command::simple(CommandKind::RDATAC));
  CHECK(dev.mode() == DeviceMode::CONTINUOUS_READ);
  CHECK_THROWS_AS(dev.send_command(Command::rreg(0, 1)), ProtocolError);
  CHECK_THROWS_AS(dev.send_command(Command::write_config(RegisterFile{})), ProtocolError);
  dev.send_command(Command::simple(CommandKind::SDATAC));
  CHECK(dev.mode() == DeviceMode::IDLE);
  CHECK_NOTHROW(dev.send_command(Command::rreg(0, 1)));
}

TEST_CASE("WREG with an illegal gain is rejected and leaves registers alone") {
  SimDevice dev(Scenario::silent(1.0));
  dev.send_command(Command::simple(CommandKind::RESET));
  RegisterFile bad;
  bad.channel_gain[0] = 3;
  try {
    dev.send_command(Command::write_config(bad));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(e.violations().size() == 1);
    CHECK(e.violations()[0].find("channel_gain[0]") == 0);
  }
  CHECK(dev.registers() == RegisterFile{});

  RegisterFile good;
  good.channel_gain.fill(12);
  good.sample_rate = 1000;
  dev.send_command(Command::write_config(good));
  CHECK(dev.registers() == good);
}

TEST_CASE("single-register write updates one channel") {
  SimDevice dev(Scenario::silent(1.0));
  dev.send_command(Command::simple(CommandKind::RESET));
  dev.send_command(Command::wreg(reg::CH1SET + 2, {0x40}));  // gain code 4 -> 8
  CHECK(dev.registers().channel_gain[2] == 8);
  CHECK(dev.registers().channel_gain[1] == 24);
  // read-only registers ignore writes
  dev.send_command(Command::wreg(reg::ID, {0x00}));
  CHECK(dev.send_command(Command::rreg(reg::ID, 1))[0] == 0x3E);
}

TEST_CASE("step requires continuous read") {
  SimDevice dev(Scenario::silent(1.0));
  dev.send_command(Command::simple(CommandKind::RESET));
  CHECK_THROWS_AS(dev.step(1), ProtocolError);
  dev.send_command(Command::simple(CommandKind::RDATAC));
  CHECK_THROWS_AS(dev.step(1), ProtocolError);  // not started
  dev.send_command(Command::simple(CommandKind::START));
  CHECK(dev.step(5).size() == 5);
  CHECK(dev.clock() == 5);
}

TEST_CASE("RDATA reads single frames in IDLE") {
  SimDevice dev(Scenario::silent(1.0));
  dev.send_command(Command::simple(CommandKind::RESET));
  dev.send_command(Command::simple(CommandKind::START));
  const auto f = dev.send_command(Command::simple(CommandKind::RDATA));
  CHECK(f.size() == kFrameBytes);
  CHECK(dev.clock() == 1);
}

TEST_CASE("silent scenario produces zero channel words") {
  SimDevice dev(Scenario::silent(2.0));
  start_streaming(dev);
  for (const auto& f : dev.step(500)) {
    const auto d = decode_frame(f);
    CHECK(d.sync_valid);
    CHECK(d.frame.channels == std::array<std::int32_t, 8>{});
  }
}

TEST_CASE("noise-only run matches the internal noise figure") {
  Scenario s;
  s.duration = 10.0;
  s.background_noise_uv_rms = kInternalNoiseUvRms;
  s.environment_noise_uv_rms = 0.0;
  s.seed = 2024;
  SimDevice dev(s);
  start_streaming(dev);
  const auto uv = decode_all(dev.step(2500), dev.registers());
  for (int ch = 0; ch < kChannels; ++ch) {
    CHECK(rms(uv[ch]) == doctest::Approx(0.4).epsilon(0.10));
  }
}

TEST_CASE("fixed seed gives byte-identical streams") {
  Scenario s;
  s.duration = 5.0;
  s.alpha_intervals.push_back({1.0, 4.0, 20.0, 10.0, {6, 7}});
  s.blink_events.push_back({2.0, 0.3, 150.0, {0, 1}});
  s.chew_episodes.push_back({0.5, 3.5, 1.5, 40.0, {2, 3, 4, 5}});
  SimDevice a(s), b(s);
  start_streaming(a);
  start_streaming(b);
  CHECK(a.step(1250) == b.step(1250));
  s.seed = 99;
  SimDevice c(s);
  start_streaming(c);
  a.send_command(Command::simple(CommandKind::RESET));
  CHECK(c.step(10) != b.step(10));
}

TEST_CASE("frame count follows the sample clock") {
  Scenario s;
  s.duration = 10.0;
  SimDevice dev(s);
  dev.send_command(Command::simple(CommandKind::RESET));
  RegisterFile regs;
  regs.sample_rate = 1000;
  dev.send_command(Command::write_config(regs));
  dev.send_command(Command::simple(CommandKind::START));
  dev.send_command(Command::simple(CommandKind::RDATAC));
  std::vector<std::uint8_t> bytes;
  dev.step_into(10 * 1000, bytes);
  CHECK(bytes.size() == 10000 * kFrameBytes);
  CHECK(dev.clock() == 10000);
}

TEST_CASE("synth_sample components") {
  SUBCASE("silent") {
    const Scenario s = Scenario::silent(5.0);
    for (double t = 0.0; t <= 5.0; t += 0.37) {
      for (int ch = 0; ch < kChannels; ++ch) CHECK(synth_sample(s, t, ch) == 0.0);
    }
  }
  SUBCASE("alpha sinusoid starts at zero phase") {
    Scenario s = Scenario::silent(5.0);
    s.alpha_intervals.push_back({0.0, 5.0, 20.0, 10.0, {6, 7}});
    for (double t = 0.0; t <= 5.0; t += 0.013) {
      const double expected = 20.0 * std::sin(2.0 * std::numbers::pi * 10.0 * t);
      CHECK(synth_sample(s, t, 6) == doctest::Approx(expected).epsilon(1e-12).scale(20.0));
      CHECK(synth_sample(s, t, 0) == 0.0);
    }
  }
  SUBCASE("blink peaks at its centre") {
    Scenario s = Scenario::silent(5.0);
    s.blink_events.push_back({2.0, 0.3, 150.0, {0, 1}});
    CHECK(std::abs(synth_sample(s, 2.0, 0)) == doctest::Approx(150.0));
    CHECK(std::abs(synth_sample(s, 2.0, 1)) == doctest::Approx(150.0));
    CHECK(synth_sample(s, 2.0, 4) == 0.0);
    CHECK(synth_sample(s, 2.0 + 0.15, 0) == doctest::Approx(0.0).epsilon(1e-9).scale(150.0));
    CHECK(synth_sample(s, 2.0 + 0.075, 0) == doctest::Approx(75.0));
  }
  SUBCASE("mains hum") {
    Scenario s = Scenario::silent(1.0);
    s.mains = MainsHum::hz60;
    s.mains_amplitude_uv = 5.0;
    CHECK(synth_sample(s, 1.0 / 240.0, 3) == doctest::Approx(5.0));
  }
  SUBCASE("chew bursts are silent in the second half of each cycle") {
    Scenario s = Scenario::silent(10.0);
    s.chew_episodes.push_back({2.0, 8.0, 1.0, 40.0, {2, 3}});
    CHECK(synth_sample(s, 2.7, 2) == 0.0);
    double peak = 0.0;
    for (double t = 2.0; t < 2.5; t += 0.001) peak = std::max(peak, std::abs(synth_sample(s, t, 2)));
    CHECK(peak > 10.0);
    CHECK(synth_sample(s, 1.0, 2) == 0.0);
  }
  SUBCASE("out of range") {
    const Scenario s = Scenario::silent(1.0);
    CHECK_THROWS_AS(synth_sample(s, 1.5, 0), std::domain_error);
    CHECK_THROWS_AS(synth_sample(s, -0.1, 0), std::domain_error);
    CHECK_THROWS_AS(synth_sample(s, 0.5, 8), std::domain_error);
  }
}

TEST_CASE("cached frame generation equals pure evaluation") {
  Scenario s;
  s.duration = 4.0;
  s.alpha_intervals.push_back({1.0, 3.0, 20.0, 9.5, {6, 7}});
  SignalGenerator cached(s, 250.0);
  const SignalGenerator pure(s, 250.0);
  for (std::int64_t n = 0; n < 1000; ++n) {
    const double t = static_cast<double>(n) / 250.0;
    const auto frame = cached.next_frame(n, t);
    for (int ch = 0; ch < kChannels; ++ch) CHECK(frame[ch] == pure.sample(n, t, ch));
  }
}

TEST_CASE("quantized sine stays within half an LSB of the analytic value") {
  Scenario s = Scenario::silent(2.0);
  s.alpha_intervals.push_back({0.0, 2.0, 20.0, 10.0, {0, 1, 2, 3, 4, 5, 6, 7}});
  SimDevice dev(s);
  start_streaming(dev);
  const auto uv = decode_all(dev.step(500), dev.registers());
  const double half_lsb = 0.5 * lsb_microvolts(24, 4.5);
  for (std::size_t i = 0; i < 500; ++i) {
    const double t = static_cast<double>(i) / 250.0;
    const double expected = 20.0 * std::sin(2.0 * std::numbers::pi * 10.0 * t);
    CHECK(std::abs(uv[0][i] - expected) <= half_lsb + 1e-12);
  }
}

TEST_CASE("alpha-only scenario concentrates power in the alpha band") {
  Scenario s;
  s.duration = 20.0;
  s.alpha_intervals.push_back({0.0, 20.0, 20.0, 10.0, {0, 1, 2, 3, 4, 5, 6, 7}});
  SimDevice dev(s);
  start_streaming(dev);
  const auto uv = decode_all(dev.step(5000), dev.registers());
  SignalBlock block(250.0, kChannels, 0);
  block.data = uv;
  const Spectrum spec = welch_psd(block);
  const auto alpha = band_power(spec, 8.0, 12.0);
  const auto beta = band_power(spec, 15.0, 30.0);
  for (int ch = 0; ch < kChannels; ++ch) CHECK(alpha[ch] >= 100.0 * beta[ch]);
}

TEST_CASE("lead-off status") {
  Scenario s;
  s.duration = 10.0;
  SUBCASE("unavailable while disabled") {
    SimDevice dev(s);
    dev.send_command(Command::simple(CommandKind::RESET));
    CHECK_THROWS_AS(dev.lead_off_status(), ProtocolError);
  }
  SUBCASE("all connected") {
    SimDevice dev(s);
    dev.send_command(Command::simple(CommandKind::RESET));
    RegisterFile regs;
    regs.lead_off_enabled = true;
    dev.send_command(Command::write_config(regs));
    CHECK(dev.lead_off_status() == std::array<bool, 8>{});
  }
  SUBCASE("channel 3 disconnected") {
    s.electrode_connected[3] = false;
    SimDevice dev(s);
    dev.send_command(Command::simple(CommandKind::RESET));
    RegisterFile regs;
    regs.lead_off_enabled = true;
    dev.send_command(Command::write_config(regs));
    const auto st = dev.lead_off_status();
    for (int ch = 0; ch < kChannels; ++ch) CHECK(st[ch] == (ch == 3));
    CHECK(dev.send_command(Command::rreg(reg::LOFF_STATP, 1))[0] == 0x08);
    dev.send_command(Command::simple(CommandKind::START));
    dev.send_command(Command::simple(CommandKind::RDATAC));
    const auto frames = dev.step(250);
    const auto last = decode_frame(frames.back());
    CHECK(lead_off_bits(last.frame.status)[3]);
    // disconnected input drifts to the rail
    CHECK(last.frame.channels[3] == kRawMax);
  }
  SUBCASE("contact toggled mid-run shows up within one second of frames") {
    s.contact_changes.push_back({4.0, 5, false});
    s.contact_changes.push_back({7.0, 5, true});
    SimDevice dev(s);
    dev.send_command(Command::simple(CommandKind::RESET));
    RegisterFile regs;
    regs.lead_off_enabled = true;
    dev.send_command(Command::write_config(regs));
    dev.send_command(Command::simple(CommandKind::START));
    dev.send_command(Command::simple(CommandKind::RDATAC));
    const auto frames = dev.step(2500);
    auto fault_at = [&](double t) { return lead_off_bits(decode_frame(frames[static_cast<std::size_t>(t * 250)]).frame.status)[5]; };
    CHECK_FALSE(fault_at(3.9));
    CHECK(fault_at(5.0));
    CHECK(fault_at(6.9));
    CHECK_FALSE(fault_at(8.0));
    CHECK(dev.lead_off_status() == std::array<bool, 8>{});
  }
}

TEST_CASE("disabled channels read zero") {
  Scenario s;
  s.duration = 2.0;
  SimDevice dev(s);
  dev.send_command(Command::simple(CommandKind::RESET));
  RegisterFile regs;
  regs.channel_enabled[4] = false;
  dev.send_command(Command::write_config(regs));
  dev.send_command(Command::simple(CommandKind::START));
  dev.send_command(Command::simple(CommandKind::RDATAC));
  for (const auto& f : dev.step(100)) CHECK(decode_frame(f).frame.channels[4] == 0);
}

TEST_CASE("scenario text format") {
  const std::string text = R"(
duration: 12
seed: 5
noise: {background_uv_rms: 0.4, environment_uv_rms: 0.8}
mains: {frequency: 50, amplitude_uv: 3}
contact: [connected, connected, connected, disconnected, connected, connected, connected, connected]
alpha:
  - {start: 5, end: 10, amplitude_uv: 20, frequency_hz: 10, channels: [6, 7]}
blinks:
  - {center: 2.0, duration: 0.3, amplitude_uv: 150, channels: [0, 1]}
chew:
  - {start: 3, end: 8, rate_hz: 1.5, amplitude_uv: 40, channels: [2, 3, 4, 5]}
contact_changes:
  - {time: 6, channel: 3, state: connected}
)";
  const Scenario s = parse_scenario(text);
  CHECK(s.duration == 12.0);
  CHECK(s.seed == 5);
  CHECK(s.mains == MainsHum::hz50);
  CHECK_FALSE(s.electrode_connected[3]);
  REQUIRE(s.alpha_intervals.size() == 1);
  CHECK(s.alpha_intervals[0].channels == std::vector<int>{6, 7});
  REQUIRE(s.chew_episodes.size() == 1);
  CHECK(s.chew_episodes[0].burst_rate_hz == 1.5);
  CHECK(contact_at(s, 3, 7.0));

  const Scenario again = parse_scenario(format_scenario(s));
  CHECK(format_scenario(again) == format_scenario(s));

  CHECK_THROWS_WITH_AS(parse_scenario("duration: 5\nblinkz: []\n"), doctest::Contains("blinkz"),
                       std::runtime_error);
  CHECK_THROWS_AS(parse_scenario("seed: 1\n"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      parse_scenario("duration: 5\nalpha:\n  - {start: 1, end: 9, amplitude_uv: 5, channels: [6]}\n"),
      doctest::Contains("outside"), std::runtime_error);
  CHECK_THROWS_AS(
      parse_scenario("duration: 5\nchew:\n  - {start: 1, end: 2, rate_hz: 4, amplitude_uv: 5, channels: [6]}\n"),
      std::runtime_error);
}
