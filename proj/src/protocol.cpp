#include "pieeg/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pieeg {

namespace {

constexpr double kTwo24 = 16777216.0;
constexpr std::uint8_t kDeviceId = 0x3E;
constexpr std::uint8_t kReservedCode = 0x07;

std::string joined(std::span<const int> values) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << values[i];
  }
  os << '}';
  return os.str();
}

std::string config_error_message(const std::vector<std::string>& violations) {
  std::string msg = "invalid configuration";
  for (const auto& v : violations) msg += "; " + v;
  return msg;
}

// Data-rate code: 16 kSPS is code 0, halving per step.
std::uint8_t rate_code(int sps) {
  for (std::uint8_t code = 0; code < 7; ++code) {
    if ((16000 >> code) == sps) return code;
  }
  return kReservedCode;
}

std::uint8_t gain_code(int gain) {
  for (std::size_t i = 0; i < kGains.size(); ++i) {
    if (kGains[i] == gain) return static_cast<std::uint8_t>(i);
  }
  return kReservedCode;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error(config_error_message(violations)), violations_(std::move(violations)) {}

std::int32_t sign_extend_24(std::uint32_t word) {
  if (word > 0xFFFFFFu) throw std::domain_error("sign_extend_24: word exceeds 24 bits");
  if (word & 0x800000u) return static_cast<std::int32_t>(word) - (1 << 24);
  return static_cast<std::int32_t>(word);
}

DecodedFrame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kFrameBytes) {
    throw FrameError("decode_frame: expected 27 bytes, got " + std::to_string(bytes.size()));
  }
  auto word = [&](std::size_t offset) {
    return (static_cast<std::uint32_t>(bytes[offset]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 8) |
           static_cast<std::uint32_t>(bytes[offset + 2]);
  };
  DecodedFrame out;
  out.frame.status = word(0);
  for (int ch = 0; ch < kChannels; ++ch) {
    out.frame.channels[ch] = sign_extend_24(word(3 + 3 * static_cast<std::size_t>(ch)));
  }
  out.sync_valid = (out.frame.status >> 20) == kSyncNibble;
  return out;
}

FrameBytes encode_frame(const SampleFrame& frame) {
  if (frame.status > 0xFFFFFFu) throw std::domain_error("encode_frame: status exceeds 24 bits");
  FrameBytes out{};
  auto put = [&](std::size_t offset, std::uint32_t w) {
    out[offset] = static_cast<std::uint8_t>((w >> 16) & 0xFF);
    out[offset + 1] = static_cast<std::uint8_t>((w >> 8) & 0xFF);
    out[offset + 2] = static_cast<std::uint8_t>(w & 0xFF);
  };
  put(0, frame.status);
  for (int ch = 0; ch < kChannels; ++ch) {
    const std::int32_t v = frame.channels[ch];
    if (v < kRawMin || v > kRawMax) {
      throw std::domain_error("encode_frame: channel " + std::to_string(ch) + " value " +
                              std::to_string(v) + " outside 24-bit range");
    }
    put(3 + 3 * static_cast<std::size_t>(ch), static_cast<std::uint32_t>(v) & 0xFFFFFFu);
  }
  return out;
}

std::uint32_t make_status(std::uint8_t loff_statp, std::uint8_t loff_statn, std::uint8_t gpio) {
  return (kSyncNibble << 20) | (static_cast<std::uint32_t>(loff_statp) << 12) |
         (static_cast<std::uint32_t>(loff_statn) << 4) | (gpio & 0x0Fu);
}

std::array<bool, kChannels> lead_off_bits(std::uint32_t status) {
  std::array<bool, kChannels> out{};
  const std::uint32_t statp = (status >> 12) & 0xFFu;
  for (int ch = 0; ch < kChannels; ++ch) out[ch] = (statp >> ch) & 1u;
  return out;
}

bool is_valid_gain(int gain) {
  return std::find(kGains.begin(), kGains.end(), gain) != kGains.end();
}

bool is_valid_sample_rate(int sps) {
  return std::find(kSampleRates.begin(), kSampleRates.end(), sps) != kSampleRates.end();
}

double lsb_microvolts(int gain, double vref) {
  if (!is_valid_gain(gain)) throw std::domain_error("invalid gain " + std::to_string(gain));
  if (!(vref > 0.0)) throw std::domain_error("vref must be positive");
  return 2.0 * vref / static_cast<double>(gain) / kTwo24 * 1e6;
}

double raw_to_microvolts(std::int32_t raw, int gain, double vref) {
  return static_cast<double>(raw) * lsb_microvolts(gain, vref);
}

Quantized microvolts_to_raw(double microvolts, int gain, double vref) {
  const double lsb = lsb_microvolts(gain, vref);
  const double code = std::nearbyint(microvolts / lsb);
  if (std::isnan(code)) return {0, true};
  if (code > kRawMax) return {kRawMax, true};
  if (code < kRawMin) return {kRawMin, true};
  return {static_cast<std::int32_t>(code), false};
}

std::vector<std::string> validate_config(const RegisterFile& reg) {
  std::vector<std::string> out;
  if (!is_valid_sample_rate(reg.sample_rate)) {
    out.push_back("sample_rate=" + std::to_string(reg.sample_rate) + " not in " +
                  joined(kSampleRates));
  }
  for (int ch = 0; ch < kChannels; ++ch) {
    if (!is_valid_gain(reg.channel_gain[ch])) {
      out.push_back("channel_gain[" + std::to_string(ch) + "]=" +
                    std::to_string(reg.channel_gain[ch]) + " not in " + joined(kGains));
    }
  }
  if (!(reg.vref > 0.0)) {
    std::ostringstream os;
    os << "vref=" << reg.vref << " must be > 0";
    out.push_back(os.str());
  }
  return out;
}

RegisterImage to_register_image(const RegisterFile& regs) {
  RegisterImage img{};
  std::uint8_t enabled_mask = 0;
  for (int ch = 0; ch < kChannels; ++ch) {
    if (regs.channel_enabled[ch]) enabled_mask |= static_cast<std::uint8_t>(1u << ch);
  }
  img[reg::ID] = kDeviceId;
  img[reg::CONFIG1] = static_cast<std::uint8_t>(0x90 | rate_code(regs.sample_rate));
  img[reg::CONFIG2] = 0xC0;
  img[reg::CONFIG3] = static_cast<std::uint8_t>(0xE0 | (regs.bias_enabled ? 0x0C : 0x00));
  img[reg::LOFF] = 0x00;
  for (int ch = 0; ch < kChannels; ++ch) {
    const std::uint8_t pd = regs.channel_enabled[ch] ? 0x00 : 0x80;
    img[reg::CH1SET + ch] = static_cast<std::uint8_t>(pd | (gain_code(regs.channel_gain[ch]) << 4));
  }
  img[reg::BIAS_SENSP] = regs.bias_enabled ? enabled_mask : 0x00;
  img[reg::BIAS_SENSN] = regs.bias_enabled ? enabled_mask : 0x00;
  img[reg::LOFF_SENSP] = regs.lead_off_enabled ? enabled_mask : 0x00;
  img[reg::LOFF_SENSN] = 0x00;
  img[reg::LOFF_FLIP] = 0x00;
  img[reg::LOFF_STATP] = 0x00;
  img[reg::LOFF_STATN] = 0x00;
  img[reg::GPIO] = 0x0F;
  img[reg::MISC1] = 0x20;  // SRB1 shared reference
  img[reg::MISC2] = 0x00;
  img[reg::CONFIG4] = regs.lead_off_enabled ? 0x02 : 0x00;
  return img;
}

RegisterFile from_register_image(std::span<const std::uint8_t> image, double vref) {
  if (image.size() != reg::kCount) {
    throw std::invalid_argument("register image must have " + std::to_string(reg::kCount) +
                                " bytes");
  }
  RegisterFile out;
  const std::uint8_t dr = image[reg::CONFIG1] & 0x07;
  out.sample_rate = dr == kReservedCode ? 0 : (16000 >> dr);
  for (int ch = 0; ch < kChannels; ++ch) {
    const std::uint8_t chset = image[reg::CH1SET + ch];
    const std::uint8_t code = (chset >> 4) & 0x07;
    out.channel_gain[ch] = code == kReservedCode ? 0 : kGains[code];
    out.channel_enabled[ch] = (chset & 0x80) == 0;
  }
  out.bias_enabled = (image[reg::CONFIG3] & 0x04) != 0;
  out.lead_off_enabled = (image[reg::CONFIG4] & 0x02) != 0;
  out.vref = vref;
  return out;
}

Command Command::write_config(const RegisterFile& regs) {
  const RegisterImage img = to_register_image(regs);
  return wreg(reg::CONFIG1, std::vector<std::uint8_t>(img.begin() + reg::CONFIG1, img.end()));
}

void check_command(const Command& cmd) {
  if (cmd.kind != CommandKind::RREG && cmd.kind != CommandKind::WREG) return;
  if (cmd.count < 1) throw ProtocolError(to_string(cmd.kind) + ": count must be >= 1");
  if (cmd.address >= reg::kCount ||
      static_cast<std::size_t>(cmd.address) + cmd.count > reg::kCount) {
    throw ProtocolError(to_string(cmd.kind) + ": address range outside register map");
  }
  if (cmd.kind == CommandKind::WREG && cmd.values.size() != cmd.count) {
    throw ProtocolError("WREG: value count does not match count field");
  }
}

std::string to_string(CommandKind kind) {
  switch (kind) {
    case CommandKind::WAKEUP: return "WAKEUP";
    case CommandKind::STANDBY: return "STANDBY";
    case CommandKind::RESET: return "RESET";
    case CommandKind::START: return "START";
    case CommandKind::STOP: return "STOP";
    case CommandKind::RDATAC: return "RDATAC";
    case CommandKind::SDATAC: return "SDATAC";
    case CommandKind::RDATA: return "RDATA";
    case CommandKind::RREG: return "RREG";
    case CommandKind::WREG: return "WREG";
  }
  return "UNKNOWN";
}

}  // namespace pieeg
