#pragma once

// Device framing, register map and unit conversion for an ADS1299-class
// 8-channel 24-bit biopotential converter.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pieeg {

inline constexpr int kChannels = 8;
inline constexpr std::size_t kFrameBytes = 27;  // 3 status + 8 x 3 channel bytes
inline constexpr std::uint32_t kSyncNibble = 0xC;
inline constexpr std::int32_t kRawMax = (1 << 23) - 1;
inline constexpr std::int32_t kRawMin = -(1 << 23);

inline constexpr std::array<int, 7> kSampleRates = {250, 500, 1000, 2000, 4000, 8000, 16000};
inline constexpr std::array<int, 7> kGains = {1, 2, 4, 6, 8, 12, 24};

// Datasheet-level figures of the reference board. Not enforced anywhere;
// the noise figures seed the simulator defaults.
inline constexpr double kInternalNoiseUvRms = 0.4;
inline constexpr double kExternalNoiseUvRms = 0.8;
inline constexpr double kCmrrDb = 120.0;
inline constexpr double kSnrDb = 130.0;

using FrameBytes = std::array<std::uint8_t, kFrameBytes>;

class FrameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a register write or configuration request fails validation.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

struct SampleFrame {
  std::uint32_t status = 0;
  std::array<std::int32_t, kChannels> channels{};

  bool operator==(const SampleFrame&) const = default;
};

struct DecodedFrame {
  SampleFrame frame;
  bool sync_valid = false;
};

struct RegisterFile {
  int sample_rate = 250;
  std::array<int, kChannels> channel_gain = {24, 24, 24, 24, 24, 24, 24, 24};
  std::array<bool, kChannels> channel_enabled = {true, true, true, true, true, true, true, true};
  bool bias_enabled = true;
  bool lead_off_enabled = false;
  double vref = 4.5;

  bool operator==(const RegisterFile&) const = default;
};

/// Two's-complement interpretation of a 24-bit word. Throws std::domain_error
/// for inputs that do not fit in 24 bits.
std::int32_t sign_extend_24(std::uint32_t word);

/// Decodes one 27-byte device frame (status word then eight channel words,
/// each most-significant byte first). Throws FrameError on a wrong length.
/// A missing 0xC sync nibble is reported through `sync_valid`, not thrown.
DecodedFrame decode_frame(std::span<const std::uint8_t> bytes);

/// Throws std::domain_error when the status exceeds 24 bits or a channel
/// value is outside the signed 24-bit range.
FrameBytes encode_frame(const SampleFrame& frame);

/// Status word layout: sync nibble, LOFF_STATP (8 bits), LOFF_STATN (8 bits),
/// GPIO (4 bits).
std::uint32_t make_status(std::uint8_t loff_statp, std::uint8_t loff_statn = 0,
                          std::uint8_t gpio = 0);
std::array<bool, kChannels> lead_off_bits(std::uint32_t status);

bool is_valid_gain(int gain);
bool is_valid_sample_rate(int sps);

/// Size of one LSB in microvolts: 2 * vref / gain / 2^24 (bipolar full
/// scale of +-vref/gain over a 24-bit code).
double lsb_microvolts(int gain, double vref);

/// Throws std::domain_error for a gain outside {1,2,4,6,8,12,24} or vref <= 0.
double raw_to_microvolts(std::int32_t raw, int gain, double vref);

struct Quantized {
  std::int32_t raw = 0;
  bool saturated = false;
};

/// Round-to-nearest inverse of raw_to_microvolts, clamped to the 24-bit range.
Quantized microvolts_to_raw(double microvolts, int gain, double vref);

/// Empty result means the register file is valid. Each entry names the
/// offending field and value.
std::vector<std::string> validate_config(const RegisterFile& reg);

// ---------------------------------------------------------------------------
// Register map (ADS1299 layout)

namespace reg {
inline constexpr std::uint8_t ID = 0x00;
inline constexpr std::uint8_t CONFIG1 = 0x01;
inline constexpr std::uint8_t CONFIG2 = 0x02;
inline constexpr std::uint8_t CONFIG3 = 0x03;
inline constexpr std::uint8_t LOFF = 0x04;
inline constexpr std::uint8_t CH1SET = 0x05;
inline constexpr std::uint8_t BIAS_SENSP = 0x0D;
inline constexpr std::uint8_t BIAS_SENSN = 0x0E;
inline constexpr std::uint8_t LOFF_SENSP = 0x0F;
inline constexpr std::uint8_t LOFF_SENSN = 0x10;
inline constexpr std::uint8_t LOFF_FLIP = 0x11;
inline constexpr std::uint8_t LOFF_STATP = 0x12;
inline constexpr std::uint8_t LOFF_STATN = 0x13;
inline constexpr std::uint8_t GPIO = 0x14;
inline constexpr std::uint8_t MISC1 = 0x15;
inline constexpr std::uint8_t MISC2 = 0x16;
inline constexpr std::uint8_t CONFIG4 = 0x17;
inline constexpr std::size_t kCount = 0x18;
}  // namespace reg

using RegisterImage = std::array<std::uint8_t, reg::kCount>;

/// Serializes a register file into the device register image. Values that
/// have no legal encoding map to the reserved code so the device rejects them.
RegisterImage to_register_image(const RegisterFile& regs);

/// Inverse of to_register_image. vref is not part of the image. Reserved
/// codes decode to 0, which validate_config then reports.
RegisterFile from_register_image(std::span<const std::uint8_t> image, double vref);

// ---------------------------------------------------------------------------
// Command set

enum class CommandKind { WAKEUP, STANDBY, RESET, START, STOP, RDATAC, SDATAC, RDATA, RREG, WREG };

struct Command {
  CommandKind kind = CommandKind::RESET;
  std::uint8_t address = 0;
  std::uint8_t count = 0;
  std::vector<std::uint8_t> values;

  static Command simple(CommandKind kind) { return Command{kind, 0, 0, {}}; }
  static Command rreg(std::uint8_t address, std::uint8_t count) {
    return Command{CommandKind::RREG, address, count, {}};
  }
  static Command wreg(std::uint8_t address, std::vector<std::uint8_t> values) {
    auto n = static_cast<std::uint8_t>(values.size());
    return Command{CommandKind::WREG, address, n, std::move(values)};
  }
  /// WREG covering every writable register with the image of `regs`.
  static Command write_config(const RegisterFile& regs);
};

/// Checks address range and count for RREG/WREG; throws ProtocolError.
void check_command(const Command& cmd);

std::string to_string(CommandKind kind);

}  // namespace pieeg
