#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pieeg/protocol.hpp"

namespace pieeg {

using ChannelLabels = std::array<std::string, kChannels>;

/// Default electrode sites: frontal pair for blinks, occipital pair for alpha.
inline const ChannelLabels kDefaultLabels = {"Fp1", "Fp2", "C3", "C4", "P7", "P8", "O1", "O2"};

/// Labels share a 32-byte block in the recording header (one length byte each).
inline constexpr std::size_t kLabelBlockBytes = 32;

struct Session {
  std::string id;
  RegisterFile registers;
  ChannelLabels channel_labels = kDefaultLabels;
  std::int64_t started_at_unix_micros = 0;
  bool filter_enabled = true;
  std::optional<std::string> recording_path;

  /// Fresh session: random id, current time, lead-off detection on.
  static Session create();
};

std::string make_session_id();
std::int64_t unix_micros_now();

/// Empty when valid: registers pass validate_config, labels are non-empty,
/// unique and fit the recording header.
std::vector<std::string> validate_session(const Session& s);

nlohmann::json to_json(const RegisterFile& regs);
nlohmann::json to_json(const Session& s);

/// RFC 3339 UTC timestamp with microseconds.
std::string format_timestamp(std::int64_t unix_micros);

}  // namespace pieeg
