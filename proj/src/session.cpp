#include "pieeg/session.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <random>
#include <set>

namespace pieeg {

std::string make_session_id() {
  std::random_device rd;
  std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
                      static_cast<std::uint64_t>(unix_micros_now()));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

std::int64_t unix_micros_now() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

Session Session::create() {
  Session s;
  s.id = make_session_id();
  s.registers.lead_off_enabled = true;
  s.started_at_unix_micros = unix_micros_now();
  return s;
}

std::vector<std::string> validate_session(const Session& s) {
  auto out = validate_config(s.registers);
  std::set<std::string> seen;
  std::size_t label_bytes = 0;
  for (int ch = 0; ch < kChannels; ++ch) {
    const auto& label = s.channel_labels[ch];
    if (label.empty()) out.push_back("channel_labels[" + std::to_string(ch) + "] is empty");
    if (!seen.insert(label).second) out.push_back("channel_labels[" + std::to_string(ch) + "]=" + label + " is a duplicate");
    label_bytes += 1 + label.size();
  }
  if (label_bytes > kLabelBlockBytes) {
    out.push_back("channel labels need " + std::to_string(label_bytes) + " bytes, header holds " +
                  std::to_string(kLabelBlockBytes));
  }
  return out;
}

std::string format_timestamp(std::int64_t unix_micros) {
  const std::time_t secs = static_cast<std::time_t>(unix_micros / 1000000);
  const long micros = static_cast<long>(unix_micros % 1000000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06ldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, micros);
  return buf;
}

nlohmann::json to_json(const RegisterFile& regs) {
  return {{"sample_rate", regs.sample_rate},
          {"gain", regs.channel_gain},
          {"channel_enabled", regs.channel_enabled},
          {"bias_enabled", regs.bias_enabled},
          {"lead_off_enabled", regs.lead_off_enabled},
          {"vref", regs.vref}};
}

nlohmann::json to_json(const Session& s) {
  nlohmann::json j = {{"id", s.id},
                      {"registers", to_json(s.registers)},
                      {"channel_labels", s.channel_labels},
                      {"started_at", format_timestamp(s.started_at_unix_micros)},
                      {"started_at_unix_micros", s.started_at_unix_micros},
                      {"filter_enabled", s.filter_enabled}};
  j["recording_path"] = s.recording_path ? nlohmann::json(*s.recording_path) : nlohmann::json(nullptr);
  return j;
}

}  // namespace pieeg
