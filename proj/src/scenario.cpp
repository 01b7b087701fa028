#include "pieeg/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "noise.hpp"

namespace pieeg {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDisconnectedRailUv = 5.0e6;  // beyond full scale at every gain
constexpr double kDisconnectedDriftTau = 0.5;  // seconds
constexpr int kChewCarriers = 8;

// Noise stream identifiers; each (stream, channel, row) draws independently.
constexpr std::uint64_t kStreamWhite = 1;
constexpr std::uint64_t kStreamPink = 2;
constexpr std::uint64_t kStreamChew = 3;

std::string at(const std::string& what, std::size_t i) {
  return what + "[" + std::to_string(i) + "]";
}

void check_interval(std::vector<std::string>& out, const std::string& name, double a, double b,
                    double duration) {
  if (!(a >= 0.0 && b <= duration)) out.push_back(name + " lies outside [0, duration]");
  if (!(a < b)) out.push_back(name + " has start >= end");
}

void check_channels(std::vector<std::string>& out, const std::string& name,
                    const std::vector<int>& channels) {
  if (channels.empty()) out.push_back(name + " has no channels");
  for (int ch : channels) {
    if (ch < 0 || ch >= kChannels) {
      out.push_back(name + " channel " + std::to_string(ch) + " out of range");
    }
  }
}

bool has_channel(const std::vector<int>& channels, int ch) {
  return std::find(channels.begin(), channels.end(), ch) != channels.end();
}

// ---- YAML helpers --------------------------------------------------------

void reject_unknown(const YAML::Node& node, const std::string& where,
                    std::initializer_list<const char*> known) {
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw std::runtime_error("scenario: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T required(const YAML::Node& node, const char* key, const std::string& where) {
  if (!node[key]) throw std::runtime_error("scenario: missing '" + std::string(key) + "' in " + where);
  try {
    return node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw std::runtime_error("scenario: bad value for '" + std::string(key) + "' in " + where);
  }
}

template <typename T>
T optional(const YAML::Node& node, const char* key, T fallback, const std::string& where) {
  return node[key] ? required<T>(node, key, where) : fallback;
}

bool parse_contact(const YAML::Node& node, const std::string& where) {
  const auto v = node.as<std::string>();
  if (v == "connected" || v == "1" || v == "true") return true;
  if (v == "disconnected" || v == "0" || v == "false") return false;
  throw std::runtime_error("scenario: bad contact state '" + v + "' in " + where);
}

}  // namespace

Scenario Scenario::silent(double duration) {
  Scenario s;
  s.duration = duration;
  s.background_noise_uv_rms = 0.0;
  s.environment_noise_uv_rms = 0.0;
  return s;
}

std::vector<std::string> validate_scenario(const Scenario& s) {
  std::vector<std::string> out;
  if (!(s.duration > 0.0)) out.push_back("duration must be > 0");
  if (!(s.background_noise_uv_rms >= 0.0)) out.push_back("background_noise_uv_rms must be >= 0");
  if (!(s.environment_noise_uv_rms >= 0.0)) out.push_back("environment_noise_uv_rms must be >= 0");
  if (!(s.mains_amplitude_uv >= 0.0)) out.push_back("mains amplitude must be >= 0");
  for (std::size_t i = 0; i < s.alpha_intervals.size(); ++i) {
    const auto& a = s.alpha_intervals[i];
    const auto name = at("alpha", i);
    check_interval(out, name, a.t_start, a.t_end, s.duration);
    check_channels(out, name, a.channels);
    if (!(a.amplitude_uv >= 0.0)) out.push_back(name + " amplitude must be >= 0");
    if (!(a.frequency_hz >= 8.0 && a.frequency_hz <= 12.0)) {
      out.push_back(name + " frequency must be within [8, 12] Hz");
    }
  }
  for (std::size_t i = 0; i < s.blink_events.size(); ++i) {
    const auto& b = s.blink_events[i];
    const auto name = at("blink", i);
    if (!(b.t_center >= 0.0 && b.t_center <= s.duration)) {
      out.push_back(name + " centre lies outside [0, duration]");
    }
    if (!(b.duration_s > 0.0)) out.push_back(name + " duration must be > 0");
    if (!(b.amplitude_uv >= 0.0)) out.push_back(name + " amplitude must be >= 0");
    check_channels(out, name, b.channels);
  }
  for (std::size_t i = 0; i < s.chew_episodes.size(); ++i) {
    const auto& c = s.chew_episodes[i];
    const auto name = at("chew", i);
    check_interval(out, name, c.t_start, c.t_end, s.duration);
    check_channels(out, name, c.channels);
    if (!(c.burst_amplitude_uv >= 0.0)) out.push_back(name + " amplitude must be >= 0");
    if (!(c.burst_rate_hz >= 0.5 && c.burst_rate_hz <= 2.5)) {
      out.push_back(name + " burst rate must be within [0.5, 2.5] Hz");
    }
  }
  for (std::size_t i = 0; i < s.contact_changes.size(); ++i) {
    const auto& c = s.contact_changes[i];
    if (c.channel < 0 || c.channel >= kChannels) out.push_back(at("contact_change", i) + " channel out of range");
    if (!(c.time >= 0.0 && c.time <= s.duration)) {
      out.push_back(at("contact_change", i) + " lies outside [0, duration]");
    }
  }
  return out;
}

Scenario parse_scenario(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw std::runtime_error(std::string("scenario: YAML parse error: ") + e.what());
  }
  if (!root.IsMap()) throw std::runtime_error("scenario: top level must be a mapping");
  reject_unknown(root, "scenario",
                 {"duration", "seed", "noise", "mains", "contact", "alpha", "blinks", "chew",
                  "contact_changes"});

  Scenario s;
  s.duration = required<double>(root, "duration", "scenario");
  s.seed = optional<std::uint64_t>(root, "seed", s.seed, "scenario");
  if (const auto noise = root["noise"]) {
    reject_unknown(noise, "noise", {"background_uv_rms", "environment_uv_rms"});
    s.background_noise_uv_rms =
        optional<double>(noise, "background_uv_rms", s.background_noise_uv_rms, "noise");
    s.environment_noise_uv_rms =
        optional<double>(noise, "environment_uv_rms", s.environment_noise_uv_rms, "noise");
  }
  if (const auto mains = root["mains"]) {
    if (mains.IsScalar()) {
      if (mains.as<std::string>() != "off") throw std::runtime_error("scenario: mains must be 'off' or a mapping");
    } else {
      reject_unknown(mains, "mains", {"frequency", "amplitude_uv"});
      const int f = required<int>(mains, "frequency", "mains");
      if (f == 50) s.mains = MainsHum::hz50;
      else if (f == 60) s.mains = MainsHum::hz60;
      else throw std::runtime_error("scenario: mains frequency must be 50 or 60");
      s.mains_amplitude_uv = required<double>(mains, "amplitude_uv", "mains");
    }
  }
  if (const auto contact = root["contact"]) {
    if (!contact.IsSequence() || contact.size() != kChannels) {
      throw std::runtime_error("scenario: contact must list 8 entries");
    }
    for (int ch = 0; ch < kChannels; ++ch) s.electrode_connected[ch] = parse_contact(contact[ch], "contact");
  }
  std::size_t i = 0;
  for (const auto& n : root["alpha"]) {
    const auto where = at("alpha", i++);
    reject_unknown(n, where, {"start", "end", "amplitude_uv", "frequency_hz", "channels"});
    s.alpha_intervals.push_back({required<double>(n, "start", where), required<double>(n, "end", where),
                                 required<double>(n, "amplitude_uv", where),
                                 optional<double>(n, "frequency_hz", 10.0, where),
                                 required<std::vector<int>>(n, "channels", where)});
  }
  i = 0;
  for (const auto& n : root["blinks"]) {
    const auto where = at("blinks", i++);
    reject_unknown(n, where, {"center", "duration", "amplitude_uv", "channels"});
    s.blink_events.push_back({required<double>(n, "center", where),
                              optional<double>(n, "duration", 0.3, where),
                              required<double>(n, "amplitude_uv", where),
                              optional<std::vector<int>>(n, "channels", {0, 1}, where)});
  }
  i = 0;
  for (const auto& n : root["chew"]) {
    const auto where = at("chew", i++);
    reject_unknown(n, where, {"start", "end", "rate_hz", "amplitude_uv", "channels"});
    s.chew_episodes.push_back({required<double>(n, "start", where), required<double>(n, "end", where),
                               optional<double>(n, "rate_hz", 1.5, where),
                               required<double>(n, "amplitude_uv", where),
                               required<std::vector<int>>(n, "channels", where)});
  }
  i = 0;
  for (const auto& n : root["contact_changes"]) {
    const auto where = at("contact_changes", i++);
    reject_unknown(n, where, {"time", "channel", "state"});
    s.contact_changes.push_back({required<double>(n, "time", where), required<int>(n, "channel", where),
                                 parse_contact(n["state"], where)});
  }

  if (auto violations = validate_scenario(s); !violations.empty()) {
    std::string msg = "scenario: invalid";
    for (const auto& v : violations) msg += "; " + v;
    throw std::runtime_error(msg);
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::string format_scenario(const Scenario& s) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "duration" << YAML::Value << s.duration;
  out << YAML::Key << "seed" << YAML::Value << s.seed;
  out << YAML::Key << "noise" << YAML::Value << YAML::Flow << YAML::BeginMap
      << YAML::Key << "background_uv_rms" << YAML::Value << s.background_noise_uv_rms
      << YAML::Key << "environment_uv_rms" << YAML::Value << s.environment_noise_uv_rms
      << YAML::EndMap;
  if (s.mains == MainsHum::off) {
    out << YAML::Key << "mains" << YAML::Value << "off";
  } else {
    out << YAML::Key << "mains" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key
        << "frequency" << YAML::Value << (s.mains == MainsHum::hz50 ? 50 : 60) << YAML::Key
        << "amplitude_uv" << YAML::Value << s.mains_amplitude_uv << YAML::EndMap;
  }
  out << YAML::Key << "contact" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (bool c : s.electrode_connected) out << (c ? "connected" : "disconnected");
  out << YAML::EndSeq;
  auto channels = [&](const std::vector<int>& chs) {
    out << YAML::Key << "channels" << YAML::Value << YAML::Flow << chs;
  };
  out << YAML::Key << "alpha" << YAML::Value << YAML::BeginSeq;
  for (const auto& a : s.alpha_intervals) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "start" << YAML::Value << a.t_start
        << YAML::Key << "end" << YAML::Value << a.t_end << YAML::Key << "amplitude_uv"
        << YAML::Value << a.amplitude_uv << YAML::Key << "frequency_hz" << YAML::Value
        << a.frequency_hz;
    channels(a.channels);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "blinks" << YAML::Value << YAML::BeginSeq;
  for (const auto& b : s.blink_events) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "center" << YAML::Value << b.t_center
        << YAML::Key << "duration" << YAML::Value << b.duration_s << YAML::Key << "amplitude_uv"
        << YAML::Value << b.amplitude_uv;
    channels(b.channels);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "chew" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : s.chew_episodes) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "start" << YAML::Value << c.t_start
        << YAML::Key << "end" << YAML::Value << c.t_end << YAML::Key << "rate_hz" << YAML::Value
        << c.burst_rate_hz << YAML::Key << "amplitude_uv" << YAML::Value << c.burst_amplitude_uv;
    channels(c.channels);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "contact_changes" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : s.contact_changes) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "time" << YAML::Value << c.time
        << YAML::Key << "channel" << YAML::Value << c.channel << YAML::Key << "state"
        << YAML::Value << (c.connected ? "connected" : "disconnected") << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

bool contact_at(const Scenario& s, int channel, double t) {
  bool connected = s.electrode_connected[channel];
  double latest = -1.0;
  for (const auto& c : s.contact_changes) {
    if (c.channel == channel && c.time <= t && c.time >= latest) {
      connected = c.connected;
      latest = c.time;
    }
  }
  return connected;
}

namespace {

// Time at which the current disconnection of `channel` began (0 when the
// electrode starts out disconnected).
double disconnected_since(const Scenario& s, int channel, double t) {
  double since = 0.0;
  bool connected = s.electrode_connected[channel];
  std::vector<ContactChange> changes;
  for (const auto& c : s.contact_changes) {
    if (c.channel == channel && c.time <= t) changes.push_back(c);
  }
  std::stable_sort(changes.begin(), changes.end(),
                   [](const auto& a, const auto& b) { return a.time < b.time; });
  for (const auto& c : changes) {
    if (connected && !c.connected) since = c.time;
    connected = c.connected;
  }
  return since;
}

}  // namespace

SignalGenerator::SignalGenerator(const Scenario& scenario, double fs)
    : scenario_(scenario), fs_(fs) {
  if (!(fs > 0.0)) throw std::domain_error("SignalGenerator: fs must be > 0");
  // Voss rows: row r holds its value for 2^r samples; the slowest row holds
  // for at most half a second.
  rows_ = std::max(1, static_cast<int>(std::floor(std::log2(fs / 2.0))) + 1);
  pink_scale_ = scenario_.background_noise_uv_rms / std::sqrt(static_cast<double>(rows_));
  row_offsets_.resize(static_cast<std::size_t>(rows_));
  for (int r = 0; r < rows_; ++r) {
    const std::uint64_t span = std::uint64_t{1} << r;
    row_offsets_[r] = noise::hash(scenario_.seed, kStreamPink, 0xFFFF, static_cast<std::uint64_t>(r)) % span;
  }
  cache_.assign(static_cast<std::size_t>(rows_) * kChannels, RowCache{});

  for (std::size_t e = 0; e < scenario_.chew_episodes.size(); ++e) {
    std::array<double, 8> freqs{};
    for (int k = 0; k < kChewCarriers; ++k) {
      freqs[k] = 15.0 + 15.0 * noise::uniform(scenario_.seed, kStreamChew, e, static_cast<std::uint64_t>(k));
    }
    chew_freqs_.push_back(freqs);
    for (int ch = 0; ch < kChannels; ++ch) {
      std::array<double, 8> phases{};
      for (int k = 0; k < kChewCarriers; ++k) {
        phases[k] = kTwoPi * noise::uniform(scenario_.seed, kStreamChew, 1000 + e * kChannels + ch,
                                            static_cast<std::uint64_t>(k));
      }
      chew_phases_.push_back(phases);
    }
  }
}

double SignalGenerator::pink(std::int64_t n, int channel) const {
  if (pink_scale_ == 0.0) return 0.0;
  double sum = 0.0;
  const auto un = static_cast<std::uint64_t>(n);
  for (int r = 0; r < rows_; ++r) {
    const std::uint64_t key = (un + row_offsets_[r]) >> r;
    sum += noise::gaussian(scenario_.seed, kStreamPink, static_cast<std::uint64_t>(channel * 64 + r), key);
  }
  return pink_scale_ * sum;
}

double SignalGenerator::white(std::int64_t n, int channel) const {
  if (scenario_.environment_noise_uv_rms == 0.0) return 0.0;
  return scenario_.environment_noise_uv_rms *
         noise::gaussian(scenario_.seed, kStreamWhite, static_cast<std::uint64_t>(channel),
                         static_cast<std::uint64_t>(n));
}

double SignalGenerator::deterministic(double t, int channel) const {
  const Scenario& s = scenario_;
  if (!contact_at(s, channel, t)) {
    const double since = disconnected_since(s, channel, t);
    return kDisconnectedRailUv * (1.0 - std::exp(-(t - since) / kDisconnectedDriftTau));
  }
  double v = 0.0;
  if (s.mains != MainsHum::off) {
    const double f = s.mains == MainsHum::hz50 ? 50.0 : 60.0;
    v += s.mains_amplitude_uv * std::sin(kTwoPi * f * t);
  }
  for (const auto& a : s.alpha_intervals) {
    if (t >= a.t_start && t <= a.t_end && has_channel(a.channels, channel)) {
      v += a.amplitude_uv * std::sin(kTwoPi * a.frequency_hz * (t - a.t_start));
    }
  }
  for (const auto& b : s.blink_events) {
    const double dt = t - b.t_center;
    if (std::abs(dt) <= 0.5 * b.duration_s && has_channel(b.channels, channel)) {
      v += b.amplitude_uv * 0.5 * (1.0 + std::cos(kTwoPi * dt / b.duration_s));
    }
  }
  for (std::size_t e = 0; e < s.chew_episodes.size(); ++e) {
    const auto& c = s.chew_episodes[e];
    if (t < c.t_start || t > c.t_end || !has_channel(c.channels, channel)) continue;
    const double tau = t - c.t_start;
    const double phase = tau * c.burst_rate_hz - std::floor(tau * c.burst_rate_hz);
    if (phase >= 0.5) continue;  // silent half of each chewing cycle
    const double env = std::pow(std::sin(kTwoPi * phase), 2);
    double carrier = 0.0;
    const auto& freqs = chew_freqs_[e];
    const auto& phases = chew_phases_[e * kChannels + static_cast<std::size_t>(channel)];
    for (int k = 0; k < kChewCarriers; ++k) carrier += std::sin(kTwoPi * freqs[k] * tau + phases[k]);
    // Eight unit sinusoids have RMS 2; scale so the burst peak has RMS amplitude/sqrt(2).
    v += c.burst_amplitude_uv * env * carrier / (2.0 * std::numbers::sqrt2);
  }
  return v;
}

double SignalGenerator::sample(std::int64_t n, double t, int channel) const {
  if (!contact_at(scenario_, channel, t)) return deterministic(t, channel);
  return deterministic(t, channel) + pink(n, channel) + white(n, channel);
}

std::array<double, kChannels> SignalGenerator::next_frame(std::int64_t n, double t) {
  std::array<double, kChannels> out{};
  const auto un = static_cast<std::uint64_t>(n);
  for (int ch = 0; ch < kChannels; ++ch) {
    if (!contact_at(scenario_, ch, t)) {
      out[ch] = deterministic(t, ch);
      continue;
    }
    double p = 0.0;
    if (pink_scale_ != 0.0) {
      for (int r = 0; r < rows_; ++r) {
        auto& slot = cache_[static_cast<std::size_t>(ch * rows_ + r)];
        const auto key = static_cast<std::int64_t>((un + row_offsets_[r]) >> r);
        if (slot.key != key) {
          slot.key = key;
          slot.value = noise::gaussian(scenario_.seed, kStreamPink,
                                       static_cast<std::uint64_t>(ch * 64 + r),
                                       static_cast<std::uint64_t>(key));
        }
        p += slot.value;
      }
      p *= pink_scale_;
    }
    out[ch] = deterministic(t, ch) + p + white(n, ch);
  }
  return out;
}

double synth_sample(const Scenario& scenario, double t, int channel, double noise_clock_hz) {
  if (!(t >= 0.0 && t <= scenario.duration)) {
    throw std::domain_error("synth_sample: t outside [0, duration]");
  }
  if (channel < 0 || channel >= kChannels) throw std::domain_error("synth_sample: bad channel");
  const SignalGenerator gen(scenario, noise_clock_hz);
  const auto n = static_cast<std::int64_t>(std::llround(t * noise_clock_hz));
  return gen.sample(n, t, channel);
}

}  // namespace pieeg
