#include "pieeg/daemon.hpp"

#include <cmath>
#include <future>
#include <sstream>

namespace pieeg {

namespace {

nlohmann::json reply(const char* type, const nlohmann::json& ref, std::string detail) {
  return {{"type", type}, {"ref", ref}, {"detail", std::move(detail)}};
}

// Replies echo the client's "ref" when given, else the message type.
nlohmann::json ref_of(const nlohmann::json& msg) {
  if (!msg.is_object()) return nullptr;
  if (msg.contains("ref")) return msg["ref"];
  if (msg.contains("type")) return msg["type"];
  return nullptr;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += "; ";
    out += s;
  }
  return out;
}

std::string list(const std::array<int, kChannels>& values) {
  std::ostringstream os;
  os << '[';
  for (int ch = 0; ch < kChannels; ++ch) os << (ch ? "," : "") << values[ch];
  os << ']';
  return os.str();
}

}  // namespace

std::unique_ptr<DeviceTransport> make_transport(const std::string& name, const Scenario& scenario) {
  if (name == "sim") return std::make_unique<SimTransport>(scenario);
  throw std::invalid_argument("unknown transport '" + name + "' (available: sim)");
}

// ---------------------------------------------------------------- wire format

nlohmann::json to_json(const SampleBatch& b) {
  nlohmann::json data = nlohmann::json::array();
  const std::size_t n = b.block.samples();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t ch = 0; ch < b.block.channels(); ++ch) row.push_back(b.block.data[ch][i]);
    data.push_back(std::move(row));
  }
  return {{"type", "samples"}, {"seq", b.seq},         {"fs", b.fs},     {"gain", b.gain},
          {"unit", "uV"},      {"t0", b.block.t0},     {"data", std::move(data)}, {"filtered", b.filtered}};
}

nlohmann::json to_json(const StatusSnapshot& s) {
  nlohmann::json j = {{"type", "status"},     {"lead_off", s.lead_off}, {"drops", s.drops},
                      {"recording", s.recording}, {"labels", s.labels},  {"fs", s.fs},
                      {"gain", s.gain},       {"filter", s.filter},     {"session", s.session_id}};
  j["recording_path"] = s.recording_path ? nlohmann::json(*s.recording_path) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const DetectionEvent& e) {
  return {{"type", "event"},       {"kind", to_string(e.kind)}, {"t_start", e.t_start},
          {"t_end", e.t_end},      {"channels", e.channels},    {"score", e.score}};
}

nlohmann::json to_json(const StreamItem& item) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ControlReply>) {
          return v.message;
        } else {
          return to_json(v);
        }
      },
      item);
}

// ---------------------------------------------------------------- engine

AcquisitionEngine::AcquisitionEngine(std::unique_ptr<DeviceTransport> transport, Session session,
                                     EngineOptions options)
    : transport_(std::move(transport)), options_(options), session_(std::move(session)) {
  if (!transport_) throw std::invalid_argument("AcquisitionEngine: null transport");
  if (!(options_.block_ms > 0.0)) throw std::invalid_argument("AcquisitionEngine: block_ms must be > 0");
  if (!(options_.status_interval_s > 0.0)) throw std::invalid_argument("AcquisitionEngine: status interval must be > 0");
}

AcquisitionEngine::~AcquisitionEngine() { stop(); }

std::shared_ptr<Sink> AcquisitionEngine::subscribe(std::size_t capacity, SinkKind kind) {
  auto sink = std::make_shared<Sink>(kind, capacity);
  std::lock_guard lock(sinks_mu_);
  if (kind == SinkKind::stream) {
    std::lock_guard state(state_mu_);
    sink->queue_.push(status_locked(sink.get()));
  }
  sinks_.push_back(sink);
  return sink;
}

void AcquisitionEngine::unsubscribe(const std::shared_ptr<Sink>& sink) {
  std::lock_guard lock(sinks_mu_);
  std::erase(sinks_, sink);
  sink->queue_.close();
}

void AcquisitionEngine::start() {
  if (started_.load()) throw std::logic_error("AcquisitionEngine already started");
  {
    std::lock_guard lock(state_mu_);
    if (auto violations = validate_session(session_); !violations.empty()) throw ConfigError(std::move(violations));
  }
  transport_->send_command(Command::simple(CommandKind::RESET));
  transport_->send_command(Command::write_config(session_.registers));
  transport_->send_command(Command::simple(CommandKind::START));
  transport_->send_command(Command::simple(CommandKind::RDATAC));
  rebuild_filter();
  stream_time_ = 0.0;
  next_status_ = options_.status_interval_s;
  pace_origin_ = std::chrono::steady_clock::now();
  pace_samples_ = 0;
  {
    std::lock_guard lock(control_mu_);
    accepting_ = true;
  }
  stop_requested_ = false;
  started_ = true;
  running_ = true;
  thread_ = std::thread([this] { run(); });
}

void AcquisitionEngine::stop() {
  stop_requested_ = true;
  wait();
  finish_sinks();
}

void AcquisitionEngine::wait() {
  if (thread_.joinable()) thread_.join();
}

std::optional<std::string> AcquisitionEngine::error() const {
  std::lock_guard lock(state_mu_);
  return error_;
}

Session AcquisitionEngine::session() const {
  std::lock_guard lock(state_mu_);
  return session_;
}

StatusSnapshot AcquisitionEngine::status(const Sink* sink) const {
  std::lock_guard lock(state_mu_);
  return status_locked(sink);
}

StatusSnapshot AcquisitionEngine::status_locked(const Sink* sink) const {
  StatusSnapshot s;
  s.lead_off = lead_off_;
  s.drops = sink ? sink->dropped() : 0;
  s.recording = session_.recording_path.has_value();
  s.recording_path = session_.recording_path;
  s.labels = session_.channel_labels;
  s.fs = session_.registers.sample_rate;
  s.gain = session_.registers.channel_gain;
  s.filter = session_.filter_enabled;
  s.session_id = session_.id;
  return s;
}

std::size_t AcquisitionEngine::block_samples() const {
  const double n = options_.block_ms / 1000.0 * session_.registers.sample_rate;
  return static_cast<std::size_t>(std::max<long long>(1, std::llround(n)));
}

void AcquisitionEngine::rebuild_filter() {
  filter_ = design_bandpass(session_.registers.sample_rate, 1.0, 30.0, 4, kChannels);
}

void AcquisitionEngine::submit(nlohmann::json message, ReplyFn reply_fn) {
  {
    std::lock_guard lock(control_mu_);
    if (accepting_) {
      control_.push_back({std::move(message), std::move(reply_fn)});
      return;
    }
  }
  if (started_.load()) {
    if (reply_fn) reply_fn(reply("error", ref_of(message), "acquisition stopped"));
    return;
  }
  // Not started: apply directly, nothing else touches the state.
  auto r = handle_control(message);
  if (reply_fn) reply_fn(r);
}

nlohmann::json AcquisitionEngine::control(const nlohmann::json& message) {
  auto promise = std::make_shared<std::promise<nlohmann::json>>();
  auto future = promise->get_future();
  submit(message, [promise](const nlohmann::json& r) { promise->set_value(r); });
  return future.get();
}

void AcquisitionEngine::publish(const DetectionEvent& event) {
  std::lock_guard lock(sinks_mu_);
  for (auto& sink : sinks_) {
    if (sink->kind() == SinkKind::stream) sink->queue_.push(event);
  }
}

void AcquisitionEngine::broadcast_status() {
  std::lock_guard lock(sinks_mu_);
  std::lock_guard state(state_mu_);
  for (auto& sink : sinks_) {
    if (sink->kind() == SinkKind::stream) sink->queue_.push(status_locked(sink.get()));
  }
}

void AcquisitionEngine::retain_stream() {
  std::lock_guard lock(workers_mu_);
  ++workers_;
}

void AcquisitionEngine::release_stream() {
  {
    std::lock_guard lock(workers_mu_);
    --workers_;
  }
  workers_cv_.notify_all();
}

void AcquisitionEngine::finish_sinks() {
  {
    std::lock_guard lock(sinks_mu_);
    for (auto& sink : sinks_) {
      if (sink->kind() == SinkKind::raw) sink->queue_.close();
    }
  }
  {
    std::unique_lock lock(workers_mu_);
    workers_cv_.wait(lock, [this] { return workers_ == 0; });
  }
  std::lock_guard lock(sinks_mu_);
  for (auto& sink : sinks_) sink->queue_.close();
}

void AcquisitionEngine::run() {
  try {
    while (!stop_requested_.load()) {
      drain_control();
      if (options_.max_samples && samples_.load() >= *options_.max_samples) break;
      produce_block();
      if (options_.pacing == Pacing::realtime) {
        const auto due = pace_origin_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                            std::chrono::duration<double>(static_cast<double>(pace_samples_) /
                                                                          session_.registers.sample_rate));
        while (!stop_requested_.load() && std::chrono::steady_clock::now() < due) {
          std::this_thread::sleep_until(std::min(due, std::chrono::steady_clock::now() + std::chrono::milliseconds(20)));
        }
      }
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(state_mu_);
    error_ = std::string("acquisition stopped: ") + e.what();
  }
  if (writer_) {
    try {
      writer_->close();
    } catch (const std::exception& e) {
      std::lock_guard lock(state_mu_);
      if (!error_) error_ = e.what();
    }
    writer_.reset();
    std::lock_guard lock(state_mu_);
    session_.recording_path.reset();
  }
  std::deque<Pending> leftover;
  {
    std::lock_guard lock(control_mu_);
    accepting_ = false;
    leftover.swap(control_);
  }
  for (auto& p : leftover) {
    if (p.reply) p.reply(reply("error", ref_of(p.message), "acquisition stopped"));
  }
  running_ = false;
  finish_sinks();
}

void AcquisitionEngine::drain_control() {
  std::deque<Pending> batch;
  {
    std::lock_guard lock(control_mu_);
    batch.swap(control_);
  }
  bool changed = false;
  for (auto& p : batch) {
    nlohmann::json r = handle_control(p.message);
    changed = changed || r["type"] == "ack";
    if (p.reply) p.reply(r);
  }
  if (changed) broadcast_status();
}

void AcquisitionEngine::produce_block() {
  const RegisterFile& regs = session_.registers;
  std::size_t n = block_samples();
  if (options_.max_samples) n = static_cast<std::size_t>(std::min<std::uint64_t>(n, *options_.max_samples - samples_.load()));
  frame_buf_.clear();
  transport_->read_frames(n, frame_buf_);
  if (frame_buf_.size() != n * kFrameBytes) throw FrameError("transport returned a short read");
  if (writer_) writer_->write(frame_buf_);

  SignalBlock raw = frames_to_block(frame_buf_, regs, stream_time_);
  const std::uint32_t last_status =
      decode_frame(std::span<const std::uint8_t>(frame_buf_).subspan((n - 1) * kFrameBytes, kFrameBytes)).frame.status;
  const auto loff = regs.lead_off_enabled ? lead_off_bits(last_status) : std::array<bool, kChannels>{};
  {
    std::lock_guard lock(state_mu_);
    lead_off_ = loff;
  }

  const std::uint64_t seq = seq_.load();
  SampleBatch raw_batch{seq, static_cast<double>(regs.sample_rate), regs.channel_gain, false, std::move(raw)};
  std::optional<SampleBatch> display;
  if (session_.filter_enabled) {
    display = SampleBatch{seq, raw_batch.fs, regs.channel_gain, true, filter_block(*filter_, raw_batch.block)};
  }
  {
    std::lock_guard lock(sinks_mu_);
    for (auto& sink : sinks_) {
      const bool want_raw = sink->kind() == SinkKind::raw || !display;
      sink->queue_.push(want_raw ? raw_batch : *display);
    }
  }
  seq_.store(seq + 1);
  samples_ += n;
  pace_samples_ += n;
  stream_time_ += static_cast<double>(n) / regs.sample_rate;
  if (stream_time_ + 1e-9 >= next_status_) {
    broadcast_status();
    next_status_ += options_.status_interval_s;
  }
}

void AcquisitionEngine::reconfigure(const RegisterFile& next) {
  if (running_.load()) {
    transport_->send_command(Command::simple(CommandKind::SDATAC));
    try {
      transport_->send_command(Command::write_config(next));
    } catch (...) {
      transport_->send_command(Command::simple(CommandKind::RDATAC));
      throw;
    }
    transport_->send_command(Command::simple(CommandKind::RDATAC));
  }
  std::lock_guard lock(state_mu_);
  session_.registers = next;
}

nlohmann::json AcquisitionEngine::handle_control(const nlohmann::json& msg) {
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    return reply("error", nullptr, "message must be an object with a string 'type'");
  }
  const std::string type = msg["type"];
  const nlohmann::json ref = ref_of(msg);

  try {
    if (type == "set_gain" || type == "set_sps") {
      if (writer_) return reply("error", ref, "stop recording before changing gain or sample rate");
      RegisterFile next = session_.registers;
      if (type == "set_gain") {
        if (!msg.contains("value") || !msg["value"].is_number_integer()) {
          return reply("error", ref, "set_gain needs an integer 'value'");
        }
        const int value = msg["value"];
        const auto& channel = msg.contains("channel") ? msg["channel"] : nlohmann::json("all");
        if (channel.is_string() && channel == "all") {
          next.channel_gain.fill(value);
        } else if (channel.is_number_integer() && channel.get<int>() >= 0 && channel.get<int>() < kChannels) {
          next.channel_gain[channel.get<int>()] = value;
        } else {
          return reply("error", ref, "channel must be \"all\" or 0..7");
        }
      } else {
        if (!msg.contains("value") || !msg["value"].is_number_integer()) {
          return reply("error", ref, "set_sps needs an integer 'value'");
        }
        next.sample_rate = msg["value"];
      }
      if (auto violations = validate_config(next); !violations.empty()) return reply("error", ref, join(violations));
      const bool rate_changed = next.sample_rate != session_.registers.sample_rate;
      reconfigure(next);
      if (rate_changed) {
        rebuild_filter();
        pace_origin_ = std::chrono::steady_clock::now();
        pace_samples_ = 0;
      }
      return type == "set_gain" ? reply("ack", ref, "gain " + list(next.channel_gain))
                                : reply("ack", ref, "sample_rate " + std::to_string(next.sample_rate));
    }

    if (type == "filter") {
      if (!msg.contains("enabled") || !msg["enabled"].is_boolean()) {
        return reply("error", ref, "filter needs a boolean 'enabled'");
      }
      const bool enabled = msg["enabled"];
      if (enabled && !session_.filter_enabled) rebuild_filter();
      std::lock_guard lock(state_mu_);
      session_.filter_enabled = enabled;
      return reply("ack", ref, enabled ? "filter on" : "filter off");
    }

    if (type == "record") {
      const std::string action = msg.value("action", "");
      if (action == "start") {
        if (!msg.contains("path") || !msg["path"].is_string() || msg["path"].get<std::string>().empty()) {
          return reply("error", ref, "record start needs a non-empty 'path'");
        }
        if (writer_) return reply("error", ref, "already recording to " + writer_->path().string());
        const std::string path = msg["path"];
        Session meta = session_;
        meta.started_at_unix_micros = unix_micros_now();
        writer_ = std::make_unique<RecordingWriter>(path, meta);
        std::lock_guard lock(state_mu_);
        session_.recording_path = path;
        return reply("ack", ref, "recording to " + path);
      }
      if (action == "stop") {
        if (!writer_) return reply("error", ref, "not recording");
        const auto frames = writer_->frames_written();
        const std::string path = writer_->path().string();
        auto writer = std::move(writer_);
        {
          std::lock_guard lock(state_mu_);
          session_.recording_path.reset();
        }
        writer->close();
        auto r = reply("ack", ref, "stopped recording " + path + " (" + std::to_string(frames) + " frames)");
        r["frames"] = frames;
        return r;
      }
      return reply("error", ref, "record action must be \"start\" or \"stop\"");
    }
  } catch (const ConfigError& e) {
    return reply("error", ref, join(e.violations()));
  } catch (const std::exception& e) {
    return reply("error", ref, e.what());
  }
  return reply("error", ref, "unknown message type '" + type + "'");
}

// ---------------------------------------------------------------- detection

DetectionWorker::DetectionWorker(AcquisitionEngine& engine, DetectorConfig config, DetectorSelection selection,
                                 std::size_t capacity)
    : engine_(engine), config_(std::move(config)), selection_(selection),
      sink_(engine.subscribe(capacity, SinkKind::raw)) {}

DetectionWorker::~DetectionWorker() {
  stop();
  engine_.unsubscribe(sink_);
}

void DetectionWorker::start() {
  if (thread_.joinable()) throw std::logic_error("DetectionWorker already started");
  engine_.retain_stream();
  thread_ = std::thread([this] {
    run();
    engine_.release_stream();
  });
}

void DetectionWorker::join() {
  if (thread_.joinable()) thread_.join();
}

void DetectionWorker::stop() {
  stop_ = true;
  join();
}

std::optional<std::string> DetectionWorker::error() const {
  std::lock_guard lock(err_mu_);
  return error_;
}

void DetectionWorker::flush(DetectorBank& bank) {
  for (const auto& e : bank.finish()) {
    engine_.publish(e);
    ++published_;
  }
}

void DetectionWorker::run() {
  std::unique_ptr<DetectorBank> bank;
  double fs = 0.0;
  try {
    while (!stop_.load()) {
      auto item = sink_->pop(std::chrono::milliseconds(50));
      if (!item) {
        if (sink_->finished()) break;
        continue;
      }
      auto* batch = std::get_if<SampleBatch>(&*item);
      if (!batch) continue;
      if (!bank || batch->fs != fs) {
        if (bank) flush(*bank);
        fs = batch->fs;
        bank = std::make_unique<DetectorBank>(config_, fs, selection_);
      }
      for (const auto& e : bank->process(batch->block)) {
        engine_.publish(e);
        ++published_;
      }
      seen_ += batch->block.samples();
    }
    if (bank) flush(*bank);
  } catch (const std::exception& e) {
    std::lock_guard lock(err_mu_);
    error_ = e.what();
  }
}

}  // namespace pieeg
