#pragma once

// Acquisition engine: one producer thread owns the device transport, decodes
// frames into blocks and fans them out to bounded per-subscriber queues.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pieeg/detect.hpp"
#include "pieeg/dsp.hpp"
#include "pieeg/protocol.hpp"
#include "pieeg/recording.hpp"
#include "pieeg/scenario.hpp"
#include "pieeg/session.hpp"
#include "pieeg/simulator.hpp"

namespace pieeg {

/// Byte-level device endpoint. Frames arrive exactly once, in order.
class DeviceTransport {
 public:
  virtual ~DeviceTransport() = default;
  virtual std::vector<std::uint8_t> send_command(const Command& cmd) = 0;
  /// Appends exactly n frames to `out`.
  virtual void read_frames(std::size_t n, std::vector<std::uint8_t>& out) = 0;
  virtual std::string name() const = 0;
};

class SimTransport : public DeviceTransport {
 public:
  explicit SimTransport(Scenario scenario, double vref = 4.5) : device_(std::move(scenario), vref) {}
  std::vector<std::uint8_t> send_command(const Command& cmd) override { return device_.send_command(cmd); }
  void read_frames(std::size_t n, std::vector<std::uint8_t>& out) override { device_.step_into(n, out); }
  std::string name() const override { return "sim"; }
  const SimDevice& device() const { return device_; }

 private:
  SimDevice device_;
};

/// Known names: "sim". Throws std::invalid_argument otherwise.
std::unique_ptr<DeviceTransport> make_transport(const std::string& name, const Scenario& scenario);

/// Bounded FIFO that never blocks the producer: a push into a full buffer
/// discards the oldest entry and counts it.
template <typename T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity) : slots_(capacity) {
    if (capacity == 0) throw std::invalid_argument("RingBuffer capacity must be > 0");
  }

  /// Returns false when an older item had to be dropped.
  bool push(T item) {
    bool kept_all = true;
    {
      std::lock_guard lock(mu_);
      if (closed_) return false;
      if (count_ == slots_.size()) {
        head_ = (head_ + 1) % slots_.size();
        --count_;
        ++dropped_;
        kept_all = false;
      }
      slots_[(head_ + count_) % slots_.size()] = std::move(item);
      ++count_;
    }
    cv_.notify_one();
    return kept_all;
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mu_);
    return take();
  }

  /// Waits up to `timeout`; returns nullopt on timeout or once closed and drained.
  std::optional<T> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [this] { return count_ > 0 || closed_; });
    return take();
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return count_;
  }
  std::size_t capacity() const { return slots_.size(); }
  std::uint64_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

 private:
  std::optional<T> take() {
    if (count_ == 0) return std::nullopt;
    std::optional<T> out = std::move(slots_[head_]);
    slots_[head_].reset();
    head_ = (head_ + 1) % slots_.size();
    --count_;
    return out;
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::optional<T>> slots_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

struct SampleBatch {
  std::uint64_t seq = 0;
  double fs = 250.0;
  std::array<int, kChannels> gain{};
  bool filtered = false;
  SignalBlock block;  // t0 is stream time of the first sample
};

struct StatusSnapshot {
  std::array<bool, kChannels> lead_off{};
  std::uint64_t drops = 0;
  bool recording = false;
  std::optional<std::string> recording_path;
  ChannelLabels labels = kDefaultLabels;
  double fs = 250.0;
  std::array<int, kChannels> gain{};
  bool filter = false;
  std::string session_id;
};

struct ControlReply {
  nlohmann::json message;
};

using StreamItem = std::variant<SampleBatch, StatusSnapshot, DetectionEvent, ControlReply>;

/// Wire documents for the stream protocol.
nlohmann::json to_json(const SampleBatch& b);
nlohmann::json to_json(const StatusSnapshot& s);
nlohmann::json to_json(const DetectionEvent& e);
nlohmann::json to_json(const StreamItem& item);

/// `stream` subscribers get display samples (filtered when enabled), status,
/// events and replies. `raw` subscribers get unfiltered samples only.
enum class SinkKind { stream, raw };

class Sink {
 public:
  Sink(SinkKind kind, std::size_t capacity) : kind_(kind), queue_(capacity) {}
  SinkKind kind() const { return kind_; }
  std::optional<StreamItem> pop(std::chrono::milliseconds timeout) { return queue_.pop(timeout); }
  std::optional<StreamItem> try_pop() { return queue_.try_pop(); }
  /// Direct delivery to this subscriber only (control replies).
  bool push(StreamItem item) { return queue_.push(std::move(item)); }
  std::uint64_t dropped() const { return queue_.dropped(); }
  std::size_t size() const { return queue_.size(); }
  /// True once the engine has stopped and the queue is drained.
  bool finished() const { return queue_.closed() && queue_.size() == 0; }

 private:
  friend class AcquisitionEngine;
  SinkKind kind_;
  RingBuffer<StreamItem> queue_;
};

enum class Pacing { realtime, max_speed };

struct EngineOptions {
  double block_ms = 50.0;
  Pacing pacing = Pacing::realtime;
  /// Stop after this many samples; unbounded when empty.
  std::optional<std::uint64_t> max_samples;
  /// Status cadence in stream seconds.
  double status_interval_s = 1.0;
};

using ReplyFn = std::function<void(const nlohmann::json&)>;

class AcquisitionEngine {
 public:
  AcquisitionEngine(std::unique_ptr<DeviceTransport> transport, Session session, EngineOptions options = {});
  ~AcquisitionEngine();
  AcquisitionEngine(const AcquisitionEngine&) = delete;
  AcquisitionEngine& operator=(const AcquisitionEngine&) = delete;

  /// New subscriber. Stream sinks receive a status snapshot first.
  std::shared_ptr<Sink> subscribe(std::size_t capacity = 100, SinkKind kind = SinkKind::stream);
  void unsubscribe(const std::shared_ptr<Sink>& sink);

  /// Configures the device (RESET, WREG, START, RDATAC) on the calling thread,
  /// so configuration and transport errors surface here, then starts the
  /// producer. Throws ConfigError for an invalid session.
  void start();
  /// Stops the producer, closes any open recording and ends all sinks.
  void stop();
  /// Blocks until the producer exits (max_samples reached, stop or failure).
  void wait();
  bool running() const { return running_.load(); }
  /// Diagnostic from a transport failure that ended the run.
  std::optional<std::string> error() const;

  /// Queues a control message; it is applied between blocks and `reply` is
  /// invoked from the producer thread before the next block goes out.
  void submit(nlohmann::json message, ReplyFn reply);
  /// Submits and waits for the reply. Applies inline when not running.
  nlohmann::json control(const nlohmann::json& message);

  /// Broadcasts a detection event to stream sinks.
  void publish(const DetectionEvent& event);

  Session session() const;
  StatusSnapshot status(const Sink* sink = nullptr) const;
  std::uint64_t samples_produced() const { return samples_.load(); }
  std::uint64_t blocks_produced() const { return seq_.load(); }

 private:
  struct Pending {
    nlohmann::json message;
    ReplyFn reply;
  };

  void run();
  void produce_block();
  void drain_control();
  nlohmann::json handle_control(const nlohmann::json& message);
  void reconfigure(const RegisterFile& next);
  void rebuild_filter();
  void broadcast_status();
  void finish_sinks();
  std::size_t block_samples() const;
  StatusSnapshot status_locked(const Sink* sink) const;

  std::unique_ptr<DeviceTransport> transport_;
  EngineOptions options_;

  mutable std::mutex state_mu_;  // session_, lead_off_, error_
  Session session_;
  std::array<bool, kChannels> lead_off_{};
  std::optional<std::string> error_;

  std::mutex sinks_mu_;
  std::vector<std::shared_ptr<Sink>> sinks_;

  // Attached detection workers; stream sinks stay open until they flush.
  friend class DetectionWorker;
  void retain_stream();
  void release_stream();
  std::mutex workers_mu_;
  std::condition_variable workers_cv_;
  int workers_ = 0;

  std::mutex control_mu_;
  std::deque<Pending> control_;
  bool accepting_ = false;

  // producer-owned
  std::optional<BiquadCascade> filter_;
  std::unique_ptr<RecordingWriter> writer_;
  std::vector<std::uint8_t> frame_buf_;
  double stream_time_ = 0.0;
  double next_status_ = 0.0;
  std::chrono::steady_clock::time_point pace_origin_;
  std::uint64_t pace_samples_ = 0;

  std::atomic<bool> started_{false};
  std::atomic<bool> running_{false};
  std::atomic<bool> stop_requested_{false};
  std::atomic<std::uint64_t> samples_{0};
  std::atomic<std::uint64_t> seq_{0};
  std::thread thread_;
};

/// Consumes a raw sink, runs the detectors and publishes events back to the
/// engine. Restarts the detectors when the sample rate changes. Must be
/// destroyed before the engine it is attached to.
class DetectionWorker {
 public:
  DetectionWorker(AcquisitionEngine& engine, DetectorConfig config = {}, DetectorSelection selection = {},
                  std::size_t capacity = 256);
  ~DetectionWorker();
  DetectionWorker(const DetectionWorker&) = delete;
  DetectionWorker& operator=(const DetectionWorker&) = delete;

  void start();
  /// Waits for the engine's stream to end, flushes open episodes and exits.
  void join();
  void stop();
  std::uint64_t dropped() const { return sink_->dropped(); }
  std::uint64_t samples_seen() const { return seen_.load(); }
  std::uint64_t events_published() const { return published_.load(); }
  std::optional<std::string> error() const;

 private:
  void run();
  void flush(DetectorBank& bank);

  AcquisitionEngine& engine_;
  DetectorConfig config_;
  DetectorSelection selection_;
  std::shared_ptr<Sink> sink_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> seen_{0};
  std::atomic<std::uint64_t> published_{0};
  mutable std::mutex err_mu_;
  std::optional<std::string> error_;
  std::thread thread_;
};

}  // namespace pieeg
