#pragma once

// Binary recording files: a 64-byte little-endian header followed by raw
// 27-byte device frames exactly as read from the wire.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pieeg/dsp.hpp"
#include "pieeg/protocol.hpp"
#include "pieeg/session.hpp"

namespace pieeg {

inline constexpr std::size_t kRecordingHeaderBytes = 64;
inline constexpr std::uint8_t kRecordingVersion = 1;
/// Set while a writer holds the file open; cleared by a clean close.
inline constexpr std::uint16_t kFlagIncomplete = 0x0001;

class RecordingFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RecordingIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RecordingHeader {
  std::uint8_t version = kRecordingVersion;
  std::uint8_t channels = kChannels;
  std::uint16_t flags = 0;
  std::uint32_t sample_rate = 250;
  float vref = 4.5f;
  std::array<std::uint8_t, kChannels> gains{24, 24, 24, 24, 24, 24, 24, 24};
  std::uint64_t start_unix_micros = 0;
  ChannelLabels labels = kDefaultLabels;

  static RecordingHeader from_session(const Session& s);
  /// Register file implied by the header (all channels enabled).
  RegisterFile registers() const;
};

std::array<std::uint8_t, kRecordingHeaderBytes> encode_header(const RecordingHeader& h);
/// Throws RecordingFormatError on bad magic, unknown version or channel count.
RecordingHeader decode_header(std::span<const std::uint8_t> bytes);

/// Streams frames to disk. The header carries the incomplete flag until
/// close(), so a crash or I/O failure leaves a detectable partial file.
class RecordingWriter {
 public:
  RecordingWriter(const std::filesystem::path& path, const Session& session);
  RecordingWriter(const std::filesystem::path& path, const RecordingHeader& header);
  ~RecordingWriter();
  RecordingWriter(const RecordingWriter&) = delete;
  RecordingWriter& operator=(const RecordingWriter&) = delete;

  /// `frames` must hold whole 27-byte frames.
  void write(std::span<const std::uint8_t> frames);
  void flush();
  void close();

  std::uint64_t frames_written() const { return frames_; }
  const std::filesystem::path& path() const { return path_; }
  bool is_open() const { return out_.is_open(); }

 private:
  void check(const char* what);

  std::filesystem::path path_;
  RecordingHeader header_;
  std::ofstream out_;
  std::uint64_t frames_ = 0;
};

struct Recording {
  RecordingHeader header;
  std::vector<std::uint8_t> frames;  // whole frames only
  std::size_t dropped_tail_bytes = 0;
  std::vector<std::string> warnings;

  std::size_t frame_count() const { return frames.size() / kFrameBytes; }
  bool complete() const { return (header.flags & kFlagIncomplete) == 0; }
};

/// One-shot writer for a finished frame buffer.
void write_recording(const std::filesystem::path& path, const Session& session,
                     std::span<const std::uint8_t> frames);

/// Reads a whole file. A trailing partial frame is dropped with a warning;
/// an unclosed file is read as far as it goes, also with a warning.
Recording read_recording(const std::filesystem::path& path);
Recording parse_recording(std::span<const std::uint8_t> bytes);

/// Microvolts per channel, t0 = 0 at the first frame.
SignalBlock recording_to_block(const Recording& rec);

/// Header `t_s,ch1_uV,...,ch8_uV` then one row per frame, 6 decimals.
/// Returns the number of data rows.
std::size_t write_csv(const Recording& rec, std::ostream& out);

}  // namespace pieeg
