#include "pieeg/recording.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <iterator>
#include <ostream>

#include "pieeg/simulator.hpp"

namespace pieeg {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'P', 'I', 'E', 'G'};
constexpr std::size_t kLabelOffset = kRecordingHeaderBytes - kLabelBlockBytes;

template <typename T>
void put_le(std::uint8_t* p, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) p[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

RecordingHeader RecordingHeader::from_session(const Session& s) {
  RecordingHeader h;
  h.sample_rate = static_cast<std::uint32_t>(s.registers.sample_rate);
  h.vref = static_cast<float>(s.registers.vref);
  for (int ch = 0; ch < kChannels; ++ch) h.gains[ch] = static_cast<std::uint8_t>(s.registers.channel_gain[ch]);
  h.start_unix_micros = static_cast<std::uint64_t>(std::max<std::int64_t>(0, s.started_at_unix_micros));
  h.labels = s.channel_labels;
  return h;
}

RegisterFile RecordingHeader::registers() const {
  RegisterFile r;
  r.sample_rate = static_cast<int>(sample_rate);
  for (int ch = 0; ch < kChannels; ++ch) r.channel_gain[ch] = gains[ch];
  r.vref = vref;
  return r;
}

std::array<std::uint8_t, kRecordingHeaderBytes> encode_header(const RecordingHeader& h) {
  std::array<std::uint8_t, kRecordingHeaderBytes> b{};
  std::copy(kMagic.begin(), kMagic.end(), b.begin());
  b[4] = h.version;
  b[5] = h.channels;
  put_le<std::uint16_t>(&b[6], h.flags);
  put_le<std::uint32_t>(&b[8], h.sample_rate);
  put_le<std::uint32_t>(&b[12], std::bit_cast<std::uint32_t>(h.vref));
  std::copy(h.gains.begin(), h.gains.end(), b.begin() + 16);
  put_le<std::uint64_t>(&b[24], h.start_unix_micros);
  std::size_t pos = kLabelOffset;
  for (const auto& label : h.labels) {
    if (label.size() > 255 || pos + 1 + label.size() > kRecordingHeaderBytes) {
      throw RecordingFormatError("channel labels do not fit in the " + std::to_string(kLabelBlockBytes) +
                                 "-byte label block");
    }
    b[pos++] = static_cast<std::uint8_t>(label.size());
    std::memcpy(&b[pos], label.data(), label.size());
    pos += label.size();
  }
  return b;
}

RecordingHeader decode_header(std::span<const std::uint8_t> b) {
  if (b.size() < kRecordingHeaderBytes) throw RecordingFormatError("file shorter than the 64-byte header");
  if (!std::equal(kMagic.begin(), kMagic.end(), b.begin())) throw RecordingFormatError("bad magic (not a PIEG recording)");
  RecordingHeader h;
  h.version = b[4];
  if (h.version != kRecordingVersion) {
    throw RecordingFormatError("unsupported recording version " + std::to_string(h.version));
  }
  h.channels = b[5];
  if (h.channels != kChannels) throw RecordingFormatError("unsupported channel count " + std::to_string(h.channels));
  h.flags = get_le<std::uint16_t>(&b[6]);
  h.sample_rate = get_le<std::uint32_t>(&b[8]);
  h.vref = std::bit_cast<float>(get_le<std::uint32_t>(&b[12]));
  std::copy_n(b.begin() + 16, kChannels, h.gains.begin());
  h.start_unix_micros = get_le<std::uint64_t>(&b[24]);
  if (!is_valid_sample_rate(static_cast<int>(h.sample_rate))) {
    throw RecordingFormatError("header sample_rate " + std::to_string(h.sample_rate) + " is not a device rate");
  }
  for (int ch = 0; ch < kChannels; ++ch) {
    if (!is_valid_gain(h.gains[ch])) throw RecordingFormatError("header gain " + std::to_string(h.gains[ch]) + " is not a device gain");
  }
  if (!(h.vref > 0.0f)) throw RecordingFormatError("header vref must be > 0");
  std::size_t pos = kLabelOffset;
  for (auto& label : h.labels) {
    if (pos >= kRecordingHeaderBytes) throw RecordingFormatError("label block overruns the header");
    const std::size_t len = b[pos++];
    if (pos + len > kRecordingHeaderBytes) throw RecordingFormatError("label block overruns the header");
    label.assign(reinterpret_cast<const char*>(&b[pos]), len);
    pos += len;
  }
  return h;
}

RecordingWriter::RecordingWriter(const std::filesystem::path& path, const Session& session)
    : RecordingWriter(path, RecordingHeader::from_session(session)) {}

RecordingWriter::RecordingWriter(const std::filesystem::path& path, const RecordingHeader& header)
    : path_(path), header_(header) {
  header_.flags |= kFlagIncomplete;
  const auto bytes = encode_header(header_);
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw RecordingIoError("cannot open " + path_.string() + " for writing");
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check("writing header");
}

RecordingWriter::~RecordingWriter() {
  try {
    close();
  } catch (...) {
    // The incomplete flag stays set on disk.
  }
}

void RecordingWriter::check(const char* what) {
  if (!out_) throw RecordingIoError(std::string("I/O failure ") + what + " " + path_.string() + " (file left marked incomplete)");
}

void RecordingWriter::write(std::span<const std::uint8_t> frames) {
  if (!out_.is_open()) throw RecordingIoError("recording already closed");
  if (frames.size() % kFrameBytes != 0) throw std::invalid_argument("RecordingWriter::write: partial frame");
  out_.write(reinterpret_cast<const char*>(frames.data()), static_cast<std::streamsize>(frames.size()));
  check("writing frames to");
  frames_ += frames.size() / kFrameBytes;
}

void RecordingWriter::flush() {
  if (!out_.is_open()) return;
  out_.flush();
  check("flushing");
}

void RecordingWriter::close() {
  if (!out_.is_open()) return;
  header_.flags &= static_cast<std::uint16_t>(~kFlagIncomplete);
  std::array<std::uint8_t, 2> flags{};
  put_le<std::uint16_t>(flags.data(), header_.flags);
  out_.flush();
  out_.seekp(6);
  out_.write(reinterpret_cast<const char*>(flags.data()), 2);
  out_.flush();
  const bool ok = static_cast<bool>(out_);
  out_.close();
  if (!ok) throw RecordingIoError("I/O failure finalizing " + path_.string() + " (file left marked incomplete)");
}

void write_recording(const std::filesystem::path& path, const Session& session, std::span<const std::uint8_t> frames) {
  RecordingWriter w(path, session);
  w.write(frames);
  w.close();
}

Recording parse_recording(std::span<const std::uint8_t> bytes) {
  Recording rec;
  rec.header = decode_header(bytes);
  const auto payload = bytes.subspan(kRecordingHeaderBytes);
  const std::size_t whole = payload.size() / kFrameBytes * kFrameBytes;
  rec.frames.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(whole));
  rec.dropped_tail_bytes = payload.size() - whole;
  if (rec.dropped_tail_bytes) {
    rec.warnings.push_back("truncated recording: dropped " + std::to_string(rec.dropped_tail_bytes) +
                           " trailing bytes of an incomplete frame");
  }
  if (!rec.complete()) rec.warnings.push_back("recording was not closed cleanly");
  return rec;
}

Recording read_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RecordingIoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_recording(bytes);
}

SignalBlock recording_to_block(const Recording& rec) {
  return frames_to_block(rec.frames, rec.header.registers());
}

std::size_t write_csv(const Recording& rec, std::ostream& out) {
  const SignalBlock block = recording_to_block(rec);
  out << "t_s";
  for (int ch = 1; ch <= kChannels; ++ch) out << ",ch" << ch << "_uV";
  out << '\n';
  char buf[48];
  for (std::size_t i = 0; i < block.samples(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(i) / block.fs);
    out << buf;
    for (int ch = 0; ch < kChannels; ++ch) {
      std::snprintf(buf, sizeof buf, ",%.6f", block.data[ch][i]);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw RecordingIoError("CSV write failed");
  return block.samples();
}

}  // namespace pieeg
