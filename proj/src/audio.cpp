#include "vocalcode/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/core.h>

#include "vocalcode/error.hpp"

namespace vocalcode::audio {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 |
         std::uint32_t(b[at + 2]) << 16 | std::uint32_t(b[at + 3]) << 24;
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

struct FormatChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

double decode_sample(const std::uint8_t* p, const FormatChunk& fmt) {
  if (fmt.format == kFormatFloat) {
    float f;
    std::uint32_t raw = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                        std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    f = std::bit_cast<float>(raw);
    if (std::isnan(f)) return 0.0;
    return std::clamp(static_cast<double>(f), -1.0, 1.0);
  }
  switch (fmt.bits) {
    case 16: {
      auto v = static_cast<std::int16_t>(p[0] | p[1] << 8);
      return v / 32768.0;
    }
    case 24: {
      std::int32_t v = p[0] | p[1] << 8 | p[2] << 16;
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    case 32: {
      auto v = static_cast<std::int32_t>(std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                         std::uint32_t(p[2]) << 16 |
                                         std::uint32_t(p[3]) << 24);
      return v / 2147483648.0;
    }
  }
  return 0.0;
}

}  // namespace

AudioBuffer::AudioBuffer(std::vector<float> samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("sample rate must be positive, got {}", sample_rate_));
  }
  for (float s : samples_) {
    if (!(s >= -1.0f && s <= 1.0f)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("sample {} outside [-1, 1]", s));
    }
  }
}

double AudioBuffer::duration_ms() const {
  return static_cast<double>(samples_.size()) * 1000.0 / sample_rate_;
}

std::size_t sample_index(double ms, int sample_rate) {
  // The epsilon absorbs representation error in values such as 0.29 s * 44100.
  const double exact = ms * sample_rate / 1000.0;
  return static_cast<std::size_t>(std::floor(exact + 1e-9 * std::max(1.0, exact)));
}

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    throw Error(ErrorCode::kUnsupportedFormat, "not a RIFF/WAVE file");
  }
  FormatChunk fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    // Streaming writers sometimes leave the data size as 0xFFFFFFFF; clamp to file end.
    const std::size_t available = std::min<std::size_t>(size, bytes.size() - body);
    if (tag_is(bytes, pos, "fmt ")) {
      if (available < 16) throw Error(ErrorCode::kUnsupportedFormat, "truncated fmt chunk");
      fmt.format = read_u16(bytes, body);
      fmt.channels = read_u16(bytes, body + 2);
      fmt.sample_rate = read_u32(bytes, body + 4);
      fmt.bits = read_u16(bytes, body + 14);
      if (fmt.format == kFormatExtensible) {
        if (available < 26) throw Error(ErrorCode::kUnsupportedFormat, "truncated extensible fmt");
        fmt.format = read_u16(bytes, body + 24);
      }
      have_fmt = true;
    } else if (tag_is(bytes, pos, "data")) {
      data = bytes.subspan(body, available);
      have_data = true;
    }
    pos = body + available + (available & 1);
  }
  if (!have_fmt || !have_data) {
    throw Error(ErrorCode::kUnsupportedFormat, "missing fmt or data chunk");
  }
  const bool pcm_ok = fmt.format == kFormatPcm && (fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32);
  const bool float_ok = fmt.format == kFormatFloat && fmt.bits == 32;
  if (!pcm_ok && !float_ok) {
    throw Error(ErrorCode::kUnsupportedFormat,
                fmt::format("unsupported codec: format tag {} with {} bits", fmt.format, fmt.bits));
  }
  if (fmt.channels == 0 || fmt.sample_rate == 0) {
    throw Error(ErrorCode::kUnsupportedFormat, "zero channels or sample rate");
  }
  const std::size_t bytes_per_sample = fmt.bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) throw Error(ErrorCode::kEmptyData, "WAV data chunk holds no samples");

  std::vector<float> mono(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double sum = 0.0;
    const std::uint8_t* frame = data.data() + f * frame_bytes;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      sum += decode_sample(frame + c * bytes_per_sample, fmt);
    }
    mono[f] = static_cast<float>(sum / fmt.channels);
  }
  return AudioBuffer(std::move(mono), static_cast<int>(fmt.sample_rate));
}

AudioBuffer load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIo, fmt::format("read failed: {}", path.string()));
  return decode_wav(bytes);
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& buffer) {
  const auto n = static_cast<std::uint32_t>(buffer.size());
  const std::uint32_t data_bytes = n * 2;
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate()));
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate()) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (float s : buffer.samples()) {
    const double scaled = std::round(static_cast<double>(s) * 32768.0);
    const auto q = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

void write_wav(const AudioBuffer& buffer, const std::filesystem::path& path) {
  const auto bytes = encode_wav(buffer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot open {} for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write failed: {}", path.string()));
}

AudioBuffer slice(const AudioBuffer& buffer, double start_ms, double end_ms) {
  const double duration = buffer.duration_ms();
  if (!(start_ms >= 0.0) || !(start_ms < end_ms) || end_ms > duration + 1e-9) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("slice [{}, {}) ms outside buffer of {} ms", start_ms, end_ms, duration));
  }
  const std::size_t first = sample_index(start_ms, buffer.sample_rate());
  const std::size_t last = std::min(sample_index(end_ms, buffer.sample_rate()), buffer.size());
  auto s = buffer.samples();
  return AudioBuffer(std::vector<float>(s.begin() + static_cast<std::ptrdiff_t>(first),
                                        s.begin() + static_cast<std::ptrdiff_t>(last)),
                     buffer.sample_rate());
}

}  // namespace vocalcode::audio
