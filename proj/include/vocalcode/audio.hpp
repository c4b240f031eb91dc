#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vocalcode::audio {

/// Mono PCM samples normalized to [-1, 1] plus their sample rate.
///
/// Buffers are value types; once built they are never mutated in place by
/// the library, so they can be shared between threads freely.
class AudioBuffer {
 public:
  AudioBuffer() = default;
  /// Throws kInvalidArgument when sample_rate is not positive or any sample
  /// lies outside [-1, 1] (NaN included).
  AudioBuffer(std::vector<float> samples, int sample_rate);

  std::span<const float> samples() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  double duration_ms() const;

  friend bool operator==(const AudioBuffer&, const AudioBuffer&) = default;

 private:
  std::vector<float> samples_;
  int sample_rate_ = 1;
};

/// Decodes a RIFF/WAVE byte image. Accepts PCM 16/24/32-bit integer and
/// 32-bit IEEE float, any channel count (downmixed by mean). Unknown chunks
/// are skipped.
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes);
AudioBuffer load_wav(const std::filesystem::path& path);

/// PCM-16 encoding. Samples are scaled by 32768 and clamped to the int16
/// range, so +1.0 becomes 32767.
std::vector<std::uint8_t> encode_wav(const AudioBuffer& buffer);
void write_wav(const AudioBuffer& buffer, const std::filesystem::path& path);

/// Samples floor(start_ms*sr/1000) up to (excluding) floor(end_ms*sr/1000).
AudioBuffer slice(const AudioBuffer& buffer, double start_ms, double end_ms);

/// Index of the sample at time `ms`, floor(ms*sr/1000).
std::size_t sample_index(double ms, int sample_rate);

}  // namespace vocalcode::audio
