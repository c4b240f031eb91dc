#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vocalcode/audio.hpp"

namespace vocalcode::segmenter {

struct SegmenterConfig {
  double threshold_db = 25.0;  // frames below this level are silent
  double min_pause_ms = 100.0; // silent runs longer than this split segments
  double frame_ms = 20.0;
  double hop_ms = 10.0;
  // Fixed RMS reference for the dB scale. When unset the reference is the
  // recording's quietest non-zero frame, clamped below at kMinReferenceRms.
  std::optional<double> reference_rms;

  static constexpr double kMinReferenceRms = 1e-6;

  void validate() const;
};

struct FrameLevel {
  double start_ms;
  double level_db;
};

struct Segment {
  std::string id;
  std::string source;
  double start_ms = 0.0;
  double end_ms = 0.0;

  double duration_ms() const { return end_ms - start_ms; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct Interval {
  double start_ms;
  double end_ms;
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct Segmentation {
  std::vector<Segment> segments;
  std::vector<Interval> pauses;
};

/// One level per hop. Throws kEmptyData for an empty buffer and
/// kOutOfRange when the buffer is shorter than one frame.
std::vector<FrameLevel> frame_levels(const audio::AudioBuffer& buffer, const SegmenterConfig& config);

/// Splits a recording into non-silent segments and the pauses between them.
///
/// Frame i is responsible for the hop cell [i*hop, (i+1)*hop); the last
/// frame also owns the tail up to the end of the buffer. Silent runs longer
/// than min_pause_ms, and any silent run touching either end of the
/// recording, are pauses. Everything else, including short silent gaps, is
/// segment. Segments and pauses tile the recording without overlap.
Segmentation segment_regions(const audio::AudioBuffer& buffer, const SegmenterConfig& config,
                             const std::string& source = "recording");

std::vector<Segment> segment_audio(const audio::AudioBuffer& buffer, const SegmenterConfig& config,
                                   const std::string& source = "recording");

// Manifest I/O. JSON Lines holds one {"id","source","start_ms","end_ms"}
// object per line; CSV has the same columns with a header row.
void write_manifest_jsonl(std::ostream& out, const std::vector<Segment>& segments);
void write_manifest_csv(std::ostream& out, const std::vector<Segment>& segments);
std::vector<Segment> read_manifest(const std::filesystem::path& path);
std::vector<Segment> read_manifest_jsonl(std::istream& in);

}  // namespace vocalcode::segmenter
