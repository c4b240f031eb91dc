#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vocalcode/analytics.hpp"
#include "vocalcode/pitch.hpp"
#include "vocalcode/reliability.hpp"
#include "vocalcode/scheme.hpp"
#include "vocalcode/segmenter.hpp"

// Glue between the modules: batch F0 extraction, building analysis inputs
// from manifests and logs, and the report documents shared by the CLI and
// the HTTP service.
namespace vocalcode::pipeline {

/// Segment audio from a manifest plus a directory of `<source>.wav` files.
/// Source recordings are decoded once and cached. Thread-safe.
class ManifestAudio {
 public:
  ManifestAudio(std::vector<segmenter::Segment> manifest, std::filesystem::path audio_dir);

  const std::vector<segmenter::Segment>& manifest() const { return manifest_; }
  /// Throws kNotFound for an id outside the manifest.
  const segmenter::Segment& segment(const std::string& segment_id) const;
  audio::AudioBuffer segment_audio(const std::string& segment_id);
  std::vector<std::uint8_t> segment_wav(const std::string& segment_id);

 private:
  std::shared_ptr<const audio::AudioBuffer> recording(const std::string& source);

  std::vector<segmenter::Segment> manifest_;
  std::map<std::string, std::size_t> index_;
  std::filesystem::path audio_dir_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const audio::AudioBuffer>> cache_;
};

struct F0Row {
  std::string segment_id;
  std::optional<double> summary_f0_hz;
  double voiced_fraction = 0.0;
  std::size_t n_frames = 0;
  friend bool operator==(const F0Row&, const F0Row&) = default;
};

/// Header `segment_id,summary_f0_hz,voiced_fraction,n_frames`; the f0 cell
/// is empty when no estimate exists.
void write_f0_csv(std::ostream& out, const std::vector<F0Row>& rows);
std::vector<F0Row> read_f0_csv(std::istream& in);
std::vector<F0Row> load_f0_csv(const std::filesystem::path& path);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Runs estimate_segment_f0 on every manifest segment using `jobs` worker
/// threads. Rows come back in manifest order regardless of scheduling.
/// `progress` calls are serialized.
std::vector<F0Row> batch_f0(ManifestAudio& audio, const pitch::PitchConfig& config, unsigned jobs,
                            const ProgressFn& progress = {});

/// Consensual segments joined with their manifest durations and F0 rows.
/// Segments missing from the manifest throw kNotFound.
std::vector<analytics::SegmentObservation> observations(const scheme::LabelMap& consensus,
                                                        const std::vector<segmenter::Segment>& manifest,
                                                        const std::vector<F0Row>& f0_rows);

/// Ground-truth labels per coder, first occurrence of each segment.
struct CoderLabels {
  std::string coder_id;
  std::vector<scheme::AnnotationRecord> records;  // ground-truth pass only
  scheme::LabelMap first;
  scheme::LabelMap retest;  // second occurrence of duplicated segments
};

CoderLabels coder_labels(std::string coder_id, std::vector<scheme::AnnotationRecord> ground_truth_records);

/// Consensus over the segments both coders labeled.
scheme::LabelMap consensus(const CoderLabels& a, const CoderLabels& b);

/// Matrix, kappa (all classes and with `excluded` removed), agreement
/// breakdown and intra-rater kappas. Undefined statistics are reported as
/// {"error": ...} objects rather than thrown.
nlohmann::ordered_json reliability_report(
    const CoderLabels& a, const CoderLabels& b,
    scheme::AnnotationClass excluded = scheme::AnnotationClass::kUnassignable,
    reliability::VarianceEstimator estimator = reliability::VarianceEstimator::kLargeSample);

/// The matrix-only part of reliability_report (no coder ids, no retest).
nlohmann::ordered_json matrix_report(
    const reliability::ConfusionMatrix& matrix,
    scheme::AnnotationClass excluded = scheme::AnnotationClass::kUnassignable,
    reliability::VarianceEstimator estimator = reliability::VarianceEstimator::kLargeSample);

/// Human-readable rendering of reliability_report.
std::string render_reliability(const nlohmann::ordered_json& report);

}  // namespace vocalcode::pipeline
