#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vocalcode/audio.hpp"

namespace vocalcode::pitch {

struct PitchConfig {
  double fmin = 65.41;   // Hz, C2
  double fmax = 2093.0;  // Hz, C7
  double frame_length_ms = 93.0;
  // 93 ms at 44.1 kHz is 4101 samples; snapping to 4096 keeps frames a power
  // of two. Turn off to use round(frame_length_ms * sr / 1000) verbatim.
  bool round_frame_to_power_of_two = true;
  int hop_divisor = 4;     // hop = frame / hop_divisor
  int window_divisor = 2;  // difference-function window = frame / window_divisor
  int n_thresholds = 100;
  double beta_a = 2.0;
  double beta_b = 18.0;
  int bins_per_semitone = 20;
  double voicing_switch_prob = 0.01;
  double max_octaves_per_second = 35.92;

  /// Throws kInvalidArgument unless 0 < fmin < fmax < sample_rate / 2 and
  /// the integer parameters are positive.
  void validate(int sample_rate) const;
};

/// Sample counts derived from a config for one sample rate.
struct FrameGeometry {
  std::size_t frame = 0;
  std::size_t hop = 0;
  std::size_t window = 0;
  std::size_t min_lag = 0;  // floor(sr / fmax)
  std::size_t max_lag = 0;  // ceil(sr / fmin)
};

FrameGeometry frame_geometry(const PitchConfig& config, int sample_rate);

/// Cumulative mean normalized difference d'(tau) for tau = 0..max_lag.
struct Cmnd {
  std::vector<double> values;
  bool degenerate = false;  // difference function identically zero (e.g. silence)
};

/// d(tau) = sum_{t < W} (x_t - x_{t+tau})^2 with W = window samples;
/// d'(0) = 1 and d'(tau) = d(tau) * tau / sum_{j=1..tau} d(j).
/// Throws kOutOfRange unless frame.size() >= window + max_lag.
Cmnd cmnd(std::span<const float> frame, std::size_t window, std::size_t max_lag);
/// Uses W = frame.size() / 2; needs frame.size() >= 2 * max_lag.
Cmnd cmnd(std::span<const float> frame, std::size_t max_lag);

/// Discretized Beta(a, b) prior over thresholds k/n, k = 1..n. Masses sum to 1.
std::vector<double> threshold_prior(int n_thresholds, double a, double b);

struct Candidate {
  std::size_t lag = 0;
  double refined_lag = 0.0;  // lag after parabolic interpolation of d'
  double f0_hz = 0.0;
  double cmnd_value = 0.0;
  double probability = 0.0;
};

struct FrameCandidates {
  double time_ms = 0.0;
  std::vector<Candidate> candidates;  // ascending lag
  double no_candidate_mass = 1.0;
};

/// For each threshold s of the prior, the first trough of d' (lowest lag in
/// [min_lag, max_lag)) with d' < s collects that threshold's mass. Candidate
/// probabilities plus no_candidate_mass equal the prior's total of 1.
FrameCandidates frame_candidates(const Cmnd& cmnd_values, const PitchConfig& config, int sample_rate);

struct PitchFrame {
  double time_ms = 0.0;
  std::optional<double> f0_hz;
  double voiced_probability = 0.0;
};

struct PitchTrack {
  std::vector<PitchFrame> frames;
  std::optional<double> summary_f0_hz;  // mean of voiced frames

  std::size_t voiced_frames() const;
  double voiced_fraction() const;
};

/// Log-spaced bins fmin * 2^(k / (12 * bins_per_semitone)) up to fmax.
std::vector<double> pitch_bins(const PitchConfig& config);

/// Viterbi decoding over pitch bins x {voiced, unvoiced}. Pitch moves follow
/// a triangular kernel whose half-width is the largest move allowed in one
/// hop; voicing flips cost voicing_switch_prob. A voiced frame reports the
/// interpolated f0 of the strongest candidate in its decoded bin, or the bin
/// centre when the frame has none there.
PitchTrack viterbi_track(std::span<const FrameCandidates> frames, const PitchConfig& config, int sample_rate);

struct F0Estimate {
  double summary_f0_hz = 0.0;
  double voiced_fraction = 0.0;
  PitchTrack track;
};

/// Frames the segment without padding. Returns nullopt when the segment is
/// shorter than one frame or no frame is voiced.
std::optional<F0Estimate> estimate_segment_f0(const audio::AudioBuffer& segment, const PitchConfig& config);

/// Full per-frame analysis, including frames of unvoiced segments. Empty
/// when the buffer is shorter than one frame.
PitchTrack track_pitch(const audio::AudioBuffer& segment, const PitchConfig& config);

}  // namespace vocalcode::pitch
