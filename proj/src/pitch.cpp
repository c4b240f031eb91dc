#include "vocalcode/pitch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include <boost/math/special_functions/beta.hpp>
#include <fmt/core.h>

#include "vocalcode/error.hpp"

namespace vocalcode::pitch {
namespace {

constexpr double kLogFloor = -708.0;  // ~log(DBL_MIN); stands in for log(0)

double safe_log(double p) {
  return p > 0.0 ? std::max(std::log(p), kLogFloor) : kLogFloor;
}

std::size_t bin_count(const PitchConfig& config) {
  const double bins = 12.0 * config.bins_per_semitone * std::log2(config.fmax / config.fmin);
  return static_cast<std::size_t>(std::floor(bins + 1e-9)) + 1;
}

std::size_t nearest_bin(double f0, const PitchConfig& config, std::size_t n_bins) {
  const double pos = 12.0 * config.bins_per_semitone * std::log2(f0 / config.fmin);
  const double clamped = std::clamp(std::round(pos), 0.0, static_cast<double>(n_bins - 1));
  return static_cast<std::size_t>(clamped);
}

}  // namespace

void PitchConfig::validate(int sample_rate) const {
  if (!(fmin > 0.0) || !(fmin < fmax) || !(fmax < sample_rate / 2.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("need 0 < fmin < fmax < sr/2 (fmin={}, fmax={}, sr={})", fmin, fmax, sample_rate));
  }
  if (!(frame_length_ms > 0.0) || hop_divisor <= 0 || window_divisor <= 0 || n_thresholds <= 0 ||
      bins_per_semitone <= 0 || !(beta_a > 0.0) || !(beta_b > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "pitch config parameters must be positive");
  }
  if (!(voicing_switch_prob > 0.0 && voicing_switch_prob < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "voicing_switch_prob must lie in (0, 1)");
  }
}

FrameGeometry frame_geometry(const PitchConfig& config, int sample_rate) {
  config.validate(sample_rate);
  FrameGeometry g;
  const double exact = config.frame_length_ms * sample_rate / 1000.0;
  if (config.round_frame_to_power_of_two) {
    g.frame = std::size_t{1} << static_cast<int>(std::lround(std::log2(exact)));
  } else {
    g.frame = static_cast<std::size_t>(std::llround(exact));
  }
  g.hop = std::max<std::size_t>(1, g.frame / static_cast<std::size_t>(config.hop_divisor));
  g.window = g.frame / static_cast<std::size_t>(config.window_divisor);
  g.min_lag = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(sample_rate / config.fmax)));
  g.max_lag = static_cast<std::size_t>(std::ceil(sample_rate / config.fmin));
  if (g.window + g.max_lag > g.frame || g.window < g.max_lag) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("frame of {} samples cannot hold lags up to {} (fmin too low for the frame)",
                            g.frame, g.max_lag));
  }
  return g;
}

Cmnd cmnd(std::span<const float> frame, std::size_t window, std::size_t max_lag) {
  if (max_lag == 0 || window == 0 || frame.size() < window + max_lag) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("frame of {} samples too short for window {} and max lag {}", frame.size(),
                            window, max_lag));
  }
  Cmnd out;
  out.values.assign(max_lag + 1, 1.0);
  std::vector<double> diff(max_lag + 1, 0.0);
  for (std::size_t tau = 1; tau <= max_lag; ++tau) {
    double acc = 0.0;
    const float* a = frame.data();
    const float* b = frame.data() + tau;
    for (std::size_t t = 0; t < window; ++t) {
      const double d = static_cast<double>(a[t]) - static_cast<double>(b[t]);
      acc += d * d;
    }
    diff[tau] = acc;
  }
  double running = 0.0;
  bool any_energy = false;
  for (std::size_t tau = 1; tau <= max_lag; ++tau) {
    running += diff[tau];
    if (running > 0.0) {
      out.values[tau] = diff[tau] * static_cast<double>(tau) / running;
      any_energy = true;
    }
  }
  out.degenerate = !any_energy;
  return out;
}

Cmnd cmnd(std::span<const float> frame, std::size_t max_lag) {
  if (frame.size() < 2 * max_lag) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("frame of {} samples shorter than twice the max lag {}", frame.size(), max_lag));
  }
  return cmnd(frame, frame.size() / 2, max_lag);
}

std::vector<double> threshold_prior(int n_thresholds, double a, double b) {
  std::vector<double> mass(static_cast<std::size_t>(n_thresholds));
  double prev = 0.0;
  for (int k = 1; k <= n_thresholds; ++k) {
    const double cdf = k == n_thresholds ? 1.0 : boost::math::ibeta(a, b, static_cast<double>(k) / n_thresholds);
    mass[static_cast<std::size_t>(k - 1)] = cdf - prev;
    prev = cdf;
  }
  return mass;
}

FrameCandidates frame_candidates(const Cmnd& cmnd_values, const PitchConfig& config, int sample_rate) {
  const auto& d = cmnd_values.values;
  FrameCandidates out;
  if (cmnd_values.degenerate || d.size() < 3) return out;

  const std::size_t min_lag =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(sample_rate / config.fmax)));
  const std::size_t last = d.size() - 1;  // needs a right neighbour to be a trough

  std::vector<std::size_t> troughs;
  for (std::size_t tau = std::max<std::size_t>(min_lag, 1); tau < last; ++tau) {
    if (d[tau] < d[tau - 1] && d[tau] <= d[tau + 1]) troughs.push_back(tau);
  }
  if (troughs.empty()) return out;

  const auto prior = threshold_prior(config.n_thresholds, config.beta_a, config.beta_b);
  std::vector<double> prob(troughs.size(), 0.0);
  double unclaimed = 0.0;
  for (int k = 1; k <= config.n_thresholds; ++k) {
    const double s = static_cast<double>(k) / config.n_thresholds;
    const double mass = prior[static_cast<std::size_t>(k - 1)];
    auto it = std::find_if(troughs.begin(), troughs.end(), [&](std::size_t tau) { return d[tau] < s; });
    if (it == troughs.end()) {
      unclaimed += mass;
    } else {
      prob[static_cast<std::size_t>(it - troughs.begin())] += mass;
    }
  }
  out.no_candidate_mass = unclaimed;

  for (std::size_t i = 0; i < troughs.size(); ++i) {
    if (prob[i] <= 0.0) continue;
    const std::size_t tau = troughs[i];
    const double left = d[tau - 1], mid = d[tau], right = d[tau + 1];
    const double denom = left - 2.0 * mid + right;
    double shift = denom != 0.0 ? 0.5 * (left - right) / denom : 0.0;
    if (std::abs(shift) > 1.0) shift = 0.0;
    Candidate c;
    c.lag = tau;
    c.refined_lag = static_cast<double>(tau) + shift;
    c.f0_hz = std::clamp(sample_rate / c.refined_lag, config.fmin, config.fmax);
    c.cmnd_value = mid;
    c.probability = prob[i];
    out.candidates.push_back(c);
  }
  return out;
}

std::size_t PitchTrack::voiced_frames() const {
  return static_cast<std::size_t>(
      std::count_if(frames.begin(), frames.end(), [](const PitchFrame& f) { return f.f0_hz.has_value(); }));
}

double PitchTrack::voiced_fraction() const {
  return frames.empty() ? 0.0 : static_cast<double>(voiced_frames()) / static_cast<double>(frames.size());
}

std::vector<double> pitch_bins(const PitchConfig& config) {
  const std::size_t n = bin_count(config);
  std::vector<double> bins(n);
  for (std::size_t k = 0; k < n; ++k) {
    bins[k] = config.fmin * std::exp2(static_cast<double>(k) / (12.0 * config.bins_per_semitone));
  }
  return bins;
}

PitchTrack viterbi_track(std::span<const FrameCandidates> frames, const PitchConfig& config, int sample_rate) {
  PitchTrack track;
  if (frames.empty()) return track;
  const FrameGeometry geo = frame_geometry(config, sample_rate);
  const auto centers = pitch_bins(config);
  const std::size_t n = centers.size();

  // Triangular pitch-move kernel, as wide as the largest move in one hop.
  const long max_semitones =
      std::lround(config.max_octaves_per_second * 12.0 * static_cast<double>(geo.hop) / sample_rate);
  const long half = std::max<long>(0, max_semitones * config.bins_per_semitone / 2);
  std::vector<double> log_kernel(static_cast<std::size_t>(2 * half + 1));
  for (long k = -half; k <= half; ++k) {
    log_kernel[static_cast<std::size_t>(k + half)] = std::log(static_cast<double>(half + 1 - std::abs(k)));
  }
  // Each source row is normalized over the bins it can actually reach.
  std::vector<double> log_norm(n);
  for (std::size_t b = 0; b < n; ++b) {
    double z = 0.0;
    const long lo = std::max<long>(0, static_cast<long>(b) - half);
    const long hi = std::min<long>(static_cast<long>(n) - 1, static_cast<long>(b) + half);
    for (long to = lo; to <= hi; ++to) z += static_cast<double>(half + 1 - std::abs(to - static_cast<long>(b)));
    log_norm[b] = std::log(z);
  }
  const double log_stay = std::log(1.0 - config.voicing_switch_prob);
  const double log_switch = std::log(config.voicing_switch_prob);

  const std::size_t n_frames = frames.size();
  // Observation log-likelihoods: [voiced bins..., shared unvoiced value].
  std::vector<std::vector<double>> voiced_obs(n_frames, std::vector<double>(n, 0.0));
  std::vector<double> unvoiced_obs(n_frames);
  std::vector<double> voiced_prob(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    double total = 0.0;
    for (const auto& c : frames[t].candidates) {
      voiced_obs[t][nearest_bin(c.f0_hz, config, n)] += c.probability;
      total += c.probability;
    }
    total = std::clamp(total, 0.0, 1.0);
    voiced_prob[t] = total;
    for (auto& p : voiced_obs[t]) p = safe_log(p);
    unvoiced_obs[t] = safe_log((1.0 - total) / static_cast<double>(n));
  }

  // delta[v][b]; v = 0 voiced, 1 unvoiced.
  std::vector<double> delta(2 * n), next(2 * n), reach(2 * n);
  std::vector<std::vector<std::int32_t>> back(n_frames, std::vector<std::int32_t>(2 * n, -1));
  std::vector<std::int32_t> reach_arg(2 * n);
  const double log_init = -std::log(2.0 * static_cast<double>(n));
  for (std::size_t b = 0; b < n; ++b) {
    delta[b] = log_init + voiced_obs[0][b];
    delta[n + b] = log_init + unvoiced_obs[0];
  }

  for (std::size_t t = 1; t < n_frames; ++t) {
    // Best predecessor bin within each voicing layer, pitch transition applied.
    for (std::size_t v = 0; v < 2; ++v) {
      for (std::size_t to = 0; to < n; ++to) {
        const long lo = std::max<long>(0, static_cast<long>(to) - half);
        const long hi = std::min<long>(static_cast<long>(n) - 1, static_cast<long>(to) + half);
        double best = -std::numeric_limits<double>::infinity();
        std::int32_t arg = -1;
        for (long from = lo; from <= hi; ++from) {
          const auto f = static_cast<std::size_t>(from);
          const double score = delta[v * n + f] +
                               log_kernel[static_cast<std::size_t>(static_cast<long>(to) - from + half)] -
                               log_norm[f];
          if (score > best) {
            best = score;
            arg = static_cast<std::int32_t>(v * n + f);
          }
        }
        reach[v * n + to] = best;
        reach_arg[v * n + to] = arg;
      }
    }
    for (std::size_t v = 0; v < 2; ++v) {
      for (std::size_t b = 0; b < n; ++b) {
        const double from_same = reach[v * n + b] + log_stay;
        const double from_other = reach[(1 - v) * n + b] + log_switch;
        const double obs = v == 0 ? voiced_obs[t][b] : unvoiced_obs[t];
        if (from_same >= from_other) {
          next[v * n + b] = from_same + obs;
          back[t][v * n + b] = reach_arg[v * n + b];
        } else {
          next[v * n + b] = from_other + obs;
          back[t][v * n + b] = reach_arg[(1 - v) * n + b];
        }
      }
    }
    std::swap(delta, next);
  }

  std::vector<std::size_t> path(n_frames);
  path[n_frames - 1] = static_cast<std::size_t>(std::max_element(delta.begin(), delta.end()) - delta.begin());
  for (std::size_t t = n_frames - 1; t > 0; --t) {
    path[t - 1] = static_cast<std::size_t>(back[t][path[t]]);
  }

  double sum = 0.0;
  std::size_t voiced = 0;
  track.frames.resize(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    auto& out = track.frames[t];
    out.time_ms = frames[t].time_ms;
    out.voiced_probability = voiced_prob[t];
    if (path[t] >= n) continue;
    const std::size_t bin = path[t];
    double f0 = centers[bin];
    double best_prob = 0.0;
    for (const auto& c : frames[t].candidates) {
      if (nearest_bin(c.f0_hz, config, n) == bin && c.probability > best_prob) {
        best_prob = c.probability;
        f0 = c.f0_hz;
      }
    }
    out.f0_hz = f0;
    sum += f0;
    ++voiced;
  }
  if (voiced > 0) track.summary_f0_hz = sum / static_cast<double>(voiced);
  return track;
}

PitchTrack track_pitch(const audio::AudioBuffer& segment, const PitchConfig& config) {
  const FrameGeometry geo = frame_geometry(config, segment.sample_rate());
  if (segment.size() < geo.frame) return {};
  const std::size_t n_frames = 1 + (segment.size() - geo.frame) / geo.hop;
  std::vector<FrameCandidates> per_frame(n_frames);
  auto x = segment.samples();
  for (std::size_t i = 0; i < n_frames; ++i) {
    const auto frame = x.subspan(i * geo.hop, geo.frame);
    per_frame[i] = frame_candidates(cmnd(frame, geo.window, geo.max_lag), config, segment.sample_rate());
    per_frame[i].time_ms =
        (static_cast<double>(i * geo.hop) + static_cast<double>(geo.frame) / 2.0) * 1000.0 / segment.sample_rate();
  }
  return viterbi_track(per_frame, config, segment.sample_rate());
}

std::optional<F0Estimate> estimate_segment_f0(const audio::AudioBuffer& segment, const PitchConfig& config) {
  PitchTrack track = track_pitch(segment, config);
  if (!track.summary_f0_hz) return std::nullopt;
  F0Estimate est;
  est.summary_f0_hz = *track.summary_f0_hz;
  est.voiced_fraction = track.voiced_fraction();
  est.track = std::move(track);
  return est;
}

}  // namespace vocalcode::pitch
