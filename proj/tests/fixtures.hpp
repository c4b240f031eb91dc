#pragma once

// Shared helpers for the test binaries.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "vocalcode/annotation_log.hpp"
#include "vocalcode/audio.hpp"
#include "vocalcode/reliability.hpp"

namespace fixtures {

inline constexpr int kRate = 44100;

inline std::vector<float> sine(double freq_hz, double seconds, double amplitude = 0.5, int rate = kRate) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / rate));
  }
  return out;
}

inline vocalcode::audio::AudioBuffer sine_buffer(double freq_hz, double seconds, double amplitude = 0.5,
                                                 int rate = kRate) {
  return {sine(freq_hz, seconds, amplitude, rate), rate};
}

/// Alternating tone/silence spans in milliseconds, starting with a tone. The
/// silences carry a faint deterministic noise floor (about -80 dBFS) so the
/// quietest frame is a real background level rather than digital zero.
inline vocalcode::audio::AudioBuffer tone_pattern(const std::vector<double>& spans_ms, double freq_hz = 440.0,
                                                  int rate = 16000, double noise = 1e-4) {
  std::vector<float> out;
  std::mt19937 gen(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  bool tone = true;
  for (double ms : spans_ms) {
    const auto n = static_cast<std::size_t>(std::llround(ms * rate / 1000.0));
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(out.size()) / rate;
      double v = noise * u(gen);
      if (tone) v += 0.5 * std::sin(2.0 * std::numbers::pi * freq_hz * t);
      out.push_back(static_cast<float>(v));
    }
    tone = !tone;
  }
  return {out, rate};
}

/// Rows coder A, columns coder B, classes 1..5.
inline const std::vector<std::vector<std::uint64_t>> kReferenceCounts = {
    {2565, 2, 54, 131, 403},
    {2, 10, 0, 3, 13},
    {33, 0, 135, 14, 54},
    {41, 15, 4, 4694, 404},
    {139, 12, 12, 299, 266},
};

inline vocalcode::reliability::ConfusionMatrix reference_matrix() {
  using vocalcode::scheme::kAllClasses;
  return {{kAllClasses.begin(), kAllClasses.end()}, kReferenceCounts};
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("vocalcode-test-" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Writes one ground-truth log per coder whose paired labels cross-tabulate
/// to `counts` (rows coder_a, columns coder_b). Segment ids are seg-NNNNN.
/// Only label events are written, so the logs are for offline reports.
inline void write_matrix_logs(const std::filesystem::path& log_a, const std::filesystem::path& log_b,
                              const std::vector<std::vector<std::uint64_t>>& counts,
                              const std::string& coder_a = "A", const std::string& coder_b = "B") {
  using namespace vocalcode;
  const scheme::Pass gt{scheme::Phase::kGroundTruth, 0};
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < counts.size(); ++i)
    for (std::size_t j = 0; j < counts.size(); ++j)
      pairs.insert(pairs.end(), counts[i][j], {static_cast<int>(i) + 1, static_cast<int>(j) + 1});
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < pairs.size(); ++k) ids.push_back(fmt::format("seg-{:05d}", k));

  auto write = [&](const std::filesystem::path& path, const std::string& coder, bool first) {
    { annotation_log::LogWriter create(path); }  // file header only
    std::ofstream out(path, std::ios::app | std::ios::binary);
    const std::string session = coder + "-ground_truth-0";
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const int cls = first ? pairs[k].first : pairs[k].second;
      annotation_log::LabelEvent e{session,
                                   {fmt::format("q{:05d}", k), ids[k], coder, scheme::class_from_code(cls), 1, gt,
                                    "2024-01-01T00:00:00.000Z"}};
      out << annotation_log::serialize(e) << '\n';
    }
  };
  write(log_a, coder_a, true);
  write(log_b, coder_b, false);
}

}  // namespace fixtures
