#include "vocalcode/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/core.h>
#include <json.hpp>

#include "vocalcode/error.hpp"

namespace vocalcode::segmenter {
namespace {

std::size_t to_samples(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

double to_ms(std::size_t samples, int sample_rate) {
  return static_cast<double>(samples) * 1000.0 / sample_rate;
}

struct FrameGrid {
  std::size_t frame = 0;
  std::size_t hop = 0;
  std::size_t count = 0;
};

FrameGrid make_grid(const audio::AudioBuffer& buffer, const SegmenterConfig& config) {
  config.validate();
  if (buffer.empty()) throw Error(ErrorCode::kEmptyData, "cannot segment an empty buffer");
  FrameGrid grid;
  grid.frame = std::max<std::size_t>(1, to_samples(config.frame_ms, buffer.sample_rate()));
  grid.hop = std::max<std::size_t>(1, to_samples(config.hop_ms, buffer.sample_rate()));
  if (buffer.size() < grid.frame) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("buffer of {} samples is shorter than one {} sample frame",
                            buffer.size(), grid.frame));
  }
  grid.count = 1 + (buffer.size() - grid.frame) / grid.hop;
  return grid;
}

std::vector<double> frame_rms(const audio::AudioBuffer& buffer, const FrameGrid& grid) {
  auto x = buffer.samples();
  std::vector<double> rms(grid.count);
  for (std::size_t i = 0; i < grid.count; ++i) {
    double energy = 0.0;
    for (std::size_t t = i * grid.hop; t < i * grid.hop + grid.frame; ++t) {
      energy += static_cast<double>(x[t]) * x[t];
    }
    rms[i] = std::sqrt(energy / static_cast<double>(grid.frame));
  }
  return rms;
}

std::vector<double> levels_from_rms(const std::vector<double>& rms, const SegmenterConfig& config) {
  double reference = std::numeric_limits<double>::infinity();
  if (config.reference_rms) {
    reference = *config.reference_rms;
  } else {
    for (double r : rms) {
      if (r > 0.0) reference = std::min(reference, r);
    }
    if (!std::isfinite(reference)) reference = SegmenterConfig::kMinReferenceRms;
    reference = std::max(reference, SegmenterConfig::kMinReferenceRms);
  }
  std::vector<double> levels(rms.size());
  for (std::size_t i = 0; i < rms.size(); ++i) {
    levels[i] = rms[i] > 0.0 ? 20.0 * std::log10(rms[i] / reference) : 0.0;
  }
  return levels;
}

}  // namespace

void SegmenterConfig::validate() const {
  if (!(min_pause_ms > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "min_pause_ms must be positive");
  }
  if (!(hop_ms > 0.0) || !(frame_ms >= hop_ms)) {
    throw Error(ErrorCode::kInvalidArgument, "need frame_ms >= hop_ms > 0");
  }
  if (reference_rms && !(*reference_rms > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "reference_rms must be positive");
  }
}

std::vector<FrameLevel> frame_levels(const audio::AudioBuffer& buffer, const SegmenterConfig& config) {
  const FrameGrid grid = make_grid(buffer, config);
  const auto levels = levels_from_rms(frame_rms(buffer, grid), config);
  std::vector<FrameLevel> out(grid.count);
  for (std::size_t i = 0; i < grid.count; ++i) {
    out[i] = {to_ms(i * grid.hop, buffer.sample_rate()), levels[i]};
  }
  return out;
}

Segmentation segment_regions(const audio::AudioBuffer& buffer, const SegmenterConfig& config,
                             const std::string& source) {
  const FrameGrid grid = make_grid(buffer, config);
  const auto levels = levels_from_rms(frame_rms(buffer, grid), config);
  const int sr = buffer.sample_rate();

  // Sample range owned by frames [first, last).
  auto cell_start = [&](std::size_t frame) { return frame * grid.hop; };
  auto cell_end = [&](std::size_t frame) {
    return frame == grid.count ? buffer.size() : frame * grid.hop;
  };

  struct Run {
    std::size_t first, last;  // frame indices, half-open
    bool silent;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < grid.count; ++i) {
    const bool silent = levels[i] < config.threshold_db;
    if (!runs.empty() && runs.back().silent == silent) {
      runs.back().last = i + 1;
    } else {
      runs.push_back({i, i + 1, silent});
    }
  }

  std::vector<bool> is_pause(runs.size(), false);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (!runs[r].silent) continue;
    const bool at_edge = r == 0 || r + 1 == runs.size();
    const double duration =
        to_ms(cell_end(runs[r].last) - cell_start(runs[r].first), sr);
    is_pause[r] = at_edge || duration > config.min_pause_ms;
  }

  Segmentation result;
  std::size_t r = 0;
  while (r < runs.size()) {
    if (is_pause[r]) {
      result.pauses.push_back(
          {to_ms(cell_start(runs[r].first), sr), to_ms(cell_end(runs[r].last), sr)});
      ++r;
      continue;
    }
    std::size_t end = r;
    while (end < runs.size() && !is_pause[end]) ++end;
    Segment seg;
    seg.source = source;
    seg.id = fmt::format("{}-{:05d}", source, result.segments.size());
    seg.start_ms = to_ms(cell_start(runs[r].first), sr);
    seg.end_ms = to_ms(cell_end(runs[end - 1].last), sr);
    result.segments.push_back(std::move(seg));
    r = end;
  }
  return result;
}

std::vector<Segment> segment_audio(const audio::AudioBuffer& buffer, const SegmenterConfig& config,
                                   const std::string& source) {
  return segment_regions(buffer, config, source).segments;
}

void write_manifest_jsonl(std::ostream& out, const std::vector<Segment>& segments) {
  for (const auto& s : segments) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["source"] = s.source;
    j["start_ms"] = s.start_ms;
    j["end_ms"] = s.end_ms;
    out << j.dump() << '\n';
  }
}

void write_manifest_csv(std::ostream& out, const std::vector<Segment>& segments) {
  out << "id,source,start_ms,end_ms\n";
  for (const auto& s : segments) {
    out << fmt::format("{},{},{},{}\n", s.id, s.source, s.start_ms, s.end_ms);
  }
}

std::vector<Segment> read_manifest_jsonl(std::istream& in) {
  std::vector<Segment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Segment s;
      s.id = j.at("id").get<std::string>();
      s.source = j.at("source").get<std::string>();
      s.start_ms = j.at("start_ms").get<double>();
      s.end_ms = j.at("end_ms").get<double>();
      if (!(s.start_ms < s.end_ms)) {
        throw Error(ErrorCode::kInvalidArgument, "segment start must precede end");
      }
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("manifest line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

namespace {

std::vector<Segment> read_manifest_csv(std::istream& in) {
  std::vector<Segment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("id,", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string id, source, start, end;
    if (!std::getline(ss, id, ',') || !std::getline(ss, source, ',') ||
        !std::getline(ss, start, ',') || !std::getline(ss, end, ',')) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("manifest line {}: expected 4 columns", line_no));
    }
    try {
      out.push_back({id, source, std::stod(start), std::stod(end)});
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("manifest line {}: bad number", line_no));
    }
  }
  return out;
}

}  // namespace

std::vector<Segment> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open manifest {}", path.string()));
  if (path.extension() == ".csv") return read_manifest_csv(in);
  return read_manifest_jsonl(in);
}

}  // namespace vocalcode::segmenter
