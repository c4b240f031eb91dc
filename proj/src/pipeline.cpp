#include "vocalcode/pipeline.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/core.h>

#include "vocalcode/error.hpp"
#include "vocalcode/reliability.hpp"

namespace vocalcode::pipeline {

using scheme::AnnotationClass;

ManifestAudio::ManifestAudio(std::vector<segmenter::Segment> manifest, std::filesystem::path audio_dir)
    : manifest_(std::move(manifest)), audio_dir_(std::move(audio_dir)) {
  for (std::size_t i = 0; i < manifest_.size(); ++i) {
    if (!index_.emplace(manifest_[i].id, i).second) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("duplicate segment id '{}' in manifest", manifest_[i].id));
    }
  }
}

const segmenter::Segment& ManifestAudio::segment(const std::string& segment_id) const {
  auto it = index_.find(segment_id);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, fmt::format("segment '{}' not in manifest", segment_id));
  return manifest_[it->second];
}

std::shared_ptr<const audio::AudioBuffer> ManifestAudio::recording(const std::string& source) {
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(source);
    if (it != cache_.end()) return it->second;
  }
  // Decode outside the lock; a racing loader just wastes one decode.
  auto buf = std::make_shared<const audio::AudioBuffer>(audio::load_wav(audio_dir_ / (source + ".wav")));
  std::lock_guard lock(mutex_);
  return cache_.emplace(source, std::move(buf)).first->second;
}

audio::AudioBuffer ManifestAudio::segment_audio(const std::string& segment_id) {
  const auto& seg = segment(segment_id);
  auto rec = recording(seg.source);
  return audio::slice(*rec, seg.start_ms, std::min(seg.end_ms, rec->duration_ms()));
}

std::vector<std::uint8_t> ManifestAudio::segment_wav(const std::string& segment_id) {
  return audio::encode_wav(segment_audio(segment_id));
}

void write_f0_csv(std::ostream& out, const std::vector<F0Row>& rows) {
  out << "segment_id,summary_f0_hz,voiced_fraction,n_frames\n";
  for (const auto& r : rows) {
    out << r.segment_id << ',';
    if (r.summary_f0_hz) out << fmt::format("{:.6f}", *r.summary_f0_hz);
    out << fmt::format(",{:.6f},{}\n", r.voiced_fraction, r.n_frames);
  }
}

std::vector<F0Row> read_f0_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("segment_id,summary_f0_hz", 0) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "f0 CSV must start with the segment_id,summary_f0_hz,... header");
  }
  std::vector<F0Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 4) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("f0 CSV line {}: expected 4 columns", line_no));
    }
    try {
      F0Row r;
      r.segment_id = cells[0];
      if (!cells[1].empty()) r.summary_f0_hz = std::stod(cells[1]);
      r.voiced_fraction = std::stod(cells[2]);
      r.n_frames = std::stoul(cells[3]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("f0 CSV line {}: bad number", line_no));
    }
  }
  return rows;
}

std::vector<F0Row> load_f0_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  return read_f0_csv(in);
}

std::vector<F0Row> batch_f0(ManifestAudio& audio, const pitch::PitchConfig& config, unsigned jobs,
                            const ProgressFn& progress) {
  const auto& manifest = audio.manifest();
  std::vector<F0Row> rows(manifest.size());
  std::vector<std::exception_ptr> errors(manifest.size());
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex progress_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < manifest.size(); i = next++) {
      try {
        const auto buf = audio.segment_audio(manifest[i].id);
        const auto track = pitch::track_pitch(buf, config);
        F0Row& r = rows[i];
        r.segment_id = manifest[i].id;
        r.summary_f0_hz = track.summary_f0_hz;
        r.voiced_fraction = track.voiced_fraction();
        r.n_frames = track.frames.size();
      } catch (...) {
        errors[i] = std::current_exception();
      }
      std::lock_guard lock(progress_mutex);
      ++done;
      if (progress) progress(done, manifest.size());
    }
  };

  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(manifest.size())));
  std::vector<std::thread> threads;
  for (unsigned t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::vector<analytics::SegmentObservation> observations(const scheme::LabelMap& consensus,
                                                        const std::vector<segmenter::Segment>& manifest,
                                                        const std::vector<F0Row>& f0_rows) {
  std::map<std::string, const segmenter::Segment*> by_id;
  for (const auto& s : manifest) by_id.emplace(s.id, &s);
  std::map<std::string, std::optional<double>> f0;
  for (const auto& r : f0_rows) f0.emplace(r.segment_id, r.summary_f0_hz);

  std::vector<analytics::SegmentObservation> out;
  out.reserve(consensus.size());
  for (const auto& [id, cls] : consensus) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::kNotFound, fmt::format("labeled segment '{}' not in manifest", id));
    analytics::SegmentObservation o;
    o.segment_id = id;
    o.recording = it->second->source;
    o.cls = cls;
    o.duration_s = it->second->duration_ms() / 1000.0;
    if (auto f = f0.find(id); f != f0.end()) o.f0_hz = f->second;
    out.push_back(std::move(o));
  }
  return out;
}

CoderLabels coder_labels(std::string coder_id, std::vector<scheme::AnnotationRecord> ground_truth_records) {
  CoderLabels c;
  c.coder_id = std::move(coder_id);
  c.records = std::move(ground_truth_records);
  c.first = scheme::labels_by_segment(c.records, scheme::Occurrence::kFirst);
  c.retest = scheme::labels_by_segment(c.records, scheme::Occurrence::kSecond);
  return c;
}

scheme::LabelMap consensus(const CoderLabels& a, const CoderLabels& b) {
  scheme::LabelMap shared_a, shared_b;
  for (const auto& [id, cls] : a.first) {
    auto it = b.first.find(id);
    if (it == b.first.end()) continue;
    shared_a.emplace(id, cls);
    shared_b.emplace(id, it->second);
  }
  return scheme::consensus_filter(shared_a, shared_b);
}

namespace {

template <class F>
nlohmann::ordered_json guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return {{"error", std::string(to_string(e.code()))}, {"message", e.what()}};
  }
}

nlohmann::ordered_json retest_json(const CoderLabels& c) {
  return guarded([&] {
    auto j = reliability::to_json(reliability::intra_rater_kappa(c.first, c.retest));
    j["n_retested"] = c.retest.size();
    return j;
  });
}

}  // namespace

nlohmann::ordered_json matrix_report(const reliability::ConfusionMatrix& matrix, AnnotationClass excluded,
                                     reliability::VarianceEstimator estimator) {
  nlohmann::ordered_json j;
  j["n_paired"] = matrix.total();
  j["matrix"] = reliability::to_json(matrix);
  j["kappa"] = guarded([&] { return reliability::to_json(reliability::cohen_kappa(matrix, estimator)); });
  j["excluded_class"] = scheme::code(excluded);
  j["kappa_excluding"] = guarded([&] {
    return reliability::to_json(reliability::cohen_kappa(reliability::exclude_class_pairs(matrix, excluded), estimator));
  });
  j["agreement"] = guarded([&] { return reliability::to_json(reliability::agreement_breakdown(matrix, excluded)); });
  return j;
}

nlohmann::ordered_json reliability_report(const CoderLabels& a, const CoderLabels& b, AnnotationClass excluded,
                                          reliability::VarianceEstimator estimator) {
  const auto matrix = reliability::paired_matrix(a.first, b.first);
  nlohmann::ordered_json j;
  j["coder_a"] = a.coder_id;
  j["coder_b"] = b.coder_id;
  j["only_a"] = a.first.size() - matrix.total();
  j["only_b"] = b.first.size() - matrix.total();
  j.update(matrix_report(matrix, excluded, estimator));
  j["intra_rater"] = {{"a", retest_json(a)}, {"b", retest_json(b)}};
  return j;
}

namespace {

std::string kappa_line(const nlohmann::ordered_json& k) {
  if (k.contains("error")) return fmt::format("undefined ({})", k["message"].get<std::string>());
  return fmt::format("{:.3f}  95% CI [{:.3f}, {:.3f}]  se {:.4f}  N {}", k["kappa"].get<double>(),
                     k["ci_low"].get<double>(), k["ci_high"].get<double>(), k["se"].get<double>(),
                     k["n"].get<std::uint64_t>());
}

}  // namespace

std::string render_reliability(const nlohmann::ordered_json& r) {
  std::string out;
  if (r.contains("coder_a")) {
    out += fmt::format("Coders: {} (rows) vs {} (columns)\n", r["coder_a"].get<std::string>(),
                       r["coder_b"].get<std::string>());
  }
  out += fmt::format("Paired items: {}\n", r["n_paired"].get<std::uint64_t>());
  const auto& m = r["matrix"];
  out += fmt::format("{:>6}", "a\\b");
  for (const auto& l : m["labels"]) out += fmt::format("{:>8}", l.get<int>());
  out += '\n';
  for (std::size_t i = 0; i < m["labels"].size(); ++i) {
    out += fmt::format("{:>6}", m["labels"][i].get<int>());
    for (const auto& c : m["counts"][i]) out += fmt::format("{:>8}", c.get<std::uint64_t>());
    out += '\n';
  }
  out += fmt::format("kappa (all classes):      {}\n", kappa_line(r["kappa"]));
  out += fmt::format("kappa (without class {}):  {}\n", r["excluded_class"].get<int>(), kappa_line(r["kappa_excluding"]));
  const auto& ag = r["agreement"];
  if (!ag.contains("error")) {
    out += fmt::format("consensual {} ({:.1f}%), disagreements {} ({:.1f}%)\n", ag["consensual"].get<std::uint64_t>(),
                       ag["percent_agreement"].get<double>(), ag["disagreements"].get<std::uint64_t>(),
                       ag["percent_disagreement"].get<double>());
    out += fmt::format("at least one class {}: {} ({:.1f}%); coder a {}, coder b {}, both {}\n",
                       r["excluded_class"].get<int>(), ag["at_least_one_uncertain"].get<std::uint64_t>(),
                       ag["percent_at_least_one_uncertain"].get<double>(), ag["coder_a_uncertain"].get<std::uint64_t>(),
                       ag["coder_b_uncertain"].get<std::uint64_t>(), ag["uncertain_overlap"].get<std::uint64_t>());
    out += fmt::format("disagreements involving class {}: {}; without: {}\n", r["excluded_class"].get<int>(),
                       ag["disagreements_with_uncertain"].get<std::uint64_t>(),
                       ag["disagreements_without_uncertain"].get<std::uint64_t>());
  }
  if (r.contains("intra_rater")) {
    out += fmt::format("intra-rater a: {}\n", kappa_line(r["intra_rater"]["a"]));
    out += fmt::format("intra-rater b: {}\n", kappa_line(r["intra_rater"]["b"]));
  }
  return out;
}

}  // namespace vocalcode::pipeline
