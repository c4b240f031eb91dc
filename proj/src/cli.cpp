#include "vocalcode/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "vocalcode/analytics.hpp"
#include "vocalcode/annotation_log.hpp"
#include "vocalcode/error.hpp"
#include "vocalcode/http_server.hpp"
#include "vocalcode/pipeline.hpp"
#include "vocalcode/pitch.hpp"
#include "vocalcode/reliability.hpp"
#include "vocalcode/scheme.hpp"
#include "vocalcode/segmenter.hpp"
#include "vocalcode/service.hpp"

namespace vocalcode::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
      return kExitIo;
    default:
      return kExitData;
  }
}

/// Writes to `path`, or to `out` when path is empty or "-".
template <class F>
void emit(const std::string& path, std::ostream& out, F&& write) {
  if (path.empty() || path == "-") {
    write(out);
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open {} for writing", path));
  write(f);
  f.flush();
  if (!f) throw Error(ErrorCode::kIo, fmt::format("write to {} failed", path));
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void check_format(const std::string& format) {
  if (format != "json" && format != "table") throw UsageError("--format must be json or table");
}

// ---------------------------------------------------------------- labels

struct CoderOptions {
  std::string log_a;
  std::string log_b;
  std::string coder_a;
  std::string coder_b;

  void add_to(CLI::App* cmd, bool required) {
    auto* a = cmd->add_option("--log-a", log_a, "Annotation log holding coder A's ground-truth labels");
    if (required) a->required();
    cmd->add_option("--log-b", log_b, "Annotation log for coder B (defaults to --log-a)");
    cmd->add_option("--coder-a", coder_a, "Coder A id (default: the log's only coder)");
    cmd->add_option("--coder-b", coder_b, "Coder B id");
  }
};

std::vector<std::string> ground_truth_coders(const std::vector<annotation_log::LogEntry>& entries) {
  std::set<std::string> out;
  for (const auto& r : annotation_log::label_records(entries, {std::nullopt, scheme::Phase::kGroundTruth, std::nullopt})) {
    out.insert(r.coder_id);
  }
  return {out.begin(), out.end()};
}

std::pair<pipeline::CoderLabels, pipeline::CoderLabels> load_coders(CoderOptions o) {
  if (o.log_b.empty()) o.log_b = o.log_a;
  const auto entries_a = annotation_log::read_log(o.log_a).entries;
  const auto entries_b = o.log_b == o.log_a ? entries_a : annotation_log::read_log(o.log_b).entries;
  const auto coders_a = ground_truth_coders(entries_a);
  const auto coders_b = ground_truth_coders(entries_b);

  if (o.log_a == o.log_b) {
    if (o.coder_a.empty() || o.coder_b.empty()) {
      if (coders_a.size() != 2) {
        throw UsageError(fmt::format("{} holds {} ground-truth coders; pass --coder-a and --coder-b", o.log_a,
                                     coders_a.size()));
      }
      if (o.coder_a.empty()) o.coder_a = o.coder_b == coders_a[0] ? coders_a[1] : coders_a[0];
      if (o.coder_b.empty()) o.coder_b = o.coder_a == coders_a[0] ? coders_a[1] : coders_a[0];
    }
  } else {
    auto pick = [](std::string& coder, const std::vector<std::string>& found, const std::string& log) {
      if (!coder.empty()) return;
      if (found.size() != 1) {
        throw UsageError(fmt::format("{} holds {} ground-truth coders; name one explicitly", log, found.size()));
      }
      coder = found.front();
    };
    pick(o.coder_a, coders_a, o.log_a);
    pick(o.coder_b, coders_b, o.log_b);
  }
  if (o.coder_a == o.coder_b) throw UsageError("coder A and coder B must differ");

  auto labels = [](const std::vector<annotation_log::LogEntry>& entries, const std::string& coder) {
    auto recs = annotation_log::label_records(entries, {coder, scheme::Phase::kGroundTruth, std::nullopt});
    if (recs.empty()) throw Error(ErrorCode::kNotFound, fmt::format("coder '{}' has no ground-truth labels", coder));
    return pipeline::coder_labels(coder, std::move(recs));
  };
  return {labels(entries_a, o.coder_a), labels(entries_b, o.coder_b)};
}

// ---------------------------------------------------------------- commands

struct SegmentCmd {
  std::vector<std::string> inputs;
  segmenter::SegmenterConfig config;
  double reference_rms = 0.0;
  std::string out_path;

  void run(std::ostream& out) {
    if (reference_rms > 0.0) config.reference_rms = reference_rms;
    config.validate();
    std::vector<segmenter::Segment> all;
    std::set<std::string> sources;
    for (const auto& input : inputs) {
      const std::string source = fs::path(input).stem().string();
      if (!sources.insert(source).second) {
        throw UsageError(fmt::format("two inputs share the recording id '{}'", source));
      }
      auto segs = segmenter::segment_audio(audio::load_wav(input), config, source);
      all.insert(all.end(), segs.begin(), segs.end());
    }
    emit(out_path, out, [&](std::ostream& o) {
      if (ends_with(out_path, ".csv")) segmenter::write_manifest_csv(o, all);
      else segmenter::write_manifest_jsonl(o, all);
    });
  }
};

struct QueueCmd {
  std::string manifest;
  std::size_t duplicates = 200;
  std::uint64_t seed = 0;
  std::string phase = "ground_truth";
  std::string out_path;
  std::size_t n_sets = 0;
  std::size_t set_size = 0;

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& s : segmenter::read_manifest(manifest)) out.push_back(s.id);
    return out;
  }

  void build(std::ostream& out) {
    const auto p = scheme::phase_from_string(phase);
    std::vector<scheme::QueueItem> queue;
    if (p == scheme::Phase::kGroundTruth) {
      queue = scheme::build_ground_truth_queue({ids(), duplicates, seed});
    } else {
      queue = scheme::build_plain_queue(ids(), seed);
    }
    emit(out_path, out, [&](std::ostream& o) {
      for (const auto& q : queue) {
        ordered_json j;
        j["item_id"] = q.item_id;
        j["segment_id"] = q.segment_id;
        j["is_duplicate"] = q.is_duplicate;
        o << j.dump() << '\n';
      }
    });
  }

  void sets(std::ostream& out) {
    const auto drawn = scheme::draw_disjoint_sets(ids(), n_sets, set_size, seed);
    emit(out_path, out, [&](std::ostream& o) {
      for (std::size_t i = 0; i < drawn.size(); ++i) {
        ordered_json j;
        j["set_index"] = i;
        j["segment_ids"] = drawn[i];
        o << j.dump() << '\n';
      }
    });
  }
};

struct ServeCmd {
  std::string log;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string manifest;
  std::string audio_dir;
  std::string f0;
  std::string groups;
  std::size_t snapshot_every = 256;

  void run(std::ostream& out) {
    service::AnalysisInputs inputs;
    std::shared_ptr<pipeline::ManifestAudio> audio;
    if (!manifest.empty()) {
      inputs.manifest = segmenter::read_manifest(manifest);
      audio = std::make_shared<pipeline::ManifestAudio>(inputs.manifest, audio_dir.empty() ? "." : audio_dir);
    }
    if (!f0.empty()) inputs.f0 = pipeline::load_f0_csv(f0);
    if (!groups.empty()) inputs.metadata = analytics::GroupMetadata::load_csv(groups);
    service::AudioSource source = [audio](const std::string& id) -> std::vector<std::uint8_t> {
      if (!audio) throw Error(ErrorCode::kNotFound, "no manifest configured");
      return audio->segment_wav(id);
    };

    // Block termination signals so every server thread inherits the mask;
    // this thread then waits for them synchronously.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::AnnotationService svc({log, std::nullopt, snapshot_every}, source, std::move(inputs));
    http::Server server(svc);
    const int bound = server.bind(host, port);
    out << fmt::format("listening on http://{}:{}", host, bound) << std::endl;
    std::thread listener([&] { server.listen(); });
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
    listener.join();
    svc.snapshot();
  }
};

struct KappaCmd {
  CoderOptions coders;
  std::string matrix;
  std::string matrix_out;
  int exclude_class = 5;
  std::string format = "json";
  std::string variance = "large-sample";

  void run(std::ostream& out) {
    check_format(format);
    const auto excluded = scheme::class_from_code(exclude_class);
    reliability::VarianceEstimator est;
    if (variance == "large-sample") est = reliability::VarianceEstimator::kLargeSample;
    else if (variance == "fleiss-cohen-everitt") est = reliability::VarianceEstimator::kFleissCohenEveritt;
    else throw UsageError("--variance must be large-sample or fleiss-cohen-everitt");

    ordered_json report;
    if (!matrix.empty()) {
      if (!coders.log_a.empty()) throw UsageError("--matrix and --log-a are mutually exclusive");
      std::ifstream in(matrix);
      if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", matrix));
      report = pipeline::matrix_report(reliability::read_matrix_csv(in), excluded, est);
    } else {
      if (coders.log_a.empty()) throw UsageError("pass --log-a (and --log-b) or --matrix");
      auto [a, b] = load_coders(coders);
      report = pipeline::reliability_report(a, b, excluded, est);
      if (!matrix_out.empty()) {
        emit(matrix_out, out, [&](std::ostream& o) {
          reliability::write_matrix_csv(o, reliability::paired_matrix(a.first, b.first));
        });
      }
    }
    if (format == "json") out << report.dump(2) << '\n';
    else out << pipeline::render_reliability(report);
  }
};

struct PitchCmd {
  std::string manifest;
  std::string audio_dir = ".";
  std::string out_path;
  unsigned jobs = 1;
  pitch::PitchConfig config;
  bool exact_frame = false;
  bool progress = false;

  void run(std::ostream& out, std::ostream& err) {
    config.round_frame_to_power_of_two = !exact_frame;
    pipeline::ManifestAudio audio(segmenter::read_manifest(manifest), audio_dir);
    pipeline::ProgressFn sink;
    if (progress) {
      sink = [&err](std::size_t done, std::size_t total) { err << fmt::format("\r{}/{}", done, total) << std::flush; };
    }
    const auto rows = pipeline::batch_f0(audio, config, jobs, sink);
    if (progress) err << '\n';
    emit(out_path, out, [&](std::ostream& o) { pipeline::write_f0_csv(o, rows); });
  }
};

std::vector<analytics::SegmentObservation> consensual_observations(const CoderOptions& coders,
                                                                   const std::string& manifest,
                                                                   const std::string& f0) {
  auto [a, b] = load_coders(coders);
  const auto segments = segmenter::read_manifest(manifest);
  const auto rows = f0.empty() ? std::vector<pipeline::F0Row>{} : pipeline::load_f0_csv(f0);
  return pipeline::observations(pipeline::consensus(a, b), segments, rows);
}

struct AnalyzeCmd {
  CoderOptions coders;
  std::string manifest;
  std::string f0;
  std::string groups;
  std::string group_by = "sex";
  std::string metric = "duration";
  std::string test = "pooled";
  std::string format = "json";

  void run(std::ostream& out) {
    check_format(format);
    if (test != "pooled" && test != "welch") throw UsageError("--test must be pooled or welch");
    const auto m = analytics::metric_from_string(metric);
    if (m == analytics::Metric::kF0 && f0.empty()) throw UsageError("--metric f0 needs --f0");
    const auto obs = consensual_observations(coders, manifest, f0);
    const auto meta = analytics::GroupMetadata::load_csv(groups);
    const auto cmp = analytics::group_compare(obs, analytics::groups_for_segments(obs, meta.field(group_by)), m,
                                              test == "welch" ? analytics::TTestVariant::kWelch
                                                              : analytics::TTestVariant::kPooled);
    if (format == "json") {
      auto j = analytics::to_json(cmp);
      j["group_by"] = group_by;
      out << j.dump(2) << '\n';
    } else {
      out << fmt::format("{} by {}\n", metric, group_by) << analytics::render_comparison(cmp);
    }
  }
};

struct ReportCmd {
  CoderOptions coders;
  std::string manifest;
  std::string f0;
  std::string format = "table";

  void run(std::ostream& out) {
    check_format(format);
    auto [a, b] = load_coders(coders);
    const auto rel = pipeline::reliability_report(a, b);
    const auto rows = f0.empty() ? std::vector<pipeline::F0Row>{} : pipeline::load_f0_csv(f0);
    const auto obs = pipeline::observations(pipeline::consensus(a, b), segmenter::read_manifest(manifest), rows);
    const auto table = analytics::class_duration_table(obs);
    if (format == "json") {
      ordered_json j;
      j["class_table"] = analytics::to_json(table);
      j["reliability"] = rel;
      out << j.dump(2) << '\n';
    } else {
      out << "Consensual segments by class\n" << analytics::render_class_table(table) << '\n'
          << pipeline::render_reliability(rel);
    }
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Infant vocalization segmentation, annotation and analysis"};
  app.require_subcommand(1);
  app.name(args.empty() ? "vocalcode" : fs::path(args.front()).filename().string());

  SegmentCmd segment;
  auto* seg = app.add_subcommand("segment", "Split recordings into non-silent segments");
  seg->add_option("inputs", segment.inputs, "WAV recordings; the file stem becomes the recording id")->required();
  seg->add_option("--threshold-db", segment.config.threshold_db, "Silence threshold in dB above the reference");
  seg->add_option("--min-pause-ms", segment.config.min_pause_ms, "Shortest silent run that splits segments");
  seg->add_option("--frame-ms", segment.config.frame_ms);
  seg->add_option("--hop-ms", segment.config.hop_ms);
  seg->add_option("--reference-rms", segment.reference_rms, "Fixed RMS for 0 dB (default: quietest frame)");
  seg->add_option("--out", segment.out_path, "Manifest path (.jsonl or .csv; default stdout)");

  QueueCmd queue;
  auto* q = app.add_subcommand("queue", "Build annotation queues");
  q->require_subcommand(1);
  auto* qb = q->add_subcommand("build", "Shuffled queue, with re-drawn duplicates for the ground-truth pass");
  qb->add_option("--manifest", queue.manifest)->required();
  qb->add_option("--duplicates", queue.duplicates, "Duplicates appended for intra-rater retest");
  qb->add_option("--seed", queue.seed)->required();
  qb->add_option("--phase", queue.phase, "familiarization|consolidation|ground_truth");
  qb->add_option("--out", queue.out_path);
  auto* qs = q->add_subcommand("sets", "Mutually exclusive practice sets");
  qs->add_option("--manifest", queue.manifest)->required();
  qs->add_option("--sets", queue.n_sets)->required();
  qs->add_option("--size", queue.set_size)->required();
  qs->add_option("--seed", queue.seed)->required();
  qs->add_option("--out", queue.out_path);

  ServeCmd serve;
  auto* sv = app.add_subcommand("serve", "Run the annotation HTTP service");
  sv->add_option("--log", serve.log, "Append-only annotation log")->required();
  sv->add_option("--host", serve.host);
  sv->add_option("--port", serve.port, "0 picks a free port");
  sv->add_option("--manifest", serve.manifest);
  sv->add_option("--audio-dir", serve.audio_dir);
  sv->add_option("--f0", serve.f0, "F0 CSV for analytics reports");
  sv->add_option("--groups", serve.groups, "Recording metadata CSV for analytics reports");
  sv->add_option("--snapshot-every", serve.snapshot_every, "Logged events between snapshots (0 = off)");

  KappaCmd kappa;
  auto* kp = app.add_subcommand("kappa", "Inter- and intra-rater agreement");
  kappa.coders.add_to(kp, false);
  kp->add_option("--matrix", kappa.matrix, "Read a confusion matrix CSV instead of logs");
  kp->add_option("--matrix-out", kappa.matrix_out, "Also write the paired matrix as CSV");
  kp->add_option("--exclude-class", kappa.exclude_class, "Class removed for the reduced kappa");
  kp->add_option("--format", kappa.format, "json|table");
  kp->add_option("--variance", kappa.variance, "large-sample|fleiss-cohen-everitt");

  PitchCmd pitch_cmd;
  auto* pc = app.add_subcommand("pitch", "Per-segment F0 estimates");
  pc->add_option("--manifest", pitch_cmd.manifest)->required();
  pc->add_option("--audio-dir", pitch_cmd.audio_dir, "Directory holding <recording>.wav");
  pc->add_option("--out", pitch_cmd.out_path);
  pc->add_option("--jobs", pitch_cmd.jobs, "Worker threads")->check(CLI::PositiveNumber);
  pc->add_option("--fmin", pitch_cmd.config.fmin);
  pc->add_option("--fmax", pitch_cmd.config.fmax);
  pc->add_option("--frame-ms", pitch_cmd.config.frame_length_ms);
  pc->add_flag("--exact-frame", pitch_cmd.exact_frame, "Do not snap the frame to a power of two");
  pc->add_flag("--progress", pitch_cmd.progress, "Report progress on stderr");

  AnalyzeCmd analyze;
  auto* an = app.add_subcommand("analyze", "Compare two groups on consensual class 1-2 segments");
  analyze.coders.add_to(an, true);
  an->add_option("--manifest", analyze.manifest)->required();
  an->add_option("--f0", analyze.f0, "F0 CSV from the pitch command");
  an->add_option("--groups", analyze.groups, "Recording metadata CSV")->required();
  an->add_option("--group-by", analyze.group_by, "Metadata column holding the two groups");
  an->add_option("--metric", analyze.metric, "duration|f0");
  an->add_option("--test", analyze.test, "pooled|welch");
  an->add_option("--format", analyze.format, "json|table");

  ReportCmd report;
  auto* rp = app.add_subcommand("report", "Class table and reliability summary");
  report.coders.add_to(rp, true);
  rp->add_option("--manifest", report.manifest)->required();
  rp->add_option("--f0", report.f0);
  rp->add_option("--format", report.format, "json|table");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("vocalcode");

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (seg->parsed()) segment.run(out);
    else if (qb->parsed()) queue.build(out);
    else if (qs->parsed()) queue.sets(out);
    else if (sv->parsed()) serve.run(out);
    else if (kp->parsed()) kappa.run(out);
    else if (pc->parsed()) pitch_cmd.run(out, err);
    else if (an->parsed()) analyze.run(out);
    else if (rp->parsed()) report.run(out);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
}

}  // namespace vocalcode::cli
