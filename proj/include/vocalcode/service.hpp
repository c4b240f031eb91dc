#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "vocalcode/analytics.hpp"
#include "vocalcode/annotation_log.hpp"
#include "vocalcode/pipeline.hpp"
#include "vocalcode/scheme.hpp"
#include "vocalcode/segmenter.hpp"

namespace vocalcode::service {

struct ServiceConfig {
  std::filesystem::path log_path;
  /// Defaults to `<log_path>.snapshot.json`.
  std::optional<std::filesystem::path> snapshot_path;
  /// Logged events between snapshots; 0 disables periodic snapshots.
  std::size_t snapshot_every = 256;
};

/// WAV bytes for a segment id.
using AudioSource = std::function<std::vector<std::uint8_t>(const std::string& segment_id)>;

/// Optional inputs for the analytics report.
struct AnalysisInputs {
  std::vector<segmenter::Segment> manifest;
  std::vector<pipeline::F0Row> f0;
  std::optional<analytics::GroupMetadata> metadata;
};

struct CreateSessionRequest {
  std::string coder_id;
  scheme::Pass pass;
  /// An empty segment list means "every segment of the manifest".
  scheme::QueueSpec spec;
};

struct CreatedSession {
  std::string session_id;
  bool resumed = false;
  std::size_t total_items = 0;
};

/// What a coder client may see of a queue item.
struct ItemView {
  std::string item_id;
  std::size_t position = 0;  // 0-based queue position
  std::size_t total = 0;
  int plays_used = 0;
  int remaining_plays = 0;
};

struct SessionStats {
  std::string session_id;
  std::string coder_id;
  scheme::Pass pass;
  std::size_t total = 0;
  std::size_t labeled = 0;
  std::size_t plays = 0;
  std::array<std::size_t, 5> class_counts{};  // index = class code - 1
  bool done = false;
};

struct NextItem {
  std::optional<ItemView> item;  // empty once the queue is finished
  SessionStats stats;
};

struct PlayResult {
  std::vector<std::uint8_t> wav;
  int remaining_plays = 0;
};

struct LabelResult {
  std::string item_id;
  scheme::AnnotationClass cls;
  NextItem next;
};

/// Annotation sessions over an append-only log.
///
/// Session ids are `<coder>-<phase>-<set>`; creating an existing session with
/// the same queue resumes it. Every accepted play and label is logged and
/// fsync'd before the call returns. On construction the state is rebuilt
/// from the latest snapshot (when present and consistent) plus the log tail.
class AnnotationService {
 public:
  AnnotationService(ServiceConfig config, AudioSource audio, AnalysisInputs analysis = {});
  ~AnnotationService();

  CreatedSession create_session(const CreateSessionRequest& request);
  NextItem next_item(const std::string& session_id);
  /// Consumes one play of the current item. kQuotaExhausted after three
  /// plays; kSequencing for any item but the current one.
  PlayResult play(const std::string& session_id, const std::string& item_id);
  /// Labels the current item (needs at least one play) and advances.
  LabelResult label(const std::string& session_id, const std::string& item_id, int class_code);
  SessionStats stats(const std::string& session_id);
  std::vector<std::string> session_ids() const;

  /// Ground-truth reliability between two coders.
  nlohmann::ordered_json reliability_report(const std::string& coder_a, const std::string& coder_b);
  /// Class table and two-group comparison over consensual segments. When
  /// coders are omitted the two ground-truth coders are used.
  nlohmann::ordered_json analytics_report(analytics::Metric metric, const std::string& group_by,
                                          analytics::TTestVariant variant = analytics::TTestVariant::kPooled,
                                          std::optional<std::string> coder_a = std::nullopt,
                                          std::optional<std::string> coder_b = std::nullopt);

  /// Writes a snapshot now.
  void snapshot();
  /// Log offset replay started from at construction (0 without a snapshot).
  std::uint64_t replay_offset() const { return replay_offset_; }
  std::filesystem::path snapshot_path() const;

 private:
  struct Session;

  Session& find(const std::string& session_id) const;
  Session& add_session(const annotation_log::SessionHeader& header);
  void apply(const annotation_log::LogEntry& entry);
  void append_and_apply(const annotation_log::LogEntry& entry);
  void write_snapshot_locked();
  bool restore_snapshot(std::uint64_t log_bytes);
  std::vector<scheme::AnnotationRecord> ground_truth_records(const std::string& coder_id) const;
  static SessionStats stats_of(const Session& s);
  static NextItem next_of(const Session& s);

  ServiceConfig config_;
  AudioSource audio_;
  AnalysisInputs analysis_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::mutex log_mutex_;  // serializes log appends, state mutation and snapshots
  std::unique_ptr<annotation_log::LogWriter> log_;
  std::size_t events_since_snapshot_ = 0;
  std::uint64_t replay_offset_ = 0;
};

nlohmann::ordered_json to_json(const ItemView& v);
nlohmann::ordered_json to_json(const SessionStats& s);
nlohmann::ordered_json to_json(const NextItem& n);

/// Coder ids become part of session ids and URLs: 1-64 chars of
/// [A-Za-z0-9_.].
bool valid_coder_id(const std::string& id);

}  // namespace vocalcode::service
