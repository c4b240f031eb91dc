#include "vocalcode/service.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/core.h>

#include "vocalcode/error.hpp"

namespace vocalcode::service {

using annotation_log::LabelEvent;
using annotation_log::LogEntry;
using annotation_log::PlayEvent;
using annotation_log::SessionHeader;
using scheme::AnnotationClass;

namespace {

constexpr std::string_view kSnapshotFormat = "vocalcode.snapshot";
constexpr int kSnapshotVersion = 1;

std::string session_id_for(const std::string& coder, const scheme::Pass& pass) {
  return fmt::format("{}-{}-{}", coder, scheme::to_string(pass.phase), pass.set_index);
}

std::vector<scheme::QueueItem> build_queue(const SessionHeader& h) {
  if (h.pass.phase == scheme::Phase::kGroundTruth) return scheme::build_ground_truth_queue(h.queue_spec);
  if (h.queue_spec.n_duplicates != 0) {
    throw Error(ErrorCode::kInvalidArgument, "duplicates are only drawn for the ground-truth pass");
  }
  return scheme::build_plain_queue(h.queue_spec.segment_ids, h.queue_spec.rng_seed);
}

}  // namespace

struct AnnotationService::Session {
  Session(SessionHeader h, std::vector<scheme::QueueItem> q)
      : header(std::move(h)), queue(std::move(q)), tracker(queue, header.pass) {
    for (std::size_t i = 0; i < queue.size(); ++i) position.emplace(queue[i].item_id, i);
  }

  const scheme::QueueItem& current() const { return queue[cursor]; }
  bool done() const { return cursor >= queue.size(); }

  /// Throws kNotFound for an item outside the queue, kSequencing for any
  /// item but the current one.
  const scheme::QueueItem& require_current(const std::string& item_id) const {
    if (!position.contains(item_id)) {
      throw Error(ErrorCode::kNotFound, fmt::format("item '{}' is not in session '{}'", item_id, header.session_id));
    }
    if (done()) throw Error(ErrorCode::kSequencing, "session is finished");
    if (current().item_id != item_id) {
      throw Error(ErrorCode::kSequencing,
                  fmt::format("item '{}' is not the current item '{}'", item_id, current().item_id));
    }
    return current();
  }

  SessionHeader header;
  std::vector<scheme::QueueItem> queue;
  std::map<std::string, std::size_t> position;
  scheme::AnnotationTracker tracker;
  std::size_t cursor = 0;
  std::size_t plays = 0;
  std::mutex mutex;  // one request at a time per session
};

bool valid_coder_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
  });
}

AnnotationService::AnnotationService(ServiceConfig config, AudioSource audio, AnalysisInputs analysis)
    : config_(std::move(config)), audio_(std::move(audio)), analysis_(std::move(analysis)) {
  std::uint64_t log_bytes = 0;
  if (std::filesystem::exists(config_.log_path)) {
    log_bytes = annotation_log::read_log(config_.log_path).valid_bytes;
  }
  if (log_bytes > 0 && !restore_snapshot(log_bytes)) {
    sessions_.clear();
    replay_offset_ = 0;
  }
  if (log_bytes > 0) {
    for (const auto& e : annotation_log::read_log(config_.log_path, replay_offset_).entries) apply(e);
  }
  log_ = std::make_unique<annotation_log::LogWriter>(config_.log_path);
}

AnnotationService::~AnnotationService() = default;

std::filesystem::path AnnotationService::snapshot_path() const {
  if (config_.snapshot_path) return *config_.snapshot_path;
  auto p = config_.log_path;
  p += ".snapshot.json";
  return p;
}

AnnotationService::Session& AnnotationService::find(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, fmt::format("unknown session '{}'", session_id));
  return *it->second;
}

AnnotationService::Session& AnnotationService::add_session(const SessionHeader& header) {
  auto session = std::make_unique<Session>(header, build_queue(header));
  std::unique_lock lock(sessions_mutex_);
  auto [it, inserted] = sessions_.emplace(header.session_id, std::move(session));
  if (!inserted) throw Error(ErrorCode::kInvalidArgument, fmt::format("session '{}' declared twice", header.session_id));
  return *it->second;
}

void AnnotationService::apply(const LogEntry& entry) {
  if (const auto* h = std::get_if<SessionHeader>(&entry)) {
    add_session(*h);
  } else if (const auto* p = std::get_if<PlayEvent>(&entry)) {
    Session& s = find(p->session_id);
    s.require_current(p->queue_item_id);
    s.tracker.record_play(p->queue_item_id, p->coder_id);
    ++s.plays;
  } else {
    const auto& l = std::get<LabelEvent>(entry);
    Session& s = find(l.session_id);
    s.require_current(l.record.queue_item_id);
    s.tracker.record_label(l.record.queue_item_id, l.record.coder_id, l.record.cls, l.record.timestamp);
    ++s.cursor;
  }
}

void AnnotationService::append_and_apply(const LogEntry& entry) {
  std::lock_guard lock(log_mutex_);
  log_->append(entry);
  apply(entry);
  if (config_.snapshot_every > 0 && ++events_since_snapshot_ >= config_.snapshot_every) {
    // A failed snapshot only costs replay time; the log is authoritative.
    try {
      write_snapshot_locked();
    } catch (const std::exception&) {
    }
  }
}

void AnnotationService::snapshot() {
  std::lock_guard lock(log_mutex_);
  write_snapshot_locked();
}

void AnnotationService::write_snapshot_locked() {
  nlohmann::ordered_json j;
  j["format"] = kSnapshotFormat;
  j["version"] = kSnapshotVersion;
  j["log_offset"] = log_->size();
  auto& sessions = j["sessions"] = nlohmann::ordered_json::array();
  {
    std::shared_lock sl(sessions_mutex_);
    for (const auto& [id, s] : sessions_) {
      nlohmann::ordered_json sj;
      sj["header"] = annotation_log::serialize(s->header);
      nlohmann::ordered_json plays = nlohmann::ordered_json::object();
      for (const auto& item : s->queue) {
        const int n = s->tracker.play_count(item.item_id, s->header.coder_id);
        if (n > 0) plays[item.item_id] = n;
      }
      sj["plays"] = std::move(plays);
      auto& labels = sj["labels"] = nlohmann::ordered_json::array();
      for (const auto& r : s->tracker.records()) labels.push_back(annotation_log::serialize(LabelEvent{id, r}));
      sessions.push_back(std::move(sj));
    }
  }
  const auto path = snapshot_path();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump() << '\n';
    if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write snapshot {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
  events_since_snapshot_ = 0;
}

bool AnnotationService::restore_snapshot(std::uint64_t log_bytes) {
  const auto path = snapshot_path();
  if (!std::filesystem::exists(path)) return false;
  try {
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != kSnapshotFormat || j.at("version") != kSnapshotVersion) return false;
    const auto offset = j.at("log_offset").get<std::uint64_t>();
    if (offset > log_bytes) return false;
    for (const auto& sj : j.at("sessions")) {
      auto header = annotation_log::parse_line(sj.at("header").get<std::string>());
      if (!header || !std::holds_alternative<SessionHeader>(*header)) return false;
      Session& s = add_session(std::get<SessionHeader>(*header));
      for (const auto& [item, n] : sj.at("plays").items()) {
        for (int i = 0; i < n.get<int>(); ++i) s.tracker.record_play(item, s.header.coder_id);
        s.plays += n.get<std::size_t>();
      }
      for (const auto& line : sj.at("labels")) {
        auto e = annotation_log::parse_line(line.get<std::string>());
        if (!e || !std::holds_alternative<LabelEvent>(*e)) return false;
        const auto& r = std::get<LabelEvent>(*e).record;
        s.require_current(r.queue_item_id);
        s.tracker.record_label(r.queue_item_id, r.coder_id, r.cls, r.timestamp);
        ++s.cursor;
      }
    }
    replay_offset_ = offset;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

CreatedSession AnnotationService::create_session(const CreateSessionRequest& request) {
  if (!valid_coder_id(request.coder_id)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("invalid coder id '{}'", request.coder_id));
  }
  if (request.pass.set_index < 0) throw Error(ErrorCode::kInvalidArgument, "set_index must be >= 0");
  SessionHeader header;
  header.session_id = session_id_for(request.coder_id, request.pass);
  header.coder_id = request.coder_id;
  header.pass = request.pass;
  header.queue_spec = request.spec;
  if (header.queue_spec.segment_ids.empty()) {
    for (const auto& s : analysis_.manifest) header.queue_spec.segment_ids.push_back(s.id);
  }
  if (header.queue_spec.segment_ids.empty()) throw Error(ErrorCode::kInvalidArgument, "queue has no segments");

  {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(header.session_id);
    if (it != sessions_.end()) {
      if (!(it->second->header == header)) {
        throw Error(ErrorCode::kSequencing,
                    fmt::format("session '{}' already exists with a different queue", header.session_id));
      }
      return {header.session_id, true, it->second->queue.size()};
    }
  }
  // Validate the queue before anything reaches the log.
  const auto queue = build_queue(header);
  std::lock_guard lock(log_mutex_);
  {
    std::shared_lock sl(sessions_mutex_);
    if (sessions_.contains(header.session_id)) {
      sl.unlock();
      if (!(find(header.session_id).header == header)) {
        throw Error(ErrorCode::kSequencing,
                    fmt::format("session '{}' already exists with a different queue", header.session_id));
      }
      return {header.session_id, true, queue.size()};
    }
  }
  log_->append(header);
  add_session(header);
  return {header.session_id, false, queue.size()};
}

SessionStats AnnotationService::stats_of(const Session& s) {
  SessionStats st;
  st.session_id = s.header.session_id;
  st.coder_id = s.header.coder_id;
  st.pass = s.header.pass;
  st.total = s.queue.size();
  st.labeled = s.cursor;
  st.plays = s.plays;
  for (const auto& r : s.tracker.records()) ++st.class_counts[static_cast<std::size_t>(scheme::code(r.cls) - 1)];
  st.done = s.done();
  return st;
}

NextItem AnnotationService::next_of(const Session& s) {
  NextItem n;
  n.stats = stats_of(s);
  if (!s.done()) {
    ItemView v;
    v.item_id = s.current().item_id;
    v.position = s.cursor;
    v.total = s.queue.size();
    v.plays_used = s.tracker.play_count(v.item_id, s.header.coder_id);
    v.remaining_plays = scheme::kMaxPlays - v.plays_used;
    n.item = std::move(v);
  }
  return n;
}

NextItem AnnotationService::next_item(const std::string& session_id) {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  return next_of(s);
}

PlayResult AnnotationService::play(const std::string& session_id, const std::string& item_id) {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  const auto& item = s.require_current(item_id);
  const int used = s.tracker.play_count(item_id, s.header.coder_id);
  if (used >= scheme::kMaxPlays) {
    throw Error(ErrorCode::kQuotaExhausted,
                fmt::format("item '{}' has used all {} plays", item_id, scheme::kMaxPlays));
  }
  PlayResult r;
  r.wav = audio_(item.segment_id);
  append_and_apply(PlayEvent{session_id, item_id, s.header.coder_id, used + 1, annotation_log::utc_now()});
  r.remaining_plays = scheme::kMaxPlays - (used + 1);
  return r;
}

LabelResult AnnotationService::label(const std::string& session_id, const std::string& item_id, int class_code) {
  const AnnotationClass cls = scheme::class_from_code(class_code);
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  const auto& item = s.require_current(item_id);
  const int plays = s.tracker.play_count(item_id, s.header.coder_id);
  if (plays == 0) throw Error(ErrorCode::kSequencing, fmt::format("item '{}' must be played before labeling", item_id));
  scheme::AnnotationRecord rec{item_id, item.segment_id, s.header.coder_id, cls, plays, s.header.pass,
                               annotation_log::utc_now()};
  append_and_apply(LabelEvent{session_id, std::move(rec)});
  return {item_id, cls, next_of(s)};
}

SessionStats AnnotationService::stats(const std::string& session_id) {
  Session& s = find(session_id);
  std::lock_guard lock(s.mutex);
  return stats_of(s);
}

std::vector<std::string> AnnotationService::session_ids() const {
  std::shared_lock lock(sessions_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) ids.push_back(id);
  return ids;
}

std::vector<scheme::AnnotationRecord> AnnotationService::ground_truth_records(const std::string& coder_id) const {
  std::vector<Session*> matching;
  {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [id, s] : sessions_) {
      if (s->header.coder_id == coder_id && s->header.pass.phase == scheme::Phase::kGroundTruth) {
        matching.push_back(s.get());
      }
    }
  }
  if (matching.empty()) {
    throw Error(ErrorCode::kNotFound, fmt::format("coder '{}' has no ground-truth session", coder_id));
  }
  std::vector<scheme::AnnotationRecord> out;
  for (Session* s : matching) {
    std::lock_guard lock(s->mutex);
    const auto& recs = s->tracker.records();
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

nlohmann::ordered_json AnnotationService::reliability_report(const std::string& coder_a, const std::string& coder_b) {
  if (coder_a == coder_b) throw Error(ErrorCode::kInvalidArgument, "reliability needs two different coders");
  const auto a = pipeline::coder_labels(coder_a, ground_truth_records(coder_a));
  const auto b = pipeline::coder_labels(coder_b, ground_truth_records(coder_b));
  return pipeline::reliability_report(a, b);
}

nlohmann::ordered_json AnnotationService::analytics_report(analytics::Metric metric, const std::string& group_by,
                                                           analytics::TTestVariant variant,
                                                           std::optional<std::string> coder_a,
                                                           std::optional<std::string> coder_b) {
  if (!analysis_.metadata) throw Error(ErrorCode::kNotFound, "no group metadata configured");
  if (analysis_.manifest.empty()) throw Error(ErrorCode::kNotFound, "no segment manifest configured");
  if (!coder_a || !coder_b) {
    std::set<std::string> coders;
    {
      std::shared_lock lock(sessions_mutex_);
      for (const auto& [id, s] : sessions_) {
        if (s->header.pass.phase == scheme::Phase::kGroundTruth) coders.insert(s->header.coder_id);
      }
    }
    if (coders.size() != 2) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("found {} ground-truth coders; name two with a= and b=", coders.size()));
    }
    coder_a = *coders.begin();
    coder_b = *std::next(coders.begin());
  }
  const auto a = pipeline::coder_labels(*coder_a, ground_truth_records(*coder_a));
  const auto b = pipeline::coder_labels(*coder_b, ground_truth_records(*coder_b));
  const auto obs = pipeline::observations(pipeline::consensus(a, b), analysis_.manifest, analysis_.f0);
  const auto groups = analytics::groups_for_segments(obs, analysis_.metadata->field(group_by));

  nlohmann::ordered_json j;
  j["coder_a"] = *coder_a;
  j["coder_b"] = *coder_b;
  j["n_consensual"] = obs.size();
  j["class_table"] = analytics::to_json(analytics::class_duration_table(obs));
  j["group_by"] = group_by;
  j["comparison"] = analytics::to_json(analytics::group_compare(obs, groups, metric, variant));
  return j;
}

nlohmann::ordered_json to_json(const ItemView& v) {
  nlohmann::ordered_json j;
  j["item_id"] = v.item_id;
  j["position"] = v.position;
  j["total"] = v.total;
  j["plays_used"] = v.plays_used;
  j["remaining_plays"] = v.remaining_plays;
  return j;
}

nlohmann::ordered_json to_json(const SessionStats& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.session_id;
  j["coder_id"] = s.coder_id;
  j["phase"] = scheme::to_string(s.pass.phase);
  j["set_index"] = s.pass.set_index;
  j["total"] = s.total;
  j["labeled"] = s.labeled;
  j["plays"] = s.plays;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < s.class_counts.size(); ++i) counts[std::to_string(i + 1)] = s.class_counts[i];
  j["class_counts"] = std::move(counts);
  j["done"] = s.done;
  return j;
}

nlohmann::ordered_json to_json(const NextItem& n) {
  nlohmann::ordered_json j;
  j["done"] = !n.item.has_value();
  j["item"] = n.item ? to_json(*n.item) : nlohmann::ordered_json(nullptr);
  j["stats"] = to_json(n.stats);
  return j;
}

}  // namespace vocalcode::service
