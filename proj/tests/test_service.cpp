#include <doctest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include <fmt/core.h>

#include "fixtures.hpp"
#include "vocalcode/error.hpp"
#include "vocalcode/service.hpp"

using namespace vocalcode;
using namespace vocalcode::service;
using scheme::Phase;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kMismatch;
}

std::vector<std::string> seg_ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(fmt::format("rec{}-{:05d}", i % 2, i));
  return out;
}

std::vector<std::uint8_t> tiny_wav(const std::string&) {
  return audio::encode_wav(audio::AudioBuffer(std::vector<float>(160, 0.1f), 16000));
}

CreateSessionRequest request(const std::string& coder, std::size_t n = 10, std::size_t dups = 2,
                             std::uint64_t seed = 5) {
  return {coder, {Phase::kGroundTruth, 0}, {seg_ids(n), dups, seed}};
}

// Item id -> segment id, rebuilt from the deterministic queue.
std::map<std::string, std::string> queue_map(const CreateSessionRequest& r) {
  std::map<std::string, std::string> out;
  for (const auto& item : scheme::build_ground_truth_queue(r.spec)) out[item.item_id] = item.segment_id;
  return out;
}

// Plays once and labels every remaining item with label_of(segment id).
void label_all(AnnotationService& svc, const std::string& sid, const CreateSessionRequest& r,
               const std::function<int(const std::string&)>& label_of) {
  const auto q = queue_map(r);
  for (auto n = svc.next_item(sid); n.item; n = svc.next_item(sid)) {
    svc.play(sid, n.item->item_id);
    svc.label(sid, n.item->item_id, label_of(q.at(n.item->item_id)));
  }
}

ServiceConfig config(const fixtures::TempDir& dir, std::size_t every = 0) {
  ServiceConfig c;
  c.log_path = dir / "annotations.jsonl";
  c.snapshot_every = every;
  return c;
}

}  // namespace

TEST_CASE("a session walks its queue to the done marker") {
  fixtures::TempDir dir;
  AnnotationService svc(config(dir), tiny_wav);
  const auto created = svc.create_session(request("c1"));
  CHECK(created.session_id == "c1-ground_truth-0");
  CHECK_FALSE(created.resumed);
  CHECK(created.total_items == 12);

  auto n = svc.next_item(created.session_id);
  REQUIRE(n.item);
  CHECK(n.item->position == 0);
  CHECK(n.item->total == 12);
  CHECK(n.item->remaining_plays == 3);

  std::size_t steps = 0;
  while (n.item) {
    const auto p = svc.play(created.session_id, n.item->item_id);
    CHECK(p.remaining_plays == 2);
    CHECK(audio::decode_wav(p.wav).size() == 160);
    const auto l = svc.label(created.session_id, n.item->item_id, 1 + static_cast<int>(steps % 5));
    CHECK(l.item_id == n.item->item_id);
    n = l.next;
    ++steps;
    if (n.item) CHECK(n.item->position == steps);
  }
  CHECK(steps == 12);
  const auto st = svc.stats(created.session_id);
  CHECK(st.done);
  CHECK(st.labeled == 12);
  CHECK(st.plays == 12);
  CHECK(st.class_counts == std::array<std::size_t, 5>{3, 3, 2, 2, 2});
  CHECK(code_of([&] { svc.play(created.session_id, "q00000"); }) == ErrorCode::kSequencing);
  const auto j = to_json(svc.next_item(created.session_id));
  CHECK(j["done"] == true);
  CHECK(j["item"].is_null());
}

TEST_CASE("play budget and ordering rules") {
  fixtures::TempDir dir;
  AnnotationService svc(config(dir), tiny_wav);
  const auto sid = svc.create_session(request("c1")).session_id;
  const auto item = svc.next_item(sid).item->item_id;

  CHECK(code_of([&] { svc.label(sid, item, 1); }) == ErrorCode::kSequencing);
  CHECK(svc.play(sid, item).remaining_plays == 2);
  CHECK(svc.play(sid, item).remaining_plays == 1);
  CHECK(svc.play(sid, item).remaining_plays == 0);
  CHECK(code_of([&] { svc.play(sid, item); }) == ErrorCode::kQuotaExhausted);
  CHECK(svc.next_item(sid).item->plays_used == 3);

  CHECK(code_of([&] { svc.play(sid, "q00005"); }) == ErrorCode::kSequencing);
  CHECK(code_of([&] { svc.play(sid, "q99999"); }) == ErrorCode::kNotFound);
  CHECK(code_of([&] { svc.play("nobody-ground_truth-0", item); }) == ErrorCode::kNotFound);
  CHECK(code_of([&] { svc.label(sid, item, 6); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { svc.create_session(request("bad id")); }) == ErrorCode::kInvalidArgument);

  svc.label(sid, item, 2);
  CHECK(code_of([&] { svc.label(sid, item, 2); }) == ErrorCode::kSequencing);
}

TEST_CASE("client views never reveal segment ids or duplicate flags") {
  fixtures::TempDir dir;
  AnnotationService svc(config(dir), tiny_wav);
  const auto sid = svc.create_session(request("c1", 6, 6)).session_id;
  for (auto n = svc.next_item(sid); n.item; n = svc.next_item(sid)) {
    const auto text = to_json(n).dump();
    CHECK(text.find("segment") == std::string::npos);
    CHECK(text.find("duplicate") == std::string::npos);
    CHECK(text.find("rec") == std::string::npos);
    svc.play(sid, n.item->item_id);
    svc.label(sid, n.item->item_id, 3);
  }
}

TEST_CASE("a failed audio fetch does not consume a play") {
  fixtures::TempDir dir;
  AnnotationService svc(config(dir), [](const std::string&) -> std::vector<std::uint8_t> {
    throw Error(ErrorCode::kIo, "disk gone");
  });
  const auto sid = svc.create_session(request("c1")).session_id;
  const auto item = svc.next_item(sid).item->item_id;
  CHECK(code_of([&] { svc.play(sid, item); }) == ErrorCode::kIo);
  CHECK(svc.next_item(sid).item->remaining_plays == 3);
  CHECK(svc.stats(sid).plays == 0);
}

TEST_CASE("concurrent requests for the last play: exactly one wins") {
  for (int round = 0; round < 20; ++round) {
    fixtures::TempDir dir;
    AnnotationService svc(config(dir), tiny_wav);
    const auto sid = svc.create_session(request("c1")).session_id;
    const auto item = svc.next_item(sid).item->item_id;
    svc.play(sid, item);
    svc.play(sid, item);

    std::atomic<int> ok{0}, quota{0}, other{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&] {
        const auto c = code_of([&] { svc.play(sid, item); });
        (c == ErrorCode::kMismatch ? ok : c == ErrorCode::kQuotaExhausted ? quota : other)++;
      });
    }
    for (auto& t : threads) t.join();
    CHECK(ok == 1);
    CHECK(quota == 7);
    CHECK(other == 0);
    CHECK(svc.next_item(sid).item->plays_used == 3);
  }
}

TEST_CASE("resume keeps the cursor; a different queue is refused") {
  fixtures::TempDir dir;
  AnnotationService svc(config(dir), tiny_wav);
  const auto r = request("c1");
  const auto sid = svc.create_session(r).session_id;
  const auto first = svc.next_item(sid).item->item_id;
  svc.play(sid, first);
  svc.label(sid, first, 1);
  svc.play(sid, svc.next_item(sid).item->item_id);

  const auto again = svc.create_session(r);
  CHECK(again.resumed);
  CHECK(again.session_id == sid);
  const auto n = svc.next_item(sid);
  CHECK(n.item->position == 1);
  CHECK(n.item->remaining_plays == 2);
  CHECK(code_of([&] { svc.create_session(request("c1", 10, 2, 6)); }) == ErrorCode::kSequencing);

  // Another set index is a separate session.
  auto other = r;
  other.pass = {Phase::kConsolidation, 1};
  other.spec.n_duplicates = 0;
  CHECK(svc.create_session(other).session_id == "c1-consolidation-1");
  CHECK(svc.session_ids().size() == 2);
}

TEST_CASE("state survives a restart, including a torn final line") {
  fixtures::TempDir dir;
  const auto r = request("c1");
  std::string sid;
  SessionStats before;
  ItemView cursor;
  {
    AnnotationService svc(config(dir), tiny_wav);
    sid = svc.create_session(r).session_id;
    for (int i = 0; i < 4; ++i) {
      const auto item = svc.next_item(sid).item->item_id;
      svc.play(sid, item);
      svc.label(sid, item, 4);
    }
    svc.play(sid, svc.next_item(sid).item->item_id);
    before = svc.stats(sid);
    cursor = *svc.next_item(sid).item;
  }
  {
    std::ofstream f(dir / "annotations.jsonl", std::ios::app | std::ios::binary);
    f << R"({"type":"play","session_id":")" << sid;  // crash mid-write
  }
  AnnotationService svc(config(dir), tiny_wav);
  CHECK(svc.replay_offset() == 0);
  const auto after = svc.stats(sid);
  CHECK(after.labeled == before.labeled);
  CHECK(after.plays == before.plays);
  CHECK(after.class_counts == before.class_counts);
  const auto n = svc.next_item(sid).item;
  CHECK(n->item_id == cursor.item_id);
  CHECK(n->remaining_plays == 2);

  // The torn tail was trimmed; new events append cleanly.
  svc.label(sid, n->item_id, 5);
  AnnotationService again(config(dir), tiny_wav);
  CHECK(again.stats(sid).labeled == 5);
}

TEST_CASE("snapshot plus log tail reproduces the state") {
  fixtures::TempDir dir;
  const auto r = request("c1", 30, 5);
  std::string sid;
  SessionStats before;
  {
    AnnotationService svc(config(dir, 7), tiny_wav);
    sid = svc.create_session(r).session_id;
    for (int i = 0; i < 11; ++i) {
      const auto item = svc.next_item(sid).item->item_id;
      svc.play(sid, item);
      svc.label(sid, item, 1 + i % 5);
    }
    svc.play(sid, svc.next_item(sid).item->item_id);
    before = svc.stats(sid);
  }
  REQUIRE(std::filesystem::exists(dir / "annotations.jsonl.snapshot.json"));
  {
    AnnotationService svc(config(dir, 7), tiny_wav);
    CHECK(svc.replay_offset() > 0);
    CHECK(svc.replay_offset() < std::filesystem::file_size(dir / "annotations.jsonl"));
    const auto after = svc.stats(sid);
    CHECK(after.labeled == before.labeled);
    CHECK(after.plays == before.plays);
    CHECK(after.class_counts == before.class_counts);
    CHECK(svc.next_item(sid).item->plays_used == 1);
  }

  // A snapshot that claims more log than exists is ignored.
  {
    std::ifstream in(dir / "annotations.jsonl.snapshot.json");
    auto j = nlohmann::json::parse(in);
    j["log_offset"] = 1u << 30;
    std::ofstream(dir / "annotations.jsonl.snapshot.json") << j.dump();
  }
  AnnotationService svc(config(dir, 7), tiny_wav);
  CHECK(svc.replay_offset() == 0);
  CHECK(svc.stats(sid).labeled == before.labeled);
}

TEST_CASE("reliability and analytics reports from logged sessions") {
  fixtures::TempDir dir;
  std::vector<segmenter::Segment> manifest;
  std::vector<pipeline::F0Row> f0;
  const auto ids = seg_ids(40);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    manifest.push_back({ids[i], fmt::format("rec{}", i % 2), 0.0, 200.0 + 10.0 * static_cast<double>(i)});
    f0.push_back({ids[i], i % 3 ? std::optional<double>(300.0 + static_cast<double>(i)) : std::nullopt, 0.9, 10});
  }
  std::istringstream meta("recording,sex\nrec0,female\nrec1,male\n");
  AnalysisInputs inputs{manifest, f0, analytics::GroupMetadata::parse_csv(meta)};
  AnnotationService svc(config(dir), tiny_wav, inputs);

  // Empty id list means the whole manifest.
  CreateSessionRequest ra{"alice", {Phase::kGroundTruth, 0}, {{}, 4, 1}};
  CreateSessionRequest rb{"bob", {Phase::kGroundTruth, 0}, {{}, 4, 2}};
  CHECK(svc.create_session(ra).total_items == 44);
  svc.create_session(rb);
  ra.spec.segment_ids = rb.spec.segment_ids = ids;
  auto index = [](const std::string& id) { return std::stoi(id.substr(id.size() - 5)); };
  label_all(svc, "alice-ground_truth-0", ra, [&](const std::string& id) { return index(id) % 4 == 3 ? 3 : 1 + index(id) % 2; });
  label_all(svc, "bob-ground_truth-0", rb, [&](const std::string& id) { return index(id) % 8 == 7 ? 5 : 1 + index(id) % 2; });

  const auto rel = svc.reliability_report("alice", "bob");
  CHECK(rel["n_paired"] == 40);
  CHECK(rel["coder_a"] == "alice");
  CHECK(rel["kappa"]["kappa"].get<double>() < 1.0);
  CHECK(rel.contains("intra_rater"));
  CHECK(code_of([&] { svc.reliability_report("alice", "alice"); }) == ErrorCode::kInvalidArgument);

  const auto an = svc.analytics_report(analytics::Metric::kDuration, "sex");
  CHECK(an["n_consensual"] == 30);  // the 10 segments with index 3 mod 4 disagree
  CHECK(an["comparison"]["groups"].size() == 2);
  const auto f0r = svc.analytics_report(analytics::Metric::kF0, "sex", analytics::TTestVariant::kWelch);
  CHECK(f0r["comparison"]["test"] == "welch");
  CHECK(code_of([&] { svc.analytics_report(analytics::Metric::kF0, "age"); }) == ErrorCode::kNotFound);
}
