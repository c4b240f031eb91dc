#include "vocalcode/scheme.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/core.h>

#include "vocalcode/error.hpp"
#include "vocalcode/rng.hpp"

namespace vocalcode::scheme {

AnnotationClass class_from_code(int c) {
  if (c < 1 || c > 5) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("class code {} not in 1..5", c));
  }
  return static_cast<AnnotationClass>(c);
}

std::string_view class_name(AnnotationClass c) {
  switch (c) {
    case AnnotationClass::kVoiced: return "Voiced";
    case AnnotationClass::kUnvoiced: return "Unvoiced";
    case AnnotationClass::kFixedSignal: return "FixedSignal";
    case AnnotationClass::kNonTarget: return "NonTarget";
    case AnnotationClass::kUnassignable: return "Unassignable";
  }
  return "?";
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kFamiliarization: return "familiarization";
    case Phase::kConsolidation: return "consolidation";
    case Phase::kGroundTruth: return "ground_truth";
  }
  return "?";
}

Phase phase_from_string(std::string_view s) {
  if (s == "familiarization") return Phase::kFamiliarization;
  if (s == "consolidation") return Phase::kConsolidation;
  if (s == "ground_truth") return Phase::kGroundTruth;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown phase '{}'", s));
}

namespace {

void require_distinct(std::span<const std::string> ids) {
  std::set<std::string_view> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("segment id '{}' listed twice", id));
    }
  }
}

std::string item_id_for(std::size_t position, std::size_t total) {
  const int width = std::max<int>(5, static_cast<int>(std::to_string(total).size()));
  return fmt::format("q{:0{}d}", position, width);
}

}  // namespace

std::vector<QueueItem> build_ground_truth_queue(const QueueSpec& spec) {
  require_distinct(spec.segment_ids);
  const std::size_t n = spec.segment_ids.size();
  if (spec.n_duplicates > n) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("{} duplicates requested from {} segments", spec.n_duplicates, n));
  }
  PortableRng rng(spec.rng_seed);

  // Partial Fisher-Yates: the first n_duplicates slots become the draw.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < spec.n_duplicates; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
  }

  std::vector<QueueItem> queue;
  queue.reserve(n + spec.n_duplicates);
  for (const auto& id : spec.segment_ids) queue.push_back({"", id, false});
  for (std::size_t i = 0; i < spec.n_duplicates; ++i) {
    queue.push_back({"", spec.segment_ids[order[i]], true});
  }
  rng.shuffle(std::span<QueueItem>(queue));
  for (std::size_t i = 0; i < queue.size(); ++i) queue[i].item_id = item_id_for(i, queue.size());

  // The earlier position of a duplicated pair is the first encounter.
  std::set<std::string> seen;
  for (auto& item : queue) item.is_duplicate = !seen.insert(item.segment_id).second;
  return queue;
}

std::vector<QueueItem> build_plain_queue(std::span<const std::string> segment_ids, std::uint64_t seed) {
  QueueSpec spec;
  spec.segment_ids.assign(segment_ids.begin(), segment_ids.end());
  spec.rng_seed = seed;
  return build_ground_truth_queue(spec);
}

std::vector<std::vector<std::string>> draw_disjoint_sets(std::span<const std::string> segment_ids,
                                                         std::size_t n_sets, std::size_t set_size,
                                                         std::uint64_t seed) {
  require_distinct(segment_ids);
  if (n_sets * set_size > segment_ids.size()) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("{} sets of {} exceed {} segments", n_sets, set_size, segment_ids.size()));
  }
  std::vector<std::string> pool(segment_ids.begin(), segment_ids.end());
  PortableRng rng(seed);
  rng.shuffle(std::span<std::string>(pool));
  std::vector<std::vector<std::string>> sets(n_sets);
  for (std::size_t s = 0; s < n_sets; ++s) {
    sets[s].assign(pool.begin() + static_cast<std::ptrdiff_t>(s * set_size),
                   pool.begin() + static_cast<std::ptrdiff_t>((s + 1) * set_size));
  }
  return sets;
}

AnnotationTracker::AnnotationTracker(std::span<const QueueItem> items, Pass pass) : pass_(pass) {
  for (const auto& item : items) {
    if (!segment_of_item_.emplace(item.item_id, item.segment_id).second) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("queue item '{}' listed twice", item.item_id));
    }
  }
}

AnnotationTracker::State& AnnotationTracker::state_for(const std::string& item_id,
                                                       const std::string& coder_id) {
  if (!segment_of_item_.contains(item_id)) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown queue item '{}'", item_id));
  }
  return states_[{item_id, coder_id}];
}

int AnnotationTracker::record_play(const std::string& item_id, const std::string& coder_id) {
  State& st = state_for(item_id, coder_id);
  if (st.labeled) {
    throw Error(ErrorCode::kSequencing, fmt::format("item '{}' is already labeled", item_id));
  }
  if (st.plays >= kMaxPlays) {
    throw Error(ErrorCode::kQuotaExhausted,
                fmt::format("item '{}' has used all {} plays", item_id, kMaxPlays));
  }
  ++st.plays;
  return kMaxPlays - st.plays;
}

AnnotationRecord AnnotationTracker::record_label(const std::string& item_id, const std::string& coder_id,
                                                 AnnotationClass cls, std::string timestamp) {
  State& st = state_for(item_id, coder_id);
  if (st.labeled) {
    throw Error(ErrorCode::kDuplicateLabel,
                fmt::format("coder '{}' already labeled item '{}'", coder_id, item_id));
  }
  if (st.plays == 0) {
    throw Error(ErrorCode::kSequencing, fmt::format("item '{}' must be played before labeling", item_id));
  }
  st.labeled = true;
  AnnotationRecord rec{item_id, segment_of_item_.at(item_id), coder_id, cls, st.plays, pass_,
                       std::move(timestamp)};
  records_.push_back(rec);
  return rec;
}

int AnnotationTracker::play_count(const std::string& item_id, const std::string& coder_id) const {
  auto it = states_.find({item_id, coder_id});
  return it == states_.end() ? 0 : it->second.plays;
}

bool AnnotationTracker::is_labeled(const std::string& item_id, const std::string& coder_id) const {
  auto it = states_.find({item_id, coder_id});
  return it != states_.end() && it->second.labeled;
}

GateResult consolidation_gate(std::span<const double> set_kappas, double threshold, std::size_t window) {
  std::size_t run = 0;
  for (std::size_t i = 0; i < set_kappas.size(); ++i) {
    run = set_kappas[i] >= threshold ? run + 1 : 0;
    if (window > 0 && run == window) return {true, i + 1 - window};
  }
  return {};
}

LabelMap consensus_filter(const LabelMap& labels_a, const LabelMap& labels_b) {
  if (labels_a.size() != labels_b.size() ||
      !std::equal(labels_a.begin(), labels_a.end(), labels_b.begin(),
                  [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw Error(ErrorCode::kMismatch, "label maps cover different segment sets");
  }
  LabelMap out;
  for (const auto& [segment, cls] : labels_a) {
    if (labels_b.at(segment) == cls) out.emplace_hint(out.end(), segment, cls);
  }
  return out;
}

LabelMap labels_by_segment(std::span<const AnnotationRecord> records, Occurrence which) {
  std::map<std::string, int> seen;
  LabelMap out;
  for (const auto& r : records) {
    const int nth = ++seen[r.segment_id];
    if ((which == Occurrence::kFirst && nth == 1) || (which == Occurrence::kSecond && nth == 2)) {
      out.emplace(r.segment_id, r.cls);
    }
  }
  return out;
}

}  // namespace vocalcode::scheme
