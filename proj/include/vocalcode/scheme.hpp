#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vocalcode::scheme {

/// Layer-1 classes. Codes are the keys coders press.
enum class AnnotationClass : int {
  kVoiced = 1,
  kUnvoiced = 2,
  kFixedSignal = 3,
  kNonTarget = 4,
  kUnassignable = 5,  // infant sound not assignable to 1-3 after three listens
};

inline constexpr std::array<AnnotationClass, 5> kAllClasses = {
    AnnotationClass::kVoiced, AnnotationClass::kUnvoiced, AnnotationClass::kFixedSignal,
    AnnotationClass::kNonTarget, AnnotationClass::kUnassignable};

inline constexpr int kSchemeVersion = 1;
inline constexpr int kMaxPlays = 3;

constexpr int code(AnnotationClass c) { return static_cast<int>(c); }
/// Throws kInvalidArgument for codes outside 1..5.
AnnotationClass class_from_code(int code);
std::string_view class_name(AnnotationClass c);

enum class Phase { kFamiliarization, kConsolidation, kGroundTruth };

/// Which part of the coding process a label belongs to. set_index numbers
/// familiarization and consolidation sets from 0; it is 0 for ground truth.
struct Pass {
  Phase phase = Phase::kGroundTruth;
  int set_index = 0;
  friend bool operator==(const Pass&, const Pass&) = default;
};

std::string_view to_string(Phase phase);
Phase phase_from_string(std::string_view s);

struct QueueSpec {
  std::vector<std::string> segment_ids;
  std::size_t n_duplicates = 0;
  std::uint64_t rng_seed = 0;
  friend bool operator==(const QueueSpec&, const QueueSpec&) = default;
};

struct QueueItem {
  std::string item_id;
  std::string segment_id;
  bool is_duplicate = false;
  friend bool operator==(const QueueItem&, const QueueItem&) = default;
};

/// Appends n_duplicates re-draws of distinct segments (uniform, without
/// replacement) and shuffles the whole list. Item ids are assigned after
/// shuffling, so they say nothing about duplicate status.
std::vector<QueueItem> build_ground_truth_queue(const QueueSpec& spec);

/// Queue for familiarization/consolidation sets: the ids in shuffled order,
/// no duplicates.
std::vector<QueueItem> build_plain_queue(std::span<const std::string> segment_ids,
                                         std::uint64_t seed);

/// Draws n_sets mutually exclusive sets of set_size ids.
std::vector<std::vector<std::string>> draw_disjoint_sets(std::span<const std::string> segment_ids,
                                                         std::size_t n_sets, std::size_t set_size,
                                                         std::uint64_t seed);

struct AnnotationRecord {
  std::string queue_item_id;
  std::string segment_id;
  std::string coder_id;
  AnnotationClass cls = AnnotationClass::kUnassignable;
  int play_count = 0;
  Pass pass;
  std::string timestamp;  // ISO-8601 UTC
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// Per (coder, item) play/label state machine:
/// plays 0 -> 1 -> 2 -> 3, a label is accepted from any state with at least
/// one play, and a labeled item is closed to further plays and labels.
class AnnotationTracker {
 public:
  AnnotationTracker(std::span<const QueueItem> items, Pass pass);

  /// Returns plays remaining after this one.
  int record_play(const std::string& item_id, const std::string& coder_id);
  AnnotationRecord record_label(const std::string& item_id, const std::string& coder_id,
                                AnnotationClass cls, std::string timestamp);

  int play_count(const std::string& item_id, const std::string& coder_id) const;
  bool is_labeled(const std::string& item_id, const std::string& coder_id) const;
  const std::vector<AnnotationRecord>& records() const { return records_; }
  const Pass& pass() const { return pass_; }

 private:
  struct State {
    int plays = 0;
    bool labeled = false;
  };
  State& state_for(const std::string& item_id, const std::string& coder_id);

  Pass pass_;
  std::map<std::string, std::string> segment_of_item_;
  std::map<std::pair<std::string, std::string>, State> states_;
  std::vector<AnnotationRecord> records_;
};

struct GateResult {
  bool passed = false;
  std::optional<std::size_t> window_start;
};

/// Passes when `window` consecutive kappas are each >= threshold; reports the
/// first such window.
GateResult consolidation_gate(std::span<const double> set_kappas, double threshold = 0.80,
                              std::size_t window = 3);

using LabelMap = std::map<std::string, AnnotationClass>;

/// Segments on which both coders agree. Both maps must share one key set.
LabelMap consensus_filter(const LabelMap& labels_a, const LabelMap& labels_b);

enum class Occurrence { kFirst, kSecond };

/// Collapses records to one label per segment. kFirst keeps the first label
/// seen for each segment (ground truth); kSecond keeps only the second label
/// of segments labeled twice (intra-rater retest).
LabelMap labels_by_segment(std::span<const AnnotationRecord> records, Occurrence which);

}  // namespace vocalcode::scheme
