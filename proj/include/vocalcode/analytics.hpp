#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vocalcode/scheme.hpp"

namespace vocalcode::analytics {

struct DescriptiveStats {
  std::size_t n = 0;
  double total = 0.0;
  double mean = 0.0;
  double sd = 0.0;  // n-1 denominator; 0 for a single value
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Throws kEmptyData on empty input.
DescriptiveStats describe(std::span<const double> values);

/// Linear interpolation between order statistics at h = (n-1) q ("type 7").
/// `sorted` must be ascending and non-empty.
double quantile_sorted(std::span<const double> sorted, double q);

struct BoxplotStats {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  double lower_fence = 0.0;  // q1 - 1.5 iqr
  double upper_fence = 0.0;  // q3 + 1.5 iqr
  double whisker_low = 0.0;  // smallest value >= lower_fence
  double whisker_high = 0.0; // largest value <= upper_fence
  std::vector<double> outliers;  // ascending
};

BoxplotStats boxplot_stats(std::span<const double> values);

enum class TTestVariant { kPooled, kWelch };

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

/// Student (pooled variance) or Welch (Satterthwaite df) two-sample test.
/// Throws kInvalidArgument when either sample has fewer than two values.
TTestResult two_sample_t_test(std::span<const double> a, std::span<const double> b,
                              TTestVariant variant = TTestVariant::kPooled);

enum class Metric { kDuration, kF0 };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

/// One consensually labeled segment with its measurable properties.
struct SegmentObservation {
  std::string segment_id;
  std::string recording;
  scheme::AnnotationClass cls = scheme::AnnotationClass::kVoiced;
  double duration_s = 0.0;
  std::optional<double> f0_hz;
};

struct GroupSummary {
  std::string group;
  DescriptiveStats stats;
  BoxplotStats box;
};

struct GroupComparison {
  Metric metric = Metric::kDuration;
  TTestVariant variant = TTestVariant::kPooled;
  std::vector<GroupSummary> groups;  // sorted by group label
  TTestResult test;
  std::size_t excluded_class = 0;    // segments outside classes 1 and 2
  std::size_t excluded_no_f0 = 0;    // metric f0 only
  std::size_t excluded_no_group = 0;
};

/// Compares a metric between exactly two groups over class 1 and 2
/// segments. For metric f0, segments without an estimate are dropped.
GroupComparison group_compare(std::span<const SegmentObservation> segments,
                              const std::map<std::string, std::string>& group_of_segment, Metric metric,
                              TTestVariant variant = TTestVariant::kPooled);

/// Sidecar table keyed by recording id: first column the id, remaining
/// columns arbitrary fields (e.g. sex, session).
class GroupMetadata {
 public:
  static GroupMetadata load_csv(const std::filesystem::path& path);
  static GroupMetadata parse_csv(std::istream& in);

  /// Field values per recording. Throws kNotFound for an unknown field.
  std::map<std::string, std::string> field(const std::string& name) const;
  const std::vector<std::string>& fields() const { return fields_; }

 private:
  std::vector<std::string> fields_;
  std::map<std::string, std::vector<std::string>> rows_;
};

/// Maps each segment to the group of its recording; recordings without
/// metadata are left out.
std::map<std::string, std::string> groups_for_segments(std::span<const SegmentObservation> segments,
                                                       const std::map<std::string, std::string>& group_of_recording);

struct ClassRow {
  scheme::AnnotationClass cls;
  std::optional<DescriptiveStats> stats;  // duration in seconds; empty when count is 0
};

/// Per-class count and duration statistics of consensual segments.
std::vector<ClassRow> class_duration_table(std::span<const SegmentObservation> segments);

nlohmann::ordered_json to_json(const DescriptiveStats& s);
nlohmann::ordered_json to_json(const BoxplotStats& b);
nlohmann::ordered_json to_json(const TTestResult& t);
nlohmann::ordered_json to_json(const GroupComparison& g);
nlohmann::ordered_json to_json(const std::vector<ClassRow>& table);

/// Aligned text renderings for terminals.
std::string render_class_table(const std::vector<ClassRow>& table);
std::string render_comparison(const GroupComparison& g);

}  // namespace vocalcode::analytics
