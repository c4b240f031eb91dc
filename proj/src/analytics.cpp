#include "vocalcode/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/core.h>

#include "vocalcode/error.hpp"

namespace vocalcode::analytics {
namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // n-1 denominator
};

Moments moments(std::span<const double> v) {
  Moments m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.var = v.size() > 1 ? ss / static_cast<double>(v.size() - 1) : 0.0;
  return m;
}

double two_sided_p(double t, double df) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

DescriptiveStats describe(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptyData, "cannot describe an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const Moments m = moments(sorted);
  DescriptiveStats s;
  s.n = sorted.size();
  s.total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  s.mean = m.mean;
  s.sd = std::sqrt(m.var);
  s.median = quantile_sorted(sorted, 0.5);
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::kEmptyData, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BoxplotStats boxplot_stats(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptyData, "boxplot of an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  BoxplotStats b;
  b.q1 = quantile_sorted(sorted, 0.25);
  b.median = quantile_sorted(sorted, 0.5);
  b.q3 = quantile_sorted(sorted, 0.75);
  b.iqr = b.q3 - b.q1;
  b.lower_fence = b.q1 - 1.5 * b.iqr;
  b.upper_fence = b.q3 + 1.5 * b.iqr;
  b.whisker_low = *std::find_if(sorted.begin(), sorted.end(), [&](double x) { return x >= b.lower_fence; });
  b.whisker_high = *std::find_if(sorted.rbegin(), sorted.rend(), [&](double x) { return x <= b.upper_fence; });
  for (double x : sorted) {
    if (x < b.lower_fence || x > b.upper_fence) b.outliers.push_back(x);
  }
  return b;
}

TTestResult two_sample_t_test(std::span<const double> a, std::span<const double> b, TTestVariant variant) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("t-test needs at least 2 values per sample (got {} and {})", a.size(), b.size()));
  }
  const Moments ma = moments(a), mb = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double diff = ma.mean - mb.mean;
  TTestResult r;
  double se = 0.0;
  if (variant == TTestVariant::kPooled) {
    r.df = na + nb - 2.0;
    const double pooled = ((na - 1.0) * ma.var + (nb - 1.0) * mb.var) / r.df;
    se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  } else {
    const double va = ma.var / na, vb = mb.var / nb;
    se = std::sqrt(va + vb);
    const double denom = va * va / (na - 1.0) + vb * vb / (nb - 1.0);
    r.df = denom > 0.0 ? (va + vb) * (va + vb) / denom : na + nb - 2.0;
  }
  if (se == 0.0) {
    r.t = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
  } else {
    r.t = diff / se;
  }
  r.p = r.t == 0.0 ? 1.0 : two_sided_p(r.t, r.df);
  return r;
}

std::string_view to_string(Metric m) {
  return m == Metric::kDuration ? "duration" : "f0";
}

Metric metric_from_string(std::string_view s) {
  if (s == "duration") return Metric::kDuration;
  if (s == "f0") return Metric::kF0;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown metric '{}' (duration|f0)", s));
}

GroupComparison group_compare(std::span<const SegmentObservation> segments,
                              const std::map<std::string, std::string>& group_of_segment, Metric metric,
                              TTestVariant variant) {
  GroupComparison out;
  out.metric = metric;
  out.variant = variant;
  std::map<std::string, std::vector<double>> pools;
  std::set<std::string> labels;
  for (const auto& s : segments) {
    auto g = group_of_segment.find(s.segment_id);
    if (g == group_of_segment.end()) {
      ++out.excluded_no_group;
      continue;
    }
    labels.insert(g->second);
    if (s.cls != scheme::AnnotationClass::kVoiced && s.cls != scheme::AnnotationClass::kUnvoiced) {
      ++out.excluded_class;
      continue;
    }
    if (metric == Metric::kF0) {
      if (!s.f0_hz) {
        ++out.excluded_no_f0;
        continue;
      }
      pools[g->second].push_back(*s.f0_hz);
    } else {
      pools[g->second].push_back(s.duration_s);
    }
  }
  if (labels.size() != 2) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("group comparison needs exactly two groups, found {}", labels.size()));
  }
  for (const auto& label : labels) {
    const auto& pool = pools[label];
    if (pool.empty()) {
      throw Error(ErrorCode::kEmptyData,
                  fmt::format("group '{}' has no {} values after filtering", label, to_string(metric)));
    }
    out.groups.push_back({label, describe(pool), boxplot_stats(pool)});
  }
  out.test = two_sample_t_test(pools[out.groups[0].group], pools[out.groups[1].group], variant);
  return out;
}

GroupMetadata GroupMetadata::parse_csv(std::istream& in) {
  GroupMetadata meta;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kEmptyData, "empty metadata CSV");
  auto header = split_csv(line);
  if (header.size() < 2) throw Error(ErrorCode::kInvalidArgument, "metadata CSV needs an id column and a field");
  meta.fields_.assign(header.begin() + 1, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("metadata line {} has {} columns, expected {}",
                                                           line_no, cells.size(), header.size()));
    }
    const std::string id = cells.front();
    cells.erase(cells.begin());
    if (!meta.rows_.emplace(id, std::move(cells)).second) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("recording '{}' listed twice in metadata", id));
    }
  }
  return meta;
}

GroupMetadata GroupMetadata::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open metadata {}", path.string()));
  return parse_csv(in);
}

std::map<std::string, std::string> GroupMetadata::field(const std::string& name) const {
  auto it = std::find(fields_.begin(), fields_.end(), name);
  if (it == fields_.end()) throw Error(ErrorCode::kNotFound, fmt::format("metadata has no field '{}'", name));
  const auto col = static_cast<std::size_t>(it - fields_.begin());
  std::map<std::string, std::string> out;
  for (const auto& [id, cells] : rows_) {
    if (!cells[col].empty()) out.emplace(id, cells[col]);
  }
  return out;
}

std::map<std::string, std::string> groups_for_segments(std::span<const SegmentObservation> segments,
                                                       const std::map<std::string, std::string>& group_of_recording) {
  std::map<std::string, std::string> out;
  for (const auto& s : segments) {
    auto it = group_of_recording.find(s.recording);
    if (it != group_of_recording.end()) out.emplace(s.segment_id, it->second);
  }
  return out;
}

std::vector<ClassRow> class_duration_table(std::span<const SegmentObservation> segments) {
  std::vector<ClassRow> table;
  for (auto cls : scheme::kAllClasses) {
    std::vector<double> durations;
    for (const auto& s : segments) {
      if (s.cls == cls) durations.push_back(s.duration_s);
    }
    ClassRow row{cls, std::nullopt};
    if (!durations.empty()) row.stats = describe(durations);
    table.push_back(row);
  }
  return table;
}

nlohmann::ordered_json to_json(const DescriptiveStats& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["total"] = s.total;
  j["mean"] = s.mean;
  j["sd"] = s.sd;
  j["median"] = s.median;
  j["min"] = s.min;
  j["max"] = s.max;
  return j;
}

nlohmann::ordered_json to_json(const BoxplotStats& b) {
  nlohmann::ordered_json j;
  j["q1"] = b.q1;
  j["median"] = b.median;
  j["q3"] = b.q3;
  j["iqr"] = b.iqr;
  j["lower_fence"] = b.lower_fence;
  j["upper_fence"] = b.upper_fence;
  j["whisker_low"] = b.whisker_low;
  j["whisker_high"] = b.whisker_high;
  j["outliers"] = b.outliers;
  return j;
}

nlohmann::ordered_json to_json(const TTestResult& t) {
  nlohmann::ordered_json j;
  // JSON has no infinity; a zero-variance separation reports t as null.
  j["t"] = std::isfinite(t.t) ? nlohmann::ordered_json(t.t) : nlohmann::ordered_json(nullptr);
  j["df"] = t.df;
  j["p"] = t.p;
  return j;
}

nlohmann::ordered_json to_json(const GroupComparison& g) {
  nlohmann::ordered_json j;
  j["metric"] = to_string(g.metric);
  j["test"] = g.variant == TTestVariant::kPooled ? "pooled" : "welch";
  auto& groups = j["groups"] = nlohmann::ordered_json::array();
  for (const auto& s : g.groups) {
    nlohmann::ordered_json gj;
    gj["group"] = s.group;
    gj["stats"] = to_json(s.stats);
    gj["boxplot"] = to_json(s.box);
    groups.push_back(std::move(gj));
  }
  j["t_test"] = to_json(g.test);
  j["excluded"] = {{"class", g.excluded_class}, {"no_f0", g.excluded_no_f0}, {"no_group", g.excluded_no_group}};
  return j;
}

nlohmann::ordered_json to_json(const std::vector<ClassRow>& table) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : table) {
    nlohmann::ordered_json j;
    j["class"] = scheme::code(r.cls);
    j["name"] = scheme::class_name(r.cls);
    j["count"] = r.stats ? r.stats->n : 0;
    j["total_duration_s"] = r.stats ? r.stats->total : 0.0;
    j["mean_s"] = r.stats ? nlohmann::ordered_json(r.stats->mean) : nlohmann::ordered_json(nullptr);
    j["sd_s"] = r.stats ? nlohmann::ordered_json(r.stats->sd) : nlohmann::ordered_json(nullptr);
    j["median_s"] = r.stats ? nlohmann::ordered_json(r.stats->median) : nlohmann::ordered_json(nullptr);
    rows.push_back(std::move(j));
  }
  return rows;
}

std::string render_class_table(const std::vector<ClassRow>& table) {
  std::string out = fmt::format("{:<18} {:>7} {:>14}  {}\n", "Class", "Count", "Total dur (s)",
                                "Mean (+/- SD) [Median] (s)");
  for (const auto& r : table) {
    const std::string name = fmt::format("({}) {}", scheme::code(r.cls), scheme::class_name(r.cls));
    if (!r.stats) {
      out += fmt::format("{:<18} {:>7} {:>14.2f}  -\n", name, 0, 0.0);
      continue;
    }
    out += fmt::format("{:<18} {:>7} {:>14.2f}  {:.2f} (+/- {:.2f}) [{:.2f}]\n", name, r.stats->n,
                       r.stats->total, r.stats->mean, r.stats->sd, r.stats->median);
  }
  return out;
}

std::string render_comparison(const GroupComparison& g) {
  const char* unit = g.metric == Metric::kDuration ? "s" : "Hz";
  std::string out = fmt::format("{:<12} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10}\n", "Group", "N",
                                fmt::format("Mean ({})", unit), "SD", "Min", "Max", "Median");
  for (const auto& s : g.groups) {
    out += fmt::format("{:<12} {:>7} {:>10.2f} {:>10.2f} {:>10.2f} {:>10.2f} {:>10.2f}\n", s.group, s.stats.n,
                       s.stats.mean, s.stats.sd, s.stats.min, s.stats.max, s.stats.median);
  }
  out += fmt::format("{} two-sample t-test: t = {:.4f}, df = {:.2f}, p = {:.4f}\n",
                     g.variant == TTestVariant::kPooled ? "Pooled" : "Welch", g.test.t, g.test.df, g.test.p);
  return out;
}

}  // namespace vocalcode::analytics
