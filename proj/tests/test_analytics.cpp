#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vocalcode/analytics.hpp"
#include "vocalcode/error.hpp"

using namespace vocalcode;
using namespace vocalcode::analytics;
using scheme::AnnotationClass;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kMismatch;
}

SegmentObservation obs(std::string id, std::string rec, AnnotationClass cls, double dur,
                       std::optional<double> f0 = std::nullopt) {
  return {std::move(id), std::move(rec), cls, dur, f0};
}

}  // namespace

TEST_CASE("describe") {
  const std::vector<double> v = {4, 1, 3, 2};
  const auto s = describe(v);
  CHECK(s.n == 4);
  CHECK(s.total == 10.0);
  CHECK(s.mean == 2.5);
  CHECK(s.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.median == 2.5);
  CHECK(s.min == 1.0);
  CHECK(s.max == 4.0);
  CHECK(describe(std::vector<double>{7.0}).sd == 0.0);
  CHECK(code_of([] { describe(std::vector<double>{}); }) == ErrorCode::kEmptyData);
}

TEST_CASE("type-7 quantiles") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(quantile_sorted(v, 0.25) == doctest::Approx(25.75));
  CHECK(quantile_sorted(v, 0.75) == doctest::Approx(75.25));
  CHECK(quantile_sorted(v, 0.0) == 1.0);
  CHECK(quantile_sorted(v, 1.0) == 100.0);
}

TEST_CASE("boxplot with one high outlier") {
  const std::vector<double> v = {1, 2, 3, 4, 100};
  const auto b = boxplot_stats(v);
  CHECK(b.q1 == 2.0);
  CHECK(b.median == 3.0);
  CHECK(b.q3 == 4.0);
  CHECK(b.iqr == 2.0);
  CHECK(b.lower_fence == -1.0);
  CHECK(b.upper_fence == 7.0);
  CHECK(b.whisker_low == 1.0);
  CHECK(b.whisker_high == 4.0);
  CHECK(b.outliers == std::vector<double>{100.0});
}

TEST_CASE("property: boxplot partitions the sample") {
  std::mt19937_64 gen(5);
  std::lognormal_distribution<double> d(0.0, 0.8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + gen() % 60);
    for (auto& x : v) x = d(gen);
    const auto b = boxplot_stats(v);
    std::size_t inside = 0;
    for (double x : v) inside += x >= b.whisker_low && x <= b.whisker_high;
    CHECK(inside + b.outliers.size() == v.size());
    CHECK(std::is_sorted(b.outliers.begin(), b.outliers.end()));
    for (double o : b.outliers) CHECK((o < b.lower_fence || o > b.upper_fence));
    CHECK(b.whisker_low >= b.lower_fence);
    CHECK(b.whisker_high <= b.upper_fence);
    CHECK(b.q1 <= b.median);
    CHECK(b.median <= b.q3);
  }
}

TEST_CASE("pooled t-test on shifted ranges") {
  const std::vector<double> a = {1, 2, 3, 4, 5}, b = {2, 3, 4, 5, 6};
  const auto r = two_sample_t_test(a, b);
  CHECK(r.t == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.df == 8.0);
  CHECK(std::abs(r.p - oracles::t_two_sided_p(-1.0, 8.0)) < 1e-4);
  CHECK(r.p == doctest::Approx(0.3465935).epsilon(1e-6));

  // Equal sizes and variances: Welch coincides with the pooled test.
  const auto w = two_sample_t_test(a, b, TTestVariant::kWelch);
  CHECK(w.t == doctest::Approx(r.t));
  CHECK(w.df == doctest::Approx(r.df));
  CHECK(w.p == doctest::Approx(r.p));
}

TEST_CASE("t-tests agree with the continued-fraction oracle") {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = oracles::normal_sample(gen(), 2 + gen() % 30, 0.0, 1.0 + trial % 3);
    const auto b = oracles::normal_sample(gen(), 2 + gen() % 30, 0.4, 1.0);
    const auto p = two_sample_t_test(a, b);
    const double tp = oracles::pooled_t(a, b);
    CHECK(p.t == doctest::Approx(tp).epsilon(1e-10));
    CHECK(p.df == a.size() + b.size() - 2.0);
    CHECK(std::abs(p.p - oracles::t_two_sided_p(tp, p.df)) < 1e-8);

    const double va = oracles::variance(a) / a.size(), vb = oracles::variance(b) / b.size();
    const double tw = (oracles::mean(a) - oracles::mean(b)) / std::sqrt(va + vb);
    const double dfw = (va + vb) * (va + vb) / (va * va / (a.size() - 1.0) + vb * vb / (b.size() - 1.0));
    const auto w = two_sample_t_test(a, b, TTestVariant::kWelch);
    CHECK(w.t == doctest::Approx(tw).epsilon(1e-10));
    CHECK(w.df == doctest::Approx(dfw).epsilon(1e-10));
    CHECK(std::abs(w.p - oracles::t_two_sided_p(tw, dfw)) < 1e-8);
  }
}

TEST_CASE("t-test p-values match a permutation oracle on seeded fixtures") {
  std::uint64_t seed = 1;
  for (const auto& f : oracles::permutation_fixtures()) {
    const double mc = oracles::permutation_p(f.a, f.b, 10000, seed++);
    const double p = two_sample_t_test(f.a, f.b).p;
    CAPTURE(mc);
    CAPTURE(p);
    CHECK(std::abs(mc - p) <= 0.01);
  }
}

TEST_CASE("t-test edge cases") {
  CHECK(code_of([] { two_sample_t_test(std::vector<double>{1}, std::vector<double>{1, 2}); }) ==
        ErrorCode::kInvalidArgument);
  const std::vector<double> c = {3, 3, 3};
  const auto same = two_sample_t_test(c, c);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  const auto apart = two_sample_t_test(c, std::vector<double>{4, 4});
  CHECK(std::isinf(apart.t));
  CHECK(apart.p == 0.0);
  CHECK(to_json(apart)["t"].is_null());
}

TEST_CASE("group comparison filters classes, missing f0 and ungrouped segments") {
  const std::vector<SegmentObservation> segs = {
      obs("a1", "r1", AnnotationClass::kVoiced, 0.4, 350.0),
      obs("a2", "r1", AnnotationClass::kUnvoiced, 0.5),
      obs("a3", "r1", AnnotationClass::kVoiced, 0.3, 390.0),
      obs("a4", "r1", AnnotationClass::kNonTarget, 9.0, 100.0),
      obs("b1", "r2", AnnotationClass::kVoiced, 0.2, 300.0),
      obs("b2", "r2", AnnotationClass::kUnvoiced, 0.6, 320.0),
      obs("b3", "r2", AnnotationClass::kFixedSignal, 1.0),
      obs("c1", "r3", AnnotationClass::kVoiced, 0.7, 200.0),
  };
  const auto groups = groups_for_segments(segs, {{"r1", "female"}, {"r2", "male"}});
  CHECK(groups.size() == 7);

  const auto d = group_compare(segs, groups, Metric::kDuration);
  REQUIRE(d.groups.size() == 2);
  CHECK(d.groups[0].group == "female");
  CHECK(d.groups[0].stats.n == 3);
  CHECK(d.groups[1].stats.n == 2);
  CHECK(d.excluded_class == 2);
  CHECK(d.excluded_no_group == 1);
  CHECK(d.test.t == doctest::Approx(oracles::pooled_t({0.4, 0.5, 0.3}, {0.2, 0.6})));

  const auto f = group_compare(segs, groups, Metric::kF0, TTestVariant::kWelch);
  CHECK(f.groups[0].stats.n == 2);
  CHECK(f.groups[0].stats.mean == 370.0);
  CHECK(f.excluded_no_f0 == 1);
  CHECK(f.variant == TTestVariant::kWelch);
  const auto j = to_json(f);
  CHECK(j["metric"] == "f0");
  CHECK(j["groups"][1]["group"] == "male");

  // A group whose segments all lack f0 is empty for that metric.
  const std::vector<SegmentObservation> no_f0 = {obs("x", "r1", AnnotationClass::kVoiced, 0.3),
                                                 obs("y", "r2", AnnotationClass::kVoiced, 0.3, 300.0),
                                                 obs("z", "r2", AnnotationClass::kVoiced, 0.3, 310.0)};
  const auto g2 = groups_for_segments(no_f0, {{"r1", "female"}, {"r2", "male"}});
  CHECK(code_of([&] { group_compare(no_f0, g2, Metric::kF0); }) == ErrorCode::kEmptyData);

  auto three = groups;
  three["c1"] = "other";
  CHECK(code_of([&] { group_compare(segs, three, Metric::kDuration); }) == ErrorCode::kInvalidArgument);
  CHECK(metric_from_string("duration") == Metric::kDuration);
  CHECK(code_of([] { metric_from_string("loudness"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("metadata CSV") {
  std::istringstream in("recording,sex,site\nr1,female,A\nr2,male,B\n\n");
  const auto meta = GroupMetadata::parse_csv(in);
  CHECK(meta.fields() == std::vector<std::string>{"sex", "site"});
  const std::map<std::string, std::string> sex = {{"r1", "female"}, {"r2", "male"}};
  CHECK(meta.field("sex") == sex);
  CHECK(code_of([&] { meta.field("age"); }) == ErrorCode::kNotFound);

  std::istringstream ragged("recording,sex\nr1\n");
  CHECK(code_of([&] { GroupMetadata::parse_csv(ragged); }) == ErrorCode::kInvalidArgument);
  std::istringstream twice("recording,sex\nr1,f\nr1,m\n");
  CHECK(code_of([&] { GroupMetadata::parse_csv(twice); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { GroupMetadata::load_csv("/nonexistent/meta.csv"); }) == ErrorCode::kIo);
}

TEST_CASE("per-class duration table renders one row per class") {
  const std::vector<SegmentObservation> segs = {
      obs("a", "r", AnnotationClass::kVoiced, 0.25),
      obs("b", "r", AnnotationClass::kVoiced, 0.75),
      obs("c", "r", AnnotationClass::kNonTarget, 1.5),
  };
  const auto table = class_duration_table(segs);
  REQUIRE(table.size() == 5);
  CHECK(table[0].stats->n == 2);
  CHECK(table[0].stats->total == 1.0);
  CHECK_FALSE(table[1].stats.has_value());

  const auto text = render_class_table(table);
  std::istringstream lines(text);
  std::vector<std::string> rows;
  for (std::string l; std::getline(lines, l);) rows.push_back(l);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].rfind("Class", 0) == 0);
  CHECK(rows[1].rfind("(1) Voiced", 0) == 0);
  CHECK(rows[1].find("0.50 (+/- 0.35) [0.50]") != std::string::npos);
  CHECK(rows[2].rfind("(2) Unvoiced", 0) == 0);
  CHECK(rows[2].back() == '-');
  CHECK(rows[4].find("1.50 (+/- 0.00) [1.50]") != std::string::npos);
  CHECK(rows[5].rfind("(5) Unassignable", 0) == 0);

  const auto j = to_json(table);
  CHECK(j.size() == 5);
  CHECK(j[0]["class"] == 1);

  const std::vector<SegmentObservation> two = {obs("a", "r1", AnnotationClass::kVoiced, 0.2),
                                               obs("b", "r1", AnnotationClass::kVoiced, 0.4),
                                               obs("c", "r2", AnnotationClass::kVoiced, 0.3),
                                               obs("d", "r2", AnnotationClass::kVoiced, 0.5)};
  const auto cmp = render_comparison(
      group_compare(two, groups_for_segments(two, {{"r1", "f"}, {"r2", "m"}}), Metric::kDuration));
  CHECK(cmp.rfind("Group", 0) == 0);
  CHECK(cmp.find("Mean (s)") != std::string::npos);
  CHECK(cmp.find("Pooled two-sample t-test: t = -0.7071, df = 2.00, p = ") != std::string::npos);
}
