#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "vocalcode/error.hpp"
#include "vocalcode/reliability.hpp"
#include "vocalcode/rng.hpp"

using namespace vocalcode;
using namespace vocalcode::reliability;
using scheme::AnnotationClass;
using scheme::kAllClasses;

namespace {

const std::vector<AnnotationClass> kFive(kAllClasses.begin(), kAllClasses.end());

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kMismatch;
}

// Percentile bootstrap over rating pairs.
std::pair<double, double> bootstrap_ci(const ConfusionMatrix& m, int replicates, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) pairs.insert(pairs.end(), m.at(i, j), {i, j});
  PortableRng rng(seed);
  std::vector<double> kappas;
  const std::size_t k = m.size();
  std::vector<double> cells(k * k);
  for (int r = 0; r < replicates; ++r) {
    std::fill(cells.begin(), cells.end(), 0.0);
    for (std::size_t n = 0; n < pairs.size(); ++n) {
      const auto& [i, j] = pairs[rng.below(pairs.size())];
      cells[i * k + j] += 1.0;
    }
    const double N = static_cast<double>(pairs.size());
    double po = 0.0, pe = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double row = 0.0, col = 0.0;
      for (std::size_t j = 0; j < k; ++j) row += cells[i * k + j], col += cells[j * k + i];
      po += cells[i * k + i] / N;
      pe += row * col / (N * N);
    }
    kappas.push_back((po - pe) / (1.0 - pe));
  }
  std::sort(kappas.begin(), kappas.end());
  auto at = [&](double q) { return kappas[static_cast<std::size_t>(q * (kappas.size() - 1))]; };
  return {at(0.025), at(0.975)};
}

ConfusionMatrix random_matrix(std::mt19937_64& gen, std::size_t k) {
  std::vector<std::vector<std::uint64_t>> counts(k, std::vector<std::uint64_t>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) counts[i][j] = gen() % (i == j ? 200 : 40);
  counts[0][0] += 1;
  counts[k - 1][k - 2] += 1;  // never a single-class matrix
  return {std::vector<AnnotationClass>(kFive.begin(), kFive.begin() + static_cast<std::ptrdiff_t>(k)), counts};
}

}  // namespace

TEST_CASE("cross-tabulation") {
  const std::vector<int> a = {1, 2}, b = {1, 2};
  const auto m = confusion_matrix(a, b);
  CHECK(m.at(0, 0) == 1);
  CHECK(m.at(1, 1) == 1);
  CHECK(m.total() == 2);
  CHECK(m.trace() == 2);

  const std::vector<int> c = {1, 1, 4}, d = {1, 5, 4};
  const auto m2 = confusion_matrix(c, d);
  CHECK(m2.at(0, 0) == 1);
  CHECK(m2.at(0, 4) == 1);
  CHECK(m2.at(3, 3) == 1);
  CHECK(m2.total() == 3);

  const auto empty = confusion_matrix(std::vector<int>{}, std::vector<int>{});
  CHECK(empty.total() == 0);
  CHECK_FALSE(empty.usable_for_kappa());

  CHECK(code_of([] { confusion_matrix(std::vector<int>{1}, std::vector<int>{1, 2}); }) == ErrorCode::kMismatch);
  CHECK(code_of([] { confusion_matrix(std::vector<int>{1}, std::vector<int>{7}); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("reference five-class matrix") {
  const auto m = fixtures::reference_matrix();
  CHECK(m.total() == 9305);
  CHECK(m.trace() == 7670);
  const std::uint64_t rows[] = {3155, 28, 236, 5158, 728};
  const std::uint64_t cols[] = {2780, 39, 205, 5141, 1140};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(m.row_total(i) == rows[i]);
    CHECK(m.col_total(i) == cols[i]);
  }

  // Frozen from an independent closed-form evaluation of the matrix.
  const auto k = cohen_kappa(m);
  CHECK(k.n == 9305);
  CHECK(k.po == doctest::Approx(0.824288017195).epsilon(1e-10));
  CHECK(k.pe == doctest::Approx(0.417721256563).epsilon(1e-10));
  CHECK(k.kappa == doctest::Approx(0.698233904663).epsilon(1e-10));
  CHECK(k.se == doctest::Approx(0.00677565146614).epsilon(1e-9));
  CHECK(k.ci_low == doctest::Approx(0.684953627789).epsilon(1e-9));
  CHECK(k.ci_high == doctest::Approx(0.711514181536).epsilon(1e-9));

  const auto f = cohen_kappa(m, VarianceEstimator::kFleissCohenEveritt);
  CHECK(f.kappa == k.kappa);
  CHECK(f.se == doctest::Approx(0.0062123624034).epsilon(1e-9));
  CHECK(f.ci_low == doctest::Approx(0.686057674352).epsilon(1e-9));
}

TEST_CASE("excluding class 5") {
  const auto reduced = exclude_class_pairs(fixtures::reference_matrix(), AnnotationClass::kUnassignable);
  CHECK(reduced.size() == 4);
  CHECK(reduced.total() == 7703);
  const auto k = cohen_kappa(reduced);
  CHECK(k.kappa == doctest::Approx(0.920617128869).epsilon(1e-10));
  CHECK(k.se == doctest::Approx(0.0045008492227).epsilon(1e-9));
  CHECK(k.ci_low == doctest::Approx(0.911795464392).epsilon(1e-9));
  CHECK(k.ci_high == doctest::Approx(0.929438793345).epsilon(1e-9));
  CHECK(cohen_kappa(reduced, VarianceEstimator::kFleissCohenEveritt).se ==
        doctest::Approx(0.00443125024523).epsilon(1e-9));

  // Empty class-5 row and column: counts unchanged.
  ConfusionMatrix m(kFive);
  m.add(AnnotationClass::kVoiced, AnnotationClass::kVoiced, 4);
  m.add(AnnotationClass::kVoiced, AnnotationClass::kNonTarget, 2);
  const auto r = exclude_class_pairs(m, AnnotationClass::kUnassignable);
  CHECK(r.total() == m.total());
  CHECK(r.at(0, 3) == 2);

  // 2x2 reduced to 1x1 leaves kappa undefined.
  ConfusionMatrix two({AnnotationClass::kVoiced, AnnotationClass::kUnvoiced}, {{5, 1}, {2, 7}});
  const auto one = exclude_class_pairs(two, AnnotationClass::kUnvoiced);
  CHECK(one.size() == 1);
  CHECK_FALSE(one.usable_for_kappa());
  CHECK(code_of([&] { cohen_kappa(one); }) == ErrorCode::kDegenerate);
  CHECK(code_of([&] { exclude_class_pairs(two, AnnotationClass::kNonTarget); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("kappa closed forms") {
  const ConfusionMatrix diag({AnnotationClass::kVoiced, AnnotationClass::kUnvoiced}, {{10, 0}, {0, 10}});
  const auto d = cohen_kappa(diag);
  CHECK(d.kappa == 1.0);
  CHECK(d.se == 0.0);
  CHECK(d.ci_high == 1.0);

  const ConfusionMatrix indep({AnnotationClass::kVoiced, AnnotationClass::kUnvoiced}, {{25, 25}, {25, 25}});
  const auto i = cohen_kappa(indep);
  CHECK(i.po == 0.5);
  CHECK(i.pe == 0.5);
  CHECK(i.kappa == 0.0);
  CHECK(i.ci_low <= 0.0);
  CHECK(i.ci_high >= 0.0);

  CHECK(code_of([] { cohen_kappa(ConfusionMatrix(kFive)); }) == ErrorCode::kDegenerate);
}

TEST_CASE("interval is clipped to [-1, 1]") {
  // Tiny sample with near-perfect disagreement: the raw interval spills below -1.
  const ConfusionMatrix m({AnnotationClass::kVoiced, AnnotationClass::kUnvoiced}, {{0, 2}, {2, 0}});
  const auto k = cohen_kappa(m);
  CHECK(k.kappa == -1.0);
  CHECK(k.ci_low >= -1.0);
  CHECK(k.ci_high <= 1.0);
  CHECK(k.ci_low <= k.kappa);
}

TEST_CASE("agreement breakdown of the reference matrix") {
  const auto r = agreement_breakdown(fixtures::reference_matrix(), AnnotationClass::kUnassignable);
  CHECK(r.n == 9305);
  CHECK(r.consensual == 7670);
  CHECK(r.disagreements == 1635);
  CHECK(r.consensual + r.disagreements == r.n);
  CHECK(r.percent_agreement == doctest::Approx(82.43).epsilon(1e-3));
  CHECK(r.percent_disagreement == doctest::Approx(17.57).epsilon(1e-3));
  CHECK(r.at_least_one_uncertain == 1602);
  CHECK(r.percent_at_least_one_uncertain == doctest::Approx(17.22).epsilon(1e-3));
  CHECK(r.coder_a_uncertain == 728);
  CHECK(r.coder_b_uncertain == 1140);
  CHECK(r.uncertain_overlap == 266);
  // Counted from the cells: 1602 - 266 off-diagonal, the rest without class 5.
  CHECK(r.disagreements_with_uncertain == 1336);
  CHECK(r.disagreements_without_uncertain == 299);
}

TEST_CASE("agreement breakdown edge cases") {
  const ConfusionMatrix diag(kFive, {{3, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 2, 0}, {0, 0, 0, 0, 1}});
  const auto d = agreement_breakdown(diag, AnnotationClass::kUnassignable);
  CHECK(d.disagreements == 0);
  CHECK(d.percent_agreement == 100.0);

  ConfusionMatrix one(kFive);
  one.add(AnnotationClass::kNonTarget, AnnotationClass::kUnassignable);
  const auto o = agreement_breakdown(one, AnnotationClass::kUnassignable);
  CHECK(o.disagreements_with_uncertain == 1);
  CHECK(o.at_least_one_uncertain == 1);
}

TEST_CASE("report JSON flags inconsistent disagreement figures") {
  const auto j = to_json(agreement_breakdown(fixtures::reference_matrix(), AnnotationClass::kUnassignable));
  CHECK(j["disagreements_with_uncertain"] == 1336);
  CHECK(j.contains("note"));
  const auto jm = to_json(fixtures::reference_matrix());
  CHECK(jm["counts"][4][4] == 266);
  CHECK(jm["labels"][0] == 1);
}

TEST_CASE("intra-rater kappa") {
  scheme::LabelMap p1, p2;
  for (int i = 0; i < 200; ++i) {
    const auto id = "s" + std::to_string(i);
    p1[id] = i < 100 ? AnnotationClass::kVoiced : AnnotationClass::kUnvoiced;
    p2[id] = p1[id];
  }
  CHECK(intra_rater_kappa(p1, p2).kappa == 1.0);

  // Flip 10 of each class: po = 0.9, pe = 0.5, kappa = 0.8.
  for (int i = 0; i < 10; ++i) {
    p2["s" + std::to_string(i)] = AnnotationClass::kUnvoiced;
    p2["s" + std::to_string(100 + i)] = AnnotationClass::kVoiced;
  }
  const auto k = intra_rater_kappa(p1, p2);
  CHECK(k.po == doctest::Approx(0.9));
  CHECK(k.pe == doctest::Approx(0.5));
  CHECK(k.kappa == doctest::Approx(0.8));

  // Only 92 items were retested.
  scheme::LabelMap partial;
  for (int i = 0; i < 92; ++i) partial["s" + std::to_string(i * 2)] = p1["s" + std::to_string(i * 2)];
  CHECK(intra_rater_kappa(p1, partial).n == 92);
  CHECK(code_of([&] { intra_rater_kappa(p1, {}); }) == ErrorCode::kEmptyData);
}

TEST_CASE("paired matrix drops unmatched segments") {
  const scheme::LabelMap a = {{"x", AnnotationClass::kVoiced}, {"y", AnnotationClass::kNonTarget}};
  const scheme::LabelMap b = {{"y", AnnotationClass::kUnassignable}, {"z", AnnotationClass::kVoiced}};
  const auto m = paired_matrix(a, b);
  CHECK(m.total() == 1);
  CHECK(m.at(3, 4) == 1);
}

TEST_CASE("matrix CSV round trip") {
  std::stringstream s;
  write_matrix_csv(s, fixtures::reference_matrix());
  CHECK(s.str().rfind("a\\b,1,2,3,4,5\n1,2565,2,54,131,403\n", 0) == 0);
  CHECK(read_matrix_csv(s) == fixtures::reference_matrix());
  std::stringstream bad("a\\b,1,2\n1,3\n");
  CHECK_THROWS_AS(read_matrix_csv(bad), Error);
}

TEST_CASE("property: permutation and transpose invariance, trace + off-diagonal = N") {
  std::mt19937_64 gen(31337);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + gen() % 4;
    const auto m = random_matrix(gen, k);
    const auto base = cohen_kappa(m);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    CHECK(cohen_kappa(m.permuted(perm)).kappa == doctest::Approx(base.kappa).epsilon(1e-12));
    const auto t = cohen_kappa(m.transposed());
    CHECK(t.kappa == doctest::Approx(base.kappa).epsilon(1e-12));
    CHECK(t.se == doctest::Approx(base.se).epsilon(1e-12));
    std::uint64_t off = 0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) off += i == j ? 0 : m.at(i, j);
    CHECK(m.trace() + off == m.total());
    CHECK(base.ci_low <= base.kappa);
    CHECK(base.kappa <= base.ci_high);
  }
}

TEST_CASE("bootstrap interval agrees with the asymptotic one within 0.01") {
  const auto m = fixtures::reference_matrix();
  const auto k = cohen_kappa(m);
  const auto [lo, hi] = bootstrap_ci(m, 2000, 11);
  CHECK(std::abs(lo - k.ci_low) <= 0.01);
  CHECK(std::abs(hi - k.ci_high) <= 0.01);

  const auto r = exclude_class_pairs(m, AnnotationClass::kUnassignable);
  const auto kr = cohen_kappa(r);
  const auto [lo2, hi2] = bootstrap_ci(r, 2000, 12);
  CHECK(std::abs(lo2 - kr.ci_low) <= 0.01);
  CHECK(std::abs(hi2 - kr.ci_high) <= 0.01);
}
