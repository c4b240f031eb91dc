#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vocalcode/scheme.hpp"

namespace vocalcode::reliability {

using scheme::AnnotationClass;

/// K x K cross-tabulation of two coders' labels. Rows are coder A, columns
/// coder B, both indexed in the order of labels().
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<AnnotationClass> labels);
  ConfusionMatrix(std::vector<AnnotationClass> labels, std::vector<std::vector<std::uint64_t>> counts);

  std::size_t size() const { return labels_.size(); }
  const std::vector<AnnotationClass>& labels() const { return labels_; }
  std::uint64_t at(std::size_t row, std::size_t col) const { return counts_[row * size() + col]; }
  std::uint64_t& at(std::size_t row, std::size_t col) { return counts_[row * size() + col]; }
  /// Throws kInvalidArgument when the class is not one of labels().
  std::size_t index_of(AnnotationClass cls) const;
  void add(AnnotationClass a, AnnotationClass b, std::uint64_t n = 1);

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_total(std::size_t row) const;
  std::uint64_t col_total(std::size_t col) const;

  /// True when Cohen's kappa is defined: N > 0 and chance agreement < 1.
  bool usable_for_kappa() const;

  ConfusionMatrix transposed() const;
  /// Reorders rows and columns together; perm[i] is the old index placed at i.
  ConfusionMatrix permuted(std::span<const std::size_t> perm) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::vector<AnnotationClass> labels_;
  std::vector<std::uint64_t> counts_;
};

struct KappaResult {
  double kappa = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double po = 0.0;
  double pe = 0.0;
  std::uint64_t n = 0;
};

enum class VarianceEstimator {
  kLargeSample,         // po(1-po) / (N (1-pe)^2)
  kFleissCohenEveritt,  // full asymptotic variance of the non-null estimator
};

/// Five-class matrix from aligned rating sequences.
ConfusionMatrix confusion_matrix(std::span<const AnnotationClass> ratings_a,
                                 std::span<const AnnotationClass> ratings_b);
/// Same, from raw 1..5 codes. Throws kInvalidArgument on other codes.
ConfusionMatrix confusion_matrix(std::span<const int> ratings_a, std::span<const int> ratings_b);

/// Cohen's kappa with a 95% interval, clipped to [-1, 1]. Throws kDegenerate
/// for an empty matrix or when both coders used a single identical class.
KappaResult cohen_kappa(const ConfusionMatrix& matrix,
                        VarianceEstimator estimator = VarianceEstimator::kLargeSample);

/// Drops the excluded class's row and column.
ConfusionMatrix exclude_class_pairs(const ConfusionMatrix& matrix, AnnotationClass excluded);

struct AgreementReport {
  std::uint64_t n = 0;
  std::uint64_t consensual = 0;
  std::uint64_t disagreements = 0;
  double percent_agreement = 0.0;
  double percent_disagreement = 0.0;
  // Items where at least one coder used the uncertainty class (diagonal cell included).
  std::uint64_t at_least_one_uncertain = 0;
  double percent_at_least_one_uncertain = 0.0;
  std::uint64_t coder_a_uncertain = 0;
  std::uint64_t coder_b_uncertain = 0;
  std::uint64_t uncertain_overlap = 0;
  // Off-diagonal split: exactly one coder chose the uncertainty class, or neither did.
  std::uint64_t disagreements_with_uncertain = 0;
  std::uint64_t disagreements_without_uncertain = 0;
};

AgreementReport agreement_breakdown(const ConfusionMatrix& matrix, AnnotationClass uncertainty_class);

/// Pairs two label maps on their shared keys; segments rated by only one side
/// are dropped.
ConfusionMatrix paired_matrix(const scheme::LabelMap& a, const scheme::LabelMap& b);

/// Test-retest kappa over the items present in both passes. Throws
/// kEmptyData when the passes share no item.
KappaResult intra_rater_kappa(const scheme::LabelMap& pass1, const scheme::LabelMap& pass2,
                              VarianceEstimator estimator = VarianceEstimator::kLargeSample);

void write_matrix_csv(std::ostream& out, const ConfusionMatrix& matrix);
/// Reads the CSV produced by write_matrix_csv (header row of class codes,
/// then one row per class with its code in the first column).
ConfusionMatrix read_matrix_csv(std::istream& in);

nlohmann::ordered_json to_json(const KappaResult& k);
nlohmann::ordered_json to_json(const AgreementReport& r);
nlohmann::ordered_json to_json(const ConfusionMatrix& m);

}  // namespace vocalcode::reliability
