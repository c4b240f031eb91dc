#include "vocalcode/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/core.h>

#include "vocalcode/error.hpp"

namespace vocalcode::reliability {
namespace {

constexpr double kZ95 = 1.96;

std::vector<AnnotationClass> all_classes() {
  return {scheme::kAllClasses.begin(), scheme::kAllClasses.end()};
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::vector<AnnotationClass> labels)
    : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    for (std::size_t j = i + 1; j < labels_.size(); ++j) {
      if (labels_[i] == labels_[j]) {
        throw Error(ErrorCode::kInvalidArgument, "confusion matrix labels must be distinct");
      }
    }
  }
}

ConfusionMatrix::ConfusionMatrix(std::vector<AnnotationClass> labels,
                                 std::vector<std::vector<std::uint64_t>> counts)
    : ConfusionMatrix(std::move(labels)) {
  if (counts.size() != size()) {
    throw Error(ErrorCode::kMismatch, fmt::format("expected {} rows, got {}", size(), counts.size()));
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (counts[i].size() != size()) {
      throw Error(ErrorCode::kMismatch, fmt::format("row {} has {} columns", i, counts[i].size()));
    }
    std::copy(counts[i].begin(), counts[i].end(), counts_.begin() + static_cast<std::ptrdiff_t>(i * size()));
  }
}

std::size_t ConfusionMatrix::index_of(AnnotationClass cls) const {
  auto it = std::find(labels_.begin(), labels_.end(), cls);
  if (it == labels_.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("class {} is not in this matrix", scheme::code(cls)));
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

void ConfusionMatrix::add(AnnotationClass a, AnnotationClass b, std::uint64_t n) {
  at(index_of(a), index_of(b)) += n;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < size(); ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t row) const {
  std::uint64_t t = 0;
  for (std::size_t j = 0; j < size(); ++j) t += at(row, j);
  return t;
}

std::uint64_t ConfusionMatrix::col_total(std::size_t col) const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < size(); ++i) t += at(i, col);
  return t;
}

bool ConfusionMatrix::usable_for_kappa() const {
  const std::uint64_t n = total();
  if (n == 0) return false;
  // pe == 1 exactly when one class holds every row and every column.
  for (std::size_t i = 0; i < size(); ++i) {
    if (row_total(i) == n && col_total(i) == n) return false;
  }
  return true;
}

ConfusionMatrix ConfusionMatrix::transposed() const {
  ConfusionMatrix t(labels_);
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j) t.at(j, i) = at(i, j);
  return t;
}

ConfusionMatrix ConfusionMatrix::permuted(std::span<const std::size_t> perm) const {
  if (perm.size() != size()) throw Error(ErrorCode::kMismatch, "permutation size mismatch");
  std::vector<AnnotationClass> labels(size());
  for (std::size_t i = 0; i < size(); ++i) labels[i] = labels_.at(perm[i]);
  ConfusionMatrix p(std::move(labels));
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j) p.at(i, j) = at(perm[i], perm[j]);
  return p;
}

ConfusionMatrix confusion_matrix(std::span<const AnnotationClass> ratings_a,
                                 std::span<const AnnotationClass> ratings_b) {
  if (ratings_a.size() != ratings_b.size()) {
    throw Error(ErrorCode::kMismatch,
                fmt::format("rating sequences differ in length ({} vs {})", ratings_a.size(),
                            ratings_b.size()));
  }
  ConfusionMatrix m(all_classes());
  for (std::size_t i = 0; i < ratings_a.size(); ++i) m.add(ratings_a[i], ratings_b[i]);
  return m;
}

ConfusionMatrix confusion_matrix(std::span<const int> ratings_a, std::span<const int> ratings_b) {
  if (ratings_a.size() != ratings_b.size()) {
    throw Error(ErrorCode::kMismatch,
                fmt::format("rating sequences differ in length ({} vs {})", ratings_a.size(),
                            ratings_b.size()));
  }
  std::vector<AnnotationClass> a, b;
  a.reserve(ratings_a.size());
  b.reserve(ratings_b.size());
  for (int c : ratings_a) a.push_back(scheme::class_from_code(c));
  for (int c : ratings_b) b.push_back(scheme::class_from_code(c));
  return confusion_matrix(std::span<const AnnotationClass>(a), std::span<const AnnotationClass>(b));
}

KappaResult cohen_kappa(const ConfusionMatrix& matrix, VarianceEstimator estimator) {
  const std::uint64_t total = matrix.total();
  if (total == 0) throw Error(ErrorCode::kDegenerate, "kappa undefined for an empty matrix");
  if (!matrix.usable_for_kappa()) {
    throw Error(ErrorCode::kDegenerate, "kappa undefined: both coders used one identical class");
  }
  const double n = static_cast<double>(total);
  const std::size_t k = matrix.size();
  std::vector<double> row(k), col(k);
  for (std::size_t i = 0; i < k; ++i) {
    row[i] = static_cast<double>(matrix.row_total(i)) / n;
    col[i] = static_cast<double>(matrix.col_total(i)) / n;
  }
  KappaResult r;
  r.n = total;
  r.po = static_cast<double>(matrix.trace()) / n;
  for (std::size_t i = 0; i < k; ++i) r.pe += row[i] * col[i];
  r.kappa = (r.po - r.pe) / (1.0 - r.pe);

  double variance = 0.0;
  if (estimator == VarianceEstimator::kLargeSample) {
    variance = r.po * (1.0 - r.po) / (n * (1.0 - r.pe) * (1.0 - r.pe));
  } else {
    const double kap = r.kappa;
    double diag = 0.0, off = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double p = static_cast<double>(matrix.at(i, j)) / n;
        if (i == j) {
          const double t = 1.0 - (row[i] + col[i]) * (1.0 - kap);
          diag += p * t * t;
        } else {
          const double t = col[i] + row[j];
          off += p * t * t;
        }
      }
    }
    const double tail = kap - r.pe * (1.0 - kap);
    variance = (diag + (1.0 - kap) * (1.0 - kap) * off - tail * tail) / (n * (1.0 - r.pe) * (1.0 - r.pe));
  }
  r.se = std::sqrt(std::max(0.0, variance));
  r.ci_low = std::clamp(r.kappa - kZ95 * r.se, -1.0, 1.0);
  r.ci_high = std::clamp(r.kappa + kZ95 * r.se, -1.0, 1.0);
  return r;
}

ConfusionMatrix exclude_class_pairs(const ConfusionMatrix& matrix, AnnotationClass excluded) {
  const std::size_t drop = matrix.index_of(excluded);
  std::vector<AnnotationClass> labels;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    if (i == drop) continue;
    labels.push_back(matrix.labels()[i]);
    keep.push_back(i);
  }
  ConfusionMatrix out(std::move(labels));
  for (std::size_t i = 0; i < keep.size(); ++i)
    for (std::size_t j = 0; j < keep.size(); ++j) out.at(i, j) = matrix.at(keep[i], keep[j]);
  return out;
}

AgreementReport agreement_breakdown(const ConfusionMatrix& matrix, AnnotationClass uncertainty_class) {
  const std::size_t u = matrix.index_of(uncertainty_class);
  AgreementReport r;
  r.n = matrix.total();
  r.consensual = matrix.trace();
  r.disagreements = r.n - r.consensual;
  r.coder_a_uncertain = matrix.row_total(u);
  r.coder_b_uncertain = matrix.col_total(u);
  r.uncertain_overlap = matrix.at(u, u);
  r.at_least_one_uncertain = r.coder_a_uncertain + r.coder_b_uncertain - r.uncertain_overlap;
  r.disagreements_with_uncertain = r.at_least_one_uncertain - r.uncertain_overlap;
  r.disagreements_without_uncertain = r.disagreements - r.disagreements_with_uncertain;
  if (r.n > 0) {
    const double n = static_cast<double>(r.n);
    r.percent_agreement = 100.0 * static_cast<double>(r.consensual) / n;
    r.percent_disagreement = 100.0 * static_cast<double>(r.disagreements) / n;
    r.percent_at_least_one_uncertain = 100.0 * static_cast<double>(r.at_least_one_uncertain) / n;
  }
  return r;
}

ConfusionMatrix paired_matrix(const scheme::LabelMap& a, const scheme::LabelMap& b) {
  ConfusionMatrix m(all_classes());
  for (const auto& [segment, cls] : a) {
    auto it = b.find(segment);
    if (it != b.end()) m.add(cls, it->second);
  }
  return m;
}

KappaResult intra_rater_kappa(const scheme::LabelMap& pass1, const scheme::LabelMap& pass2,
                              VarianceEstimator estimator) {
  const ConfusionMatrix m = paired_matrix(pass1, pass2);
  if (m.total() == 0) throw Error(ErrorCode::kEmptyData, "no item was rated in both passes");
  return cohen_kappa(m, estimator);
}

void write_matrix_csv(std::ostream& out, const ConfusionMatrix& matrix) {
  out << "a\\b";
  for (auto c : matrix.labels()) out << ',' << scheme::code(c);
  out << '\n';
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << scheme::code(matrix.labels()[i]);
    for (std::size_t j = 0; j < matrix.size(); ++j) out << ',' << matrix.at(i, j);
    out << '\n';
  }
}

ConfusionMatrix read_matrix_csv(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kEmptyData, "empty matrix CSV");
  const auto header = split(line);
  std::vector<AnnotationClass> labels;
  try {
    for (std::size_t i = 1; i < header.size(); ++i) labels.push_back(scheme::class_from_code(std::stoi(header[i])));
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kInvalidArgument, "matrix CSV header must list class codes");
  }
  std::vector<std::vector<std::uint64_t>> counts;
  std::vector<AnnotationClass> row_labels;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != labels.size() + 1) {
      throw Error(ErrorCode::kMismatch, "matrix CSV row width does not match header");
    }
    std::vector<std::uint64_t> row;
    try {
      row_labels.push_back(scheme::class_from_code(std::stoi(cells[0])));
      for (std::size_t j = 1; j < cells.size(); ++j) row.push_back(std::stoull(cells[j]));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kInvalidArgument, "matrix CSV holds a non-numeric cell");
    }
    counts.push_back(std::move(row));
  }
  if (row_labels != labels) throw Error(ErrorCode::kMismatch, "matrix CSV row labels differ from columns");
  return ConfusionMatrix(std::move(labels), std::move(counts));
}

nlohmann::ordered_json to_json(const KappaResult& k) {
  nlohmann::ordered_json j;
  j["kappa"] = k.kappa;
  j["se"] = k.se;
  j["ci_low"] = k.ci_low;
  j["ci_high"] = k.ci_high;
  j["po"] = k.po;
  j["pe"] = k.pe;
  j["n"] = k.n;
  return j;
}

nlohmann::ordered_json to_json(const AgreementReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["consensual"] = r.consensual;
  j["percent_agreement"] = r.percent_agreement;
  j["disagreements"] = r.disagreements;
  j["percent_disagreement"] = r.percent_disagreement;
  j["at_least_one_uncertain"] = r.at_least_one_uncertain;
  j["percent_at_least_one_uncertain"] = r.percent_at_least_one_uncertain;
  j["coder_a_uncertain"] = r.coder_a_uncertain;
  j["coder_b_uncertain"] = r.coder_b_uncertain;
  j["uncertain_overlap"] = r.uncertain_overlap;
  j["disagreements_with_uncertain"] = r.disagreements_with_uncertain;
  j["disagreements_without_uncertain"] = r.disagreements_without_uncertain;
  // A column total of the uncertainty class is easy to misread as a count of
  // disagreements; say so whenever the two numbers differ.
  if (r.coder_b_uncertain != r.disagreements_with_uncertain ||
      r.coder_a_uncertain != r.disagreements_with_uncertain) {
    j["note"] = fmt::format(
        "disagreements involving the uncertainty class = {} (matrix-derived); coder totals {} / {} "
        "include the {} agreed items",
        r.disagreements_with_uncertain, r.coder_a_uncertain, r.coder_b_uncertain, r.uncertain_overlap);
  }
  return j;
}

nlohmann::ordered_json to_json(const ConfusionMatrix& m) {
  nlohmann::ordered_json j;
  auto& labels = j["labels"] = nlohmann::ordered_json::array();
  for (auto c : m.labels()) labels.push_back(scheme::code(c));
  auto& rows = j["counts"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t j2 = 0; j2 < m.size(); ++j2) row.push_back(m.at(i, j2));
    rows.push_back(std::move(row));
  }
  return j;
}

}  // namespace vocalcode::reliability
