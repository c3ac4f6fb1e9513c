#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pagectx/corpus.hpp"
#include "pagectx/recurrence.hpp"

namespace pagectx {

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold pages carrying the class
};

struct PerClassScores {
  std::vector<ClassScore> classes;
  double macro_f1 = 0.0;     // unweighted mean of per-class F1
  double weighted_f1 = 0.0;  // support-weighted mean of per-class F1
  double accuracy = 0.0;     // exact label-set match rate

  nlohmann::json to_json(const TypeVocabulary& vocabulary) const;
};

/// multiclass: confusion-matrix precision/recall/F1 per class.
/// multilabel: per-class binary decisions over page-label membership.
/// Throws when `preds` and `golds` differ in length.
PerClassScores score(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& golds, std::size_t n_classes,
                     LabelMode mode);

/// Macro and support-weighted means of given per-class F1 values. The
/// weighted mean is 0 when every support is 0.
double macro_average(std::span<const double> f1);
double weighted_average(std::span<const double> f1, std::span<const std::size_t> support);

/// B[i][j] = number of pages the first model labelled i and the second
/// model labelled j.
class ContingencyTable {
 public:
  explicit ContingencyTable(std::size_t n = 0) : n_(n), counts_(n * n, 0) {}
  /// Throws Error unless `rows` is square.
  static ContingencyTable from_rows(const std::vector<std::vector<std::uint64_t>>& rows);
  /// Cross-tabulates two aligned single-label prediction lists.
  static ContingencyTable paired(const std::vector<LabelSet>& first, const std::vector<LabelSet>& second,
                                 std::size_t n_classes);

  std::size_t size() const { return n_; }
  std::uint64_t at(std::size_t i, std::size_t j) const { return counts_.at(i * n_ + j); }
  void add(std::size_t i, std::size_t j, std::uint64_t count = 1) { counts_.at(i * n_ + j) += count; }
  std::uint64_t total() const;
  ContingencyTable transposed() const;

  nlohmann::json to_json() const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct TestResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
};

/// Upper-tail probability of the chi-square distribution, Q(dof/2, x/2).
double chi_square_survival(double x, double dof);

/// Bowker's test of symmetry. Pairs with B[i][j] + B[j][i] = 0 are skipped and
/// do not count towards the degrees of freedom; with no informative pair the
/// result is statistic 0, dof 0, p 1.
TestResult mcnemar_bowker(const ContingencyTable& table);

struct TraceComparison {
  ContingencyTable table;
  TestResult test;
  PerClassScores first, second;
  std::vector<double> f1_delta;  // second - first, per class

  nlohmann::json to_json(const TypeVocabulary& vocabulary) const;
};

/// Pairs two prediction traces over the same pages. multiclass: n x n table of
/// decided labels. multilabel: one 2x2 table over every (page, class)
/// membership decision. Throws when the traces do not cover the documents'
/// pages in the same order.
TraceComparison compare_traces(const std::vector<PredictionTrace>& first, const std::vector<PredictionTrace>& second,
                               const std::vector<DocumentSequence>& docs, const TypeVocabulary& vocabulary);

/// Checks that traces and documents describe the same pages in the same order.
void check_alignment(const std::vector<PredictionTrace>& traces, const std::vector<DocumentSequence>& docs);

/// Aligned-column table: one row per method, one column per class plus the
/// two averages, values in percent.
std::string format_score_table(const std::vector<std::pair<std::string, PerClassScores>>& rows,
                               const TypeVocabulary& vocabulary);
std::string format_comparison(const TraceComparison& cmp, const std::string& first_name,
                              const std::string& second_name, const TypeVocabulary& vocabulary);

}  // namespace pagectx
