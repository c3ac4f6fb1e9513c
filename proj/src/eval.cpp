#include "pagectx/eval.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pagectx/error.hpp"

namespace pagectx {

using nlohmann::json;

double macro_average(std::span<const double> f1) {
  if (f1.empty()) return 0.0;
  double s = 0.0;
  for (double v : f1) s += v;
  return s / static_cast<double>(f1.size());
}

double weighted_average(std::span<const double> f1, std::span<const std::size_t> support) {
  if (f1.size() != support.size()) throw Error("weighted average needs one support per class");
  double s = 0.0, w = 0.0;
  for (std::size_t i = 0; i < f1.size(); ++i) {
    s += f1[i] * static_cast<double>(support[i]);
    w += static_cast<double>(support[i]);
  }
  return w > 0.0 ? s / w : 0.0;
}

namespace {

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

bool has(const LabelSet& s, std::size_t c) { return std::binary_search(s.begin(), s.end(), c); }

}  // namespace

PerClassScores score(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& golds, std::size_t n_classes,
                     LabelMode mode) {
  if (preds.size() != golds.size())
    throw Error("prediction count " + std::to_string(preds.size()) + " does not match gold count " +
                std::to_string(golds.size()));
  std::vector<std::size_t> tp(n_classes, 0), predicted(n_classes, 0), support(n_classes, 0);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const auto& g = golds[i];
    if (mode == LabelMode::multiclass && (p.size() != 1 || g.size() != 1))
      throw Error("multiclass scoring needs exactly one label per page");
    for (auto c : p) {
      if (c >= n_classes) throw Error("predicted label out of range");
      predicted[c]++;
      if (has(g, c)) tp[c]++;
    }
    for (auto c : g) {
      if (c >= n_classes) throw Error("gold label out of range");
      support[c]++;
    }
    if (p == g) ++exact;
  }
  PerClassScores out;
  out.classes.resize(n_classes);
  std::vector<double> f1(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& s = out.classes[c];
    s.support = support[c];
    s.precision = predicted[c] ? static_cast<double>(tp[c]) / static_cast<double>(predicted[c]) : 0.0;
    s.recall = support[c] ? static_cast<double>(tp[c]) / static_cast<double>(support[c]) : 0.0;
    s.f1 = f1_of(s.precision, s.recall);
    f1[c] = s.f1;
  }
  out.macro_f1 = macro_average(f1);
  out.weighted_f1 = weighted_average(f1, support);
  out.accuracy = preds.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(preds.size());
  return out;
}

json PerClassScores::to_json(const TypeVocabulary& vocabulary) const {
  json per_class = json::array();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& s = classes[c];
    per_class.push_back({{"class", vocabulary.name(c)},
                         {"precision", s.precision},
                         {"recall", s.recall},
                         {"f1", s.f1},
                         {"support", s.support}});
  }
  return {{"per_class", per_class}, {"macro_f1", macro_f1}, {"weighted_f1", weighted_f1}, {"accuracy", accuracy}};
}

// ---------------------------------------------------------------------------

ContingencyTable ContingencyTable::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ContingencyTable t(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw Error("contingency table must be square");
    for (std::size_t j = 0; j < rows.size(); ++j) t.add(i, j, rows[i][j]);
  }
  return t;
}

ContingencyTable ContingencyTable::paired(const std::vector<LabelSet>& first, const std::vector<LabelSet>& second,
                                          std::size_t n_classes) {
  if (first.size() != second.size()) throw Error("paired predictions differ in length");
  ContingencyTable t(n_classes);
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i].size() != 1 || second[i].size() != 1)
      throw Error("an n x n contingency table needs single-label predictions");
    t.add(first[i].front(), second[i].front());
  }
  return t;
}

std::uint64_t ContingencyTable::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

ContingencyTable ContingencyTable::transposed() const {
  ContingencyTable t(n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) t.add(j, i, at(i, j));
  return t;
}

json ContingencyTable::to_json() const {
  json rows = json::array();
  for (std::size_t i = 0; i < n_; ++i) {
    std::vector<std::uint64_t> r(counts_.begin() + static_cast<std::ptrdiff_t>(i * n_),
                                 counts_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_));
    rows.push_back(r);
  }
  return rows;
}

double chi_square_survival(double x, double dof) {
  if (!(dof > 0.0)) throw Error("chi-square survival needs positive degrees of freedom");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

TestResult mcnemar_bowker(const ContingencyTable& table) {
  TestResult r;
  const auto n = table.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = static_cast<double>(table.at(i, j));
      const double b = static_cast<double>(table.at(j, i));
      if (a + b == 0.0) continue;
      r.statistic += (a - b) * (a - b) / (a + b);
      r.dof++;
    }
  }
  r.p_value = r.dof ? chi_square_survival(r.statistic, static_cast<double>(r.dof)) : 1.0;
  return r;
}

void check_alignment(const std::vector<PredictionTrace>& traces, const std::vector<DocumentSequence>& docs) {
  if (traces.size() != docs.size())
    throw Error("trace covers " + std::to_string(traces.size()) + " documents, expected " +
                std::to_string(docs.size()));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (traces[d].doc_id != docs[d].doc_id)
      throw Error("trace document \"" + traces[d].doc_id + "\" does not match \"" + docs[d].doc_id + "\"");
    if (traces[d].steps.size() != docs[d].pages.size())
      throw Error("trace for \"" + docs[d].doc_id + "\" has " + std::to_string(traces[d].steps.size()) +
                  " pages, expected " + std::to_string(docs[d].pages.size()));
    for (std::size_t t = 0; t < docs[d].pages.size(); ++t)
      if (traces[d].steps[t].page_index != docs[d].pages[t].page_index)
        throw Error("trace for \"" + docs[d].doc_id + "\" is out of page order");
  }
}

TraceComparison compare_traces(const std::vector<PredictionTrace>& first, const std::vector<PredictionTrace>& second,
                               const std::vector<DocumentSequence>& docs, const TypeVocabulary& vocabulary) {
  check_alignment(first, docs);
  check_alignment(second, docs);
  const auto golds = gold_labels(docs);
  const auto a = decided_labels(first);
  const auto b = decided_labels(second);
  const auto n = vocabulary.size();
  const auto mode = vocabulary.label_mode();

  TraceComparison out{ContingencyTable(0), {}, score(a, golds, n, mode), score(b, golds, n, mode), {}};
  if (mode == LabelMode::multiclass) {
    out.table = ContingencyTable::paired(a, b, n);
  } else {
    out.table = ContingencyTable(2);
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) out.table.add(has(a[i], c) ? 1 : 0, has(b[i], c) ? 1 : 0);
  }
  out.test = mcnemar_bowker(out.table);
  for (std::size_t c = 0; c < n; ++c) out.f1_delta.push_back(out.second.classes[c].f1 - out.first.classes[c].f1);
  return out;
}

json TraceComparison::to_json(const TypeVocabulary& vocabulary) const {
  return {{"first", first.to_json(vocabulary)},
          {"second", second.to_json(vocabulary)},
          {"f1_delta", f1_delta},
          {"contingency", table.to_json()},
          {"mcnemar_bowker", {{"statistic", test.statistic}, {"dof", test.dof}, {"p_value", test.p_value}}}};
}

// ---------------------------------------------------------------------------

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string pad_left(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }
std::string pad_right(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string format_score_table(const std::vector<std::pair<std::string, PerClassScores>>& rows,
                               const TypeVocabulary& vocabulary) {
  std::vector<std::string> header = {"Method"};
  for (const auto& name : vocabulary.class_names()) header.push_back(name);
  header.push_back("macro-avg");
  header.push_back("weighted-avg");

  std::vector<std::vector<std::string>> cells = {header};
  for (const auto& [method, s] : rows) {
    std::vector<std::string> r = {method};
    for (const auto& c : s.classes) r.push_back(pct(c.f1));
    r.push_back(pct(s.macro_f1));
    r.push_back(pct(s.weighted_f1));
    cells.push_back(std::move(r));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : cells)
    for (std::size_t k = 0; k < r.size(); ++k) width[k] = std::max(width[k], r[k].size());

  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t k = 0; k < cells[i].size(); ++k) {
      if (k) out << (k == 1 || k == header.size() - 2 ? " | " : "  ");
      out << (k == 0 ? pad_right(cells[i][k], width[k]) : pad_left(cells[i][k], width[k]));
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t k = 0; k < width.size(); ++k) total += width[k] + (k ? (k == 1 || k == header.size() - 2 ? 3 : 2) : 0);
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

std::string format_comparison(const TraceComparison& cmp, const std::string& first_name,
                              const std::string& second_name, const TypeVocabulary& vocabulary) {
  std::ostringstream out;
  out << format_score_table({{first_name, cmp.first}, {second_name, cmp.second}}, vocabulary);
  out << "\nF1 delta (" << second_name << " - " << first_name << "):";
  for (std::size_t c = 0; c < cmp.f1_delta.size(); ++c) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " %s %+.2f", vocabulary.name(c).c_str(), 100.0 * cmp.f1_delta[c]);
    out << buf;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "\nMcNemar-Bowker: statistic %.6g, dof %zu, p-value %.6g\n", cmp.test.statistic,
                cmp.test.dof, cmp.test.p_value);
  out << buf;
  return out.str();
}

}  // namespace pagectx
