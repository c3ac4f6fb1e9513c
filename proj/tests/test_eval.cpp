#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "pagectx/error.hpp"
#include "pagectx/eval.hpp"
#include "pagectx/random.hpp"
#include "support.hpp"

using namespace pagectx;

namespace {

// Bowker statistic written directly from its definition.
std::pair<double, std::size_t> bowker_reference(const std::vector<std::vector<std::uint64_t>>& b) {
  double stat = 0.0;
  std::size_t dof = 0;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = i + 1; j < b.size(); ++j) {
      const double s = static_cast<double>(b[i][j] + b[j][i]);
      if (s == 0) continue;
      const double d = static_cast<double>(b[i][j]) - static_cast<double>(b[j][i]);
      stat += d * d / s;
      ++dof;
    }
  return {stat, dof};
}

std::vector<PredictionTrace> traces_from(const std::vector<DocumentSequence>& docs,
                                         const std::vector<std::vector<std::size_t>>& labels) {
  std::vector<PredictionTrace> out;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    PredictionTrace t{docs[d].doc_id, {}};
    for (std::size_t p = 0; p < docs[d].size(); ++p) {
      TraceStep s;
      s.page_index = p;
      s.scores = Eigen::VectorXd::Zero(3);
      s.labels = {labels[d][p]};
      t.steps.push_back(s);
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("aggregates reproduce the published table row") {
  const std::vector<double> f1 = {90.71, 73.42, 64.33, 97.89, 83.54, 87.63};
  const std::vector<std::size_t> support = {273, 1841, 198, 85408, 6331, 1475};
  CHECK(std::abs(macro_average(f1) - 82.92) <= 0.005);
  CHECK(std::abs(weighted_average(f1, support) - 96.22) <= 0.005);

  const std::vector<std::size_t> equal(6, 7);
  CHECK(weighted_average(f1, equal) == doctest::Approx(macro_average(f1)).epsilon(1e-15));
  const std::vector<std::size_t> zero(6, 0);
  CHECK(weighted_average(f1, zero) == 0.0);
}

TEST_CASE("per-class scores") {
  SUBCASE("perfect predictions") {
    std::vector<LabelSet> g = {{0}, {1}, {2}, {1}};
    auto s = score(g, g, 3, LabelMode::multiclass);
    CHECK(s.macro_f1 == 1.0);
    CHECK(s.weighted_f1 == 1.0);
    CHECK(s.accuracy == 1.0);
    for (const auto& c : s.classes) CHECK(c.f1 == 1.0);
  }

  SUBCASE("random cases against naive counting") {
    Rng rng(19);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.below(4);
      const std::size_t pages = 1 + rng.below(40);
      std::vector<LabelSet> preds, golds;
      for (std::size_t i = 0; i < pages; ++i) {
        preds.push_back({rng.below(n)});
        golds.push_back({rng.below(n)});
      }
      auto s = score(preds, golds, n, LabelMode::multiclass);
      double macro = 0.0, weighted = 0.0;
      std::size_t correct = 0;
      for (std::size_t c = 0; c < n; ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pages; ++i) {
          const bool p = preds[i][0] == c, g = golds[i][0] == c;
          tp += p && g;
          fp += p && !g;
          fn += !p && g;
        }
        const double prec = tp + fp ? double(tp) / double(tp + fp) : 0.0;
        const double rec = tp + fn ? double(tp) / double(tp + fn) : 0.0;
        const double f = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        CHECK(s.classes[c].precision == doctest::Approx(prec).epsilon(1e-14));
        CHECK(s.classes[c].recall == doctest::Approx(rec).epsilon(1e-14));
        CHECK(s.classes[c].f1 == doctest::Approx(f).epsilon(1e-14));
        CHECK(s.classes[c].support == tp + fn);
        macro += f / static_cast<double>(n);
        weighted += f * static_cast<double>(tp + fn) / static_cast<double>(pages);
      }
      for (std::size_t i = 0; i < pages; ++i) correct += preds[i] == golds[i];
      CHECK(s.macro_f1 == doctest::Approx(macro).epsilon(1e-13));
      CHECK(s.weighted_f1 == doctest::Approx(weighted).epsilon(1e-13));
      CHECK(s.accuracy == doctest::Approx(double(correct) / double(pages)).epsilon(1e-14));

      double lo = 1.0, hi = 0.0;
      for (const auto& c : s.classes) {
        lo = std::min(lo, c.f1);
        hi = std::max(hi, c.f1);
      }
      CHECK(s.macro_f1 >= lo - 1e-15);
      CHECK(s.macro_f1 <= hi + 1e-15);
      CHECK(s.weighted_f1 >= lo - 1e-15);
      CHECK(s.weighted_f1 <= hi + 1e-15);

      // Relabeling classes permutes the rows and keeps macro-F1.
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(perm));
      auto pp = preds, gg = golds;
      for (auto& l : pp) l = {perm[l[0]]};
      for (auto& l : gg) l = {perm[l[0]]};
      auto sp = score(pp, gg, n, LabelMode::multiclass);
      CHECK(sp.macro_f1 == doctest::Approx(s.macro_f1).epsilon(1e-14));
      for (std::size_t c = 0; c < n; ++c) CHECK(sp.classes[perm[c]].f1 == doctest::Approx(s.classes[c].f1).epsilon(1e-14));
    }
  }

  SUBCASE("multilabel membership") {
    std::vector<LabelSet> preds = {{0, 1}, {1}, {2}, {0, 2}};
    std::vector<LabelSet> golds = {{0}, {1, 2}, {2}, {0, 2}};
    auto s = score(preds, golds, 3, LabelMode::multilabel);
    // class 0: tp 2 fp 0 fn 0; class 1: tp 1 fp 1 fn 0; class 2: tp 2 fp 0 fn 1
    CHECK(s.classes[0].f1 == 1.0);
    CHECK(s.classes[1].f1 == doctest::Approx(2.0 / 3.0));
    CHECK(s.classes[2].f1 == doctest::Approx(0.8));
    CHECK(s.classes[2].support == 3);
    CHECK(s.accuracy == doctest::Approx(0.5));
  }

  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(score({{0}}, {{0}, {1}}, 2, LabelMode::multiclass), Error);
  }
}

TEST_CASE("chi-square survival") {
  for (double k : {1.0, 2.0, 3.0, 7.0, 20.0}) CHECK(chi_square_survival(0.0, k) == 1.0);
  // Two degrees of freedom have the closed form exp(-x / 2).
  for (double x : {0.1, 1.0, 5.0, 30.0}) CHECK(chi_square_survival(x, 2.0) == doctest::Approx(std::exp(-x / 2)).epsilon(1e-13));
  CHECK(chi_square_survival(3.841458820694124, 1.0) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(chi_square_survival(7.814727903251178, 3.0) == doctest::Approx(0.05).epsilon(1e-10));
  double prev = 1.0;
  for (double x = 0.25; x < 60.0; x += 0.25) {
    const double p = chi_square_survival(x, 4.0);
    CHECK(p < prev);
    prev = p;
  }
  // Ten reference points from the independent series / continued-fraction oracle.
  const std::pair<double, double> points[] = {{0.5, 1}, {2.0, 1}, {10.0, 1}, {1.0, 3}, {6.65, 3},
                                              {12.0, 5}, {3.0, 6}, {40.0, 10}, {0.01, 2}, {100.0, 15}};
  for (const auto& [x, k] : points) CHECK(std::abs(chi_square_survival(x, k) - testing::chi_square_tail(x, k)) <= 1e-10);
}

TEST_CASE("McNemar-Bowker") {
  SUBCASE("symmetric tables") {
    auto t = ContingencyTable::from_rows({{5, 3, 2}, {3, 9, 4}, {2, 4, 1}});
    auto r = mcnemar_bowker(t);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == 1.0);
    auto diag = ContingencyTable::from_rows({{10, 0}, {0, 4}});
    auto rd = mcnemar_bowker(diag);
    CHECK(rd.dof == 0);
    CHECK(rd.p_value == 1.0);
  }
  SUBCASE("2x2 reduces to McNemar") {
    for (auto [b, c] : {std::pair{7u, 2u}, std::pair{0u, 5u}, std::pair{13u, 13u}, std::pair{40u, 21u}}) {
      auto r = mcnemar_bowker(ContingencyTable::from_rows({{20, b}, {c, 30}}));
      const double expected = (double(b) - double(c)) * (double(b) - double(c)) / double(b + c);
      CHECK(r.dof == 1);
      CHECK(r.statistic == doctest::Approx(expected).epsilon(1e-15));
      CHECK(std::abs(r.p_value - testing::chi_square_tail(expected, 1.0)) <= 1e-10);
    }
  }
  SUBCASE("fixed 3x3 table") {
    const std::vector<std::vector<std::uint64_t>> b = {{40, 12, 8}, {5, 30, 3}, {8, 10, 25}};
    auto r = mcnemar_bowker(ContingencyTable::from_rows(b));
    CHECK(r.statistic == doctest::Approx(49.0 / 17.0 + 49.0 / 13.0).epsilon(1e-15));
    CHECK(r.dof == 3);
    CHECK(std::abs(r.p_value - testing::chi_square_tail(49.0 / 17.0 + 49.0 / 13.0, 3.0)) <= 1e-8);
  }
  SUBCASE("ten fixed tables against the independent oracle") {
    Rng rng(77);
    for (int t = 0; t < 10; ++t) {
      const std::size_t n = 2 + static_cast<std::size_t>(t % 5);
      std::vector<std::vector<std::uint64_t>> b(n, std::vector<std::uint64_t>(n));
      for (auto& row : b)
        for (auto& v : row) v = rng.below(t < 5 ? 15 : 200);
      if (t == 3) b[0][1] = b[1][0] = 0;  // an empty pair is skipped
      auto table = ContingencyTable::from_rows(b);
      auto r = mcnemar_bowker(table);
      auto [stat, dof] = bowker_reference(b);
      CHECK(r.statistic == doctest::Approx(stat).epsilon(1e-13));
      CHECK(r.dof == dof);
      CHECK(std::abs(r.p_value - testing::chi_square_tail(stat, static_cast<double>(dof))) <= 1e-8);
      CHECK(r.p_value >= 0.0);
      CHECK(r.p_value <= 1.0);
      auto rt = mcnemar_bowker(table.transposed());
      CHECK(rt.statistic == doctest::Approx(r.statistic).epsilon(1e-15));
      CHECK(rt.p_value == doctest::Approx(r.p_value).epsilon(1e-15));
    }
  }
  SUBCASE("non-square input") {
    CHECK_THROWS_AS(ContingencyTable::from_rows({{1, 2}, {3}}), Error);
  }
}

TEST_CASE("trace comparison") {
  TypeVocabulary types({"A", "B", "C"}, LabelMode::multiclass);
  std::vector<DocumentSequence> docs;
  for (int d = 0; d < 3; ++d) {
    DocumentSequence doc{"doc" + std::to_string(d), {}};
    for (std::size_t p = 0; p < 4; ++p) doc.pages.push_back({doc.doc_id, p, "x", {p % 3}});
    docs.push_back(doc);
  }
  const std::vector<std::vector<std::size_t>> labels = {{0, 1, 2, 0}, {0, 0, 2, 0}, {1, 1, 2, 2}};

  SUBCASE("identical traces") {
    auto t = traces_from(docs, labels);
    auto cmp = compare_traces(t, t, docs, types);
    CHECK(cmp.test.p_value == 1.0);
    CHECK(cmp.table.total() == 12);
    for (double d : cmp.f1_delta) CHECK(d == 0.0);
  }
  SUBCASE("one differing page") {
    auto other = labels;
    other[1][1] = 2;
    auto cmp = compare_traces(traces_from(docs, labels), traces_from(docs, other), docs, types);
    CHECK(cmp.test.dof == 1);
    CHECK(cmp.test.statistic == 1.0);
    CHECK(cmp.table.at(0, 2) == 1);
    CHECK(cmp.second.classes[2].f1 != cmp.first.classes[2].f1);
    CHECK(format_comparison(cmp, "a", "b", types).find("p") != std::string::npos);
  }
  SUBCASE("misaligned traces are rejected") {
    auto t = traces_from(docs, labels);
    auto short_t = t;
    short_t.back().steps.pop_back();
    CHECK_THROWS(compare_traces(t, short_t, docs, types));
    auto renamed = t;
    renamed[0].doc_id = "other";
    CHECK_THROWS(check_alignment(renamed, docs));
  }
  SUBCASE("score table has one row per method") {
    auto s = score(decided_labels(traces_from(docs, labels)), gold_labels(docs), 3, LabelMode::multiclass);
    const auto text = format_score_table({{"first", s}, {"second", s}}, types);
    CHECK(text.find("first") != std::string::npos);
    CHECK(text.find("macro") != std::string::npos);
  }
}
