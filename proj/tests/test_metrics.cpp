#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "fcfl/errors.hpp"
#include "fcfl/metrics.hpp"

using namespace fcfl;

namespace {

double mann_whitney(const std::vector<double>& s, const std::vector<bool>& pos) {
  double wins = 0, p = 0, n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (pos[i] ? p : n) += 1;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
  return wins / (p * n);
}

}  // namespace

TEST_CASE("confusion examples") {
  auto cm = confusion({0, 0, 1}, {0, 1, 1}, 2);
  CHECK(cm.counts == std::vector<std::uint64_t>{1, 1, 0, 1});
  CHECK(confusion({}, {}, 3).total() == 0);
  auto diag = confusion({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
  CHECK(diag.trace() == 4);
  CHECK_THROWS_AS(confusion({3}, {0}, 3), ContractError);
}

TEST_CASE("prf examples and zero-denominator convention") {
  auto p = prf(confusion({0, 0, 1}, {0, 1, 1}, 2));
  CHECK(p.per_class[0].precision.value == 1.0);
  CHECK(p.per_class[0].recall.value == 0.5);
  CHECK(p.per_class[0].f1.value == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  auto perfect = prf(confusion({0, 1, 2}, {0, 1, 2}, 3));
  CHECK(perfect.accuracy.value == 1.0);
  CHECK(perfect.macro.f1.value == 1.0);

  auto absent = prf(confusion({0, 1}, {0, 1}, 3));
  CHECK(absent.per_class[2].precision.value == 0.0);
  CHECK(absent.per_class[2].precision.undefined);
  CHECK_FALSE(absent.per_class[0].precision.undefined);
}

TEST_CASE("prf matches brute-force counting on random instances") {
  std::mt19937_64 g(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + g() % 4, n = 1 + g() % 200;
    std::vector<std::size_t> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = g() % k, p[i] = g() % k;
    auto cm = confusion(t, p, k);
    auto r = prf(cm);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += t[i] == p[i];
    CHECK(r.accuracy.value == doctest::Approx(static_cast<double>(correct) / n).epsilon(1e-15));
    CHECK(r.micro.precision.value == doctest::Approx(r.accuracy.value).epsilon(1e-15));
    CHECK(r.micro.recall.value == doctest::Approx(r.accuracy.value).epsilon(1e-15));
    for (std::size_t c = 0; c < k; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += t[i] == c && p[i] == c;
        fp += t[i] != c && p[i] == c;
        fn += t[i] == c && p[i] != c;
        CHECK(cm.at(t[i], p[i]) >= 1);
      }
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      CHECK(std::abs(r.per_class[c].precision.value - prec) < 1e-12);
      CHECK(std::abs(r.per_class[c].recall.value - rec) < 1e-12);
      CHECK(std::abs(r.per_class[c].f1.value - f1) < 1e-12);
      for (const auto* m : {&r.per_class[c].precision, &r.per_class[c].recall, &r.per_class[c].f1})
        CHECK((m->value >= 0.0 && m->value <= 1.0));
    }
  }
}

TEST_CASE("roc: anchors and Mann-Whitney oracle with ties") {
  auto sep = roc_curve({0.9, 0.8, 0.2, 0.1}, {true, true, false, false});
  CHECK(sep.auc == 1.0);
  auto flat = roc_curve({0.3, 0.3, 0.3, 0.3, 0.3}, {true, false, true, false, false});
  CHECK(flat.auc == 0.5);
  CHECK_FALSE(roc_curve({0.1, 0.2}, {true, true}).defined);

  std::mt19937_64 g(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + g() % 49;
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(g() % 6) / 5.0;  // coarse grid forces ties
      pos[i] = g() % 2;
    }
    pos[0] = true;
    pos[1] = false;
    auto c = roc_curve(s, pos);
    REQUIRE(c.defined);
    CHECK(std::abs(c.auc - mann_whitney(s, pos)) < 1e-9);
    CHECK(c.fpr.front() == 0.0);
    CHECK(c.tpr.front() == 0.0);
    CHECK(c.fpr.back() == 1.0);
    CHECK(c.tpr.back() == 1.0);
    double area = 0;
    for (std::size_t i = 1; i < c.fpr.size(); ++i) {
      CHECK(c.fpr[i] >= c.fpr[i - 1]);
      CHECK(c.tpr[i] >= c.tpr[i - 1]);
      CHECK(c.thresholds[i] < c.thresholds[i - 1]);
      area += (c.fpr[i] - c.fpr[i - 1]) * (c.tpr[i] + c.tpr[i - 1]) / 2;
    }
    CHECK(std::abs(area - c.auc) < 1e-12);
  }
}

TEST_CASE("roc_auc: micro, macro and undefined classes") {
  std::vector<std::vector<double>> scores{{0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.3, 0.3, 0.4},
                                          {0.5, 0.4, 0.1}};
  std::vector<std::size_t> truth{0, 1, 2, 1};
  auto r = roc_auc(scores, truth);
  REQUIRE(r.per_class.size() == 3);
  double mean = 0;
  for (const auto& c : r.per_class) mean += c.auc / 3;
  CHECK(r.macro_auc == doctest::Approx(mean));
  CHECK(r.excluded.empty());
  CHECK(r.macro.fpr.back() == 1.0);
  CHECK(r.macro.tpr.back() == doctest::Approx(1.0));

  std::vector<double> pooled;
  std::vector<bool> pos;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i) pooled.push_back(scores[i][c]), pos.push_back(truth[i] == c);
  CHECK(std::abs(r.micro.auc - mann_whitney(pooled, pos)) < 1e-12);

  auto missing = roc_auc({{0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}}, {0, 1});
  CHECK_FALSE(missing.per_class[2].defined);
  CHECK(missing.excluded == std::vector<std::size_t>{2});
  CHECK(missing.macro_auc == 1.0);
}

TEST_CASE("report consistency and aggregation") {
  auto r = make_report({{0.9, 0.05, 0.05}, {0.2, 0.7, 0.1}, {0.6, 0.3, 0.1}}, {0, 1, 2}, 3);
  CHECK(r.scores.accuracy.value == doctest::Approx(static_cast<double>(r.cm.trace()) / r.cm.total()));

  auto one = aggregate_cv({r});
  for (const auto& [name, ms] : one.metrics) {
    CHECK(ms.mean == scalar_metrics(r).at(name));
    CHECK(ms.stddev == 0.0);
  }

  auto a = make_report({{0.9, 0.1, 0.0}, {0.2, 0.8, 0.0}}, {0, 1}, 3);
  auto b = make_report({{0.9, 0.1, 0.0}, {0.8, 0.2, 0.0}}, {0, 1}, 3);
  auto cv = aggregate_cv({a, b});
  CHECK(cv.metrics.at("accuracy").mean == doctest::Approx(0.75));
  CHECK(cv.metrics.at("accuracy").stddev == doctest::Approx(0.25));
  CHECK(cv.cm.total() == 4);
  auto rev = aggregate_cv({b, a});
  for (const auto& [name, ms] : cv.metrics) CHECK(rev.metrics.at(name).mean == doctest::Approx(ms.mean));

  // Accuracy 0.9 and 1.0 -> mean 0.95, population std 0.05.
  EvaluationReport x, y;
  x.cm = ConfusionMatrix(2);
  y.cm = ConfusionMatrix(2);
  x.scores.accuracy.value = 0.9;
  y.scores.accuracy.value = 1.0;
  auto s = aggregate_cv({x, y});
  CHECK(s.metrics.at("accuracy").mean == doctest::Approx(0.95));
  CHECK(s.metrics.at("accuracy").stddev == doctest::Approx(0.05));

  EvaluationReport z;
  z.cm = ConfusionMatrix(3);
  CHECK_THROWS_AS(aggregate_cv({x, z}), ContractError);

  auto j = to_json(r, {"nontumor", "necrotic", "viable"});
  CHECK(j["schema_version"] == kReportSchemaVersion);
  CHECK(j["confusion"]["counts"].size() == 3);
}
