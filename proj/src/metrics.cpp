#include "fcfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "fcfl/errors.hpp"

namespace fcfl {

namespace fs = std::filesystem;

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < k; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion(const std::vector<std::size_t>& truth,
                          const std::vector<std::size_t>& predicted, std::size_t k) {
  if (truth.size() != predicted.size())
    throw ContractError("confusion: " + std::to_string(truth.size()) + " labels vs " +
                        std::to_string(predicted.size()) + " predictions");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predicted[i] >= k)
      throw ContractError("confusion: label out of range at index " + std::to_string(i));
    ++cm.counts[truth[i] * k + predicted[i]];
  }
  return cm;
}

namespace {

Metric ratio(double num, double den) {
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

Metric harmonic(const Metric& p, const Metric& r) {
  if (p.undefined || r.undefined || p.value + r.value == 0.0) return {0.0, true};
  return {2.0 * p.value * r.value / (p.value + r.value), false};
}

Metric mean_of(const std::vector<ClassScores>& per_class, Metric ClassScores::*field) {
  if (per_class.empty()) return {0.0, true};
  double sum = 0.0;
  bool undefined = false;
  for (const auto& c : per_class) {
    sum += (c.*field).value;
    undefined = undefined || (c.*field).undefined;
  }
  return {sum / static_cast<double>(per_class.size()), undefined};
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += (x[i] - x[i - 1]) * (y[i] + y[i - 1]) / 2.0;
  return area;
}

void write_roc_table(const fs::path& path, const RocCurve& curve) {
  std::ofstream out(path);
  if (!out) throw EvaluationError("cannot write " + path.string());
  out.precision(17);
  out << "fpr\ttpr\n";
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) out << curve.fpr[i] << '\t' << curve.tpr[i] << '\n';
}

nlohmann::json metric_json(const Metric& m) {
  return {{"value", m.value}, {"undefined", m.undefined}};
}

nlohmann::json scores_json(const ClassScores& s) {
  return {{"precision", metric_json(s.precision)},
          {"recall", metric_json(s.recall)},
          {"f1", metric_json(s.f1)}};
}

}  // namespace

PrfSummary prf(const ConfusionMatrix& cm) {
  PrfSummary out;
  const std::size_t k = cm.k;
  double tp_sum = 0.0, fp_sum = 0.0, fn_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(cm.at(c, c)), col = 0.0, row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      col += static_cast<double>(cm.at(j, c));
      row += static_cast<double>(cm.at(c, j));
    }
    ClassScores s;
    s.precision = ratio(tp, col);
    s.recall = ratio(tp, row);
    s.f1 = harmonic(s.precision, s.recall);
    out.per_class.push_back(s);
    tp_sum += tp;
    fp_sum += col - tp;
    fn_sum += row - tp;
  }
  out.macro.precision = mean_of(out.per_class, &ClassScores::precision);
  out.macro.recall = mean_of(out.per_class, &ClassScores::recall);
  out.macro.f1 = mean_of(out.per_class, &ClassScores::f1);
  out.micro.precision = ratio(tp_sum, tp_sum + fp_sum);
  out.micro.recall = ratio(tp_sum, tp_sum + fn_sum);
  out.micro.f1 = harmonic(out.micro.precision, out.micro.recall);
  out.accuracy = ratio(static_cast<double>(cm.trace()), static_cast<double>(cm.total()));
  return out;
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size())
    throw ContractError("roc_curve: scores and labels differ in length");
  RocCurve curve;
  std::uint64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw EvaluationError("roc_curve: non-finite score");
    positive[i] ? ++pos : ++neg;
  }
  if (pos == 0 || neg == 0) return curve;
  curve.defined = true;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  // Area accumulated in integer units of (fp step) x (tp sum) to keep it exact.
  std::uint64_t tp = 0, fp = 0;
  double twice_area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const std::uint64_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == s; ++i) positive[order[i]] ? ++tp : ++fp;
    twice_area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0);
    curve.thresholds.push_back(s);
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
  }
  curve.auc = twice_area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

RocSummary roc_auc(const std::vector<std::vector<double>>& scores,
                   const std::vector<std::size_t>& truth) {
  if (scores.size() != truth.size())
    throw ContractError("roc_auc: scores and labels differ in length");
  if (scores.empty()) throw ContractError("roc_auc: no samples");
  const std::size_t k = scores.front().size();
  RocSummary out;
  std::vector<double> pooled;
  std::vector<bool> pooled_pos;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> s(scores.size());
    std::vector<bool> p(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != k) throw ContractError("roc_auc: ragged score rows");
      if (truth[i] >= k) throw ContractError("roc_auc: label out of range");
      s[i] = scores[i][c];
      p[i] = truth[i] == c;
    }
    pooled.insert(pooled.end(), s.begin(), s.end());
    pooled_pos.insert(pooled_pos.end(), p.begin(), p.end());
    out.per_class.push_back(roc_curve(s, p));
  }
  out.micro = roc_curve(pooled, pooled_pos);

  std::vector<std::size_t> defined;
  for (std::size_t c = 0; c < k; ++c)
    (out.per_class[c].defined ? defined : out.excluded).push_back(c);
  if (!defined.empty()) {
    double sum = 0.0;
    for (std::size_t c : defined) sum += out.per_class[c].auc;
    out.macro_auc = sum / static_cast<double>(defined.size());

    std::vector<double> grid;
    for (std::size_t c : defined)
      grid.insert(grid.end(), out.per_class[c].fpr.begin(), out.per_class[c].fpr.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    RocCurve& m = out.macro;
    m.defined = true;
    m.fpr = grid;
    m.tpr.assign(grid.size(), 0.0);
    for (std::size_t c : defined) {
      const auto& cur = out.per_class[c];
      for (std::size_t g = 0; g < grid.size(); ++g) {
        // Right-continuous step through vertical segments: take the highest
        // TPR reached at this FPR, interpolating between distinct FPRs.
        const auto hi = std::upper_bound(cur.fpr.begin(), cur.fpr.end(), grid[g]);
        const std::size_t j = static_cast<std::size_t>(hi - cur.fpr.begin());
        double t;
        if (j == cur.fpr.size()) {
          t = cur.tpr.back();
        } else if (cur.fpr[j - 1] == grid[g]) {
          t = cur.tpr[j - 1];
        } else {
          const double w = (grid[g] - cur.fpr[j - 1]) / (cur.fpr[j] - cur.fpr[j - 1]);
          t = cur.tpr[j - 1] + w * (cur.tpr[j] - cur.tpr[j - 1]);
        }
        m.tpr[g] += t / static_cast<double>(defined.size());
      }
    }
    m.fpr.insert(m.fpr.begin(), 0.0);
    m.tpr.insert(m.tpr.begin(), 0.0);
    m.auc = trapezoid(m.fpr, m.tpr);
  }
  return out;
}

EvaluationReport make_report(const std::vector<std::vector<double>>& probabilities,
                             const std::vector<std::size_t>& truth, std::size_t k) {
  std::vector<std::size_t> predicted;
  for (const auto& row : probabilities) {
    if (row.size() != k) throw ContractError("make_report: probability rows must have k entries");
    predicted.push_back(
        static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  EvaluationReport r;
  r.cm = confusion(truth, predicted, k);
  r.scores = prf(r.cm);
  r.roc = roc_auc(probabilities, truth);
  return r;
}

std::map<std::string, double> scalar_metrics(const EvaluationReport& report) {
  std::map<std::string, double> m;
  m["accuracy"] = report.scores.accuracy.value;
  auto put = [&](const std::string& prefix, const ClassScores& s) {
    m[prefix + ".precision"] = s.precision.value;
    m[prefix + ".recall"] = s.recall.value;
    m[prefix + ".f1"] = s.f1.value;
  };
  put("macro", report.scores.macro);
  put("micro", report.scores.micro);
  for (std::size_t c = 0; c < report.scores.per_class.size(); ++c)
    put("class" + std::to_string(c), report.scores.per_class[c]);
  m["auc.micro"] = report.roc.micro.auc;
  m["auc.macro"] = report.roc.macro_auc;
  for (std::size_t c = 0; c < report.roc.per_class.size(); ++c)
    m["auc.class" + std::to_string(c)] = report.roc.per_class[c].auc;
  return m;
}

CvSummary aggregate_cv(const std::vector<EvaluationReport>& reports) {
  if (reports.empty()) throw ContractError("aggregate_cv: no reports");
  CvSummary out;
  out.runs = reports.size();
  out.cm = ConfusionMatrix(reports.front().cm.k);
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : reports) {
    if (r.cm.k != out.cm.k)
      throw ContractError("aggregate_cv: reports disagree on class count (" +
                          std::to_string(r.cm.k) + " vs " + std::to_string(out.cm.k) + ")");
    for (std::size_t i = 0; i < r.cm.counts.size(); ++i) out.cm.counts[i] += r.cm.counts[i];
    for (const auto& [name, v] : scalar_metrics(r)) values[name].push_back(v);
  }
  for (const auto& [name, vs] : values) {
    const double n = static_cast<double>(vs.size());
    const double mean = std::accumulate(vs.begin(), vs.end(), 0.0) / n;
    double var = 0.0;
    for (double v : vs) var += (v - mean) * (v - mean);
    out.metrics[name] = {mean, std::sqrt(var / n)};
  }
  return out;
}

nlohmann::json to_json(const EvaluationReport& report,
                       const std::vector<std::string>& class_names) {
  auto name = [&](std::size_t c) {
    return c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
  };
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["metadata"] = report.metadata;
  j["classes"] = nlohmann::json::array();
  for (std::size_t c = 0; c < report.cm.k; ++c) j["classes"].push_back(name(c));
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < report.cm.k; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < report.cm.k; ++p) row.push_back(report.cm.at(t, p));
    rows.push_back(row);
  }
  j["confusion"] = {{"rows", "true"}, {"columns", "predicted"}, {"counts", rows}};
  j["accuracy"] = metric_json(report.scores.accuracy);
  j["macro"] = scores_json(report.scores.macro);
  j["micro"] = scores_json(report.scores.micro);
  for (std::size_t c = 0; c < report.scores.per_class.size(); ++c)
    j["per_class"][name(c)] = scores_json(report.scores.per_class[c]);
  nlohmann::json auc;
  auc["micro"] = report.roc.micro.auc;
  auc["macro"] = report.roc.macro_auc;
  auc["macro_curve"] = report.roc.macro.auc;
  for (std::size_t c = 0; c < report.roc.per_class.size(); ++c) {
    const auto& rc = report.roc.per_class[c];
    auc["per_class"][name(c)] = {{"value", rc.auc}, {"undefined", !rc.defined}};
  }
  auc["excluded_from_macro"] = nlohmann::json::array();
  for (std::size_t c : report.roc.excluded) auc["excluded_from_macro"].push_back(name(c));
  j["auc"] = auc;
  return j;
}

nlohmann::json to_json(const CvSummary& summary) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["runs"] = summary.runs;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < summary.cm.k; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < summary.cm.k; ++p) row.push_back(summary.cm.at(t, p));
    rows.push_back(row);
  }
  j["confusion_sum"] = rows;
  for (const auto& [name, ms] : summary.metrics)
    j["metrics"][name] = {{"mean", ms.mean}, {"std", ms.stddev}};
  return j;
}

void write_report(const fs::path& dir, const EvaluationReport& report,
                  const std::vector<std::string>& class_names) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw EvaluationError("cannot write " + (dir / "report.json").string());
    out << to_json(report, class_names).dump(2) << '\n';
  }
  for (std::size_t c = 0; c < report.roc.per_class.size(); ++c) {
    if (!report.roc.per_class[c].defined) continue;
    const std::string n = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    write_roc_table(dir / ("roc_" + n + ".tsv"), report.roc.per_class[c]);
  }
  if (report.roc.micro.defined) write_roc_table(dir / "roc_micro.tsv", report.roc.micro);
  if (report.roc.macro.defined) write_roc_table(dir / "roc_macro.tsv", report.roc.macro);
}

}  // namespace fcfl
