#pragma once

// Classification metrics: confusion matrix, precision/recall/F1, one-vs-rest
// ROC with micro and macro averaging, and cross-validation aggregation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace fcfl {

inline constexpr int kReportSchemaVersion = 1;

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;  // k*k, row-major

  explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts[truth * k + predicted];
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
};

ConfusionMatrix confusion(const std::vector<std::size_t>& truth,
                          const std::vector<std::size_t>& predicted, std::size_t k);

// A metric whose denominator was zero is reported as 0 with `undefined` set.
struct Metric {
  double value = 0.0;
  bool undefined = false;
};

struct ClassScores {
  Metric precision, recall, f1;
};

struct PrfSummary {
  std::vector<ClassScores> per_class;
  ClassScores macro;
  ClassScores micro;
  Metric accuracy;
};

PrfSummary prf(const ConfusionMatrix& cm);

struct RocCurve {
  std::vector<double> thresholds;  // descending; the first is +inf
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
  bool defined = false;  // false when there are no positives or no negatives
};

// Threshold sweep over distinct scores; tied scores cross together.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive);

struct RocSummary {
  std::vector<RocCurve> per_class;
  RocCurve micro;
  // Mean TPR interpolated over the union of per-class FPR points.
  RocCurve macro;
  double macro_auc = 0.0;  // unweighted mean of the defined per-class AUCs
  std::vector<std::size_t> excluded;  // classes left out of the macro average
};

// scores[i][c] is the probability of class c for sample i.
RocSummary roc_auc(const std::vector<std::vector<double>>& scores,
                   const std::vector<std::size_t>& truth);

struct EvaluationReport {
  ConfusionMatrix cm;
  PrfSummary scores;
  RocSummary roc;
  std::map<std::string, std::string> metadata;  // seed, config hash, split, ...
};

EvaluationReport make_report(const std::vector<std::vector<double>>& probabilities,
                             const std::vector<std::size_t>& truth, std::size_t k);

// Flat name -> value view of every scalar metric in a report.
std::map<std::string, double> scalar_metrics(const EvaluationReport& report);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population convention
};

struct CvSummary {
  std::size_t runs = 0;
  ConfusionMatrix cm;  // summed over runs
  std::map<std::string, MeanStd> metrics;
};

CvSummary aggregate_cv(const std::vector<EvaluationReport>& reports);

nlohmann::json to_json(const EvaluationReport& report, const std::vector<std::string>& class_names);
nlohmann::json to_json(const CvSummary& summary);

// report.json plus roc_<name>.tsv (fpr, tpr) for each class and the averages.
void write_report(const std::filesystem::path& dir, const EvaluationReport& report,
                  const std::vector<std::string>& class_names);

}  // namespace fcfl
