#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "loancast/common.hpp"

namespace loancast {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t tn = 0;
  int64_t fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
};

// Predicted positive iff score >= threshold (ties count as positive).
ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels,
                          double threshold = 0.5);

// Precision, recall, F1 for the positive class and overall accuracy, all in
// percent. A zero denominator yields value 0 with the matching defined-flag
// cleared instead of NaN.
struct PrfOa {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double oa = 0.0;
  bool precision_defined = true;
  bool recall_defined = true;
  bool f1_defined = true;
  bool oa_defined = true;
};

PrfOa prf_oa(const ConfusionCounts& c);

// Area under the ROC curve by trapezoidal integration over the unique score
// thresholds; equals the tie-corrected pairwise probability. Needs at least
// one positive and one negative label.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Recall per class in percent; a class with zero support is undefined.
struct PerClassRecall {
  double positive = 0.0;
  double negative = 0.0;
  bool positive_defined = true;
  bool negative_defined = true;
};

PerClassRecall per_class_recall(std::span<const double> scores, std::span<const int> labels,
                                double threshold = 0.5);

struct MetricReport {
  ConfusionCounts counts;
  PrfOa prf;
  std::optional<double> auroc;  // absent for single-class inputs
  PerClassRecall per_class;
  double threshold = 0.5;
};

// Full battery over positive-class scores.
MetricReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                             double threshold = 0.5);

// Delimited table, columns exactly:
// TP, FP, TN, FN, Precision, Recall, F1, AUROC, OA.
std::string report_table(const MetricReport& report);
// `key = value` lines for machine consumption, same field names.
std::string report_keyvalue(const MetricReport& report);

}  // namespace loancast
