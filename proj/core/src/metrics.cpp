#include "loancast/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <vector>

namespace loancast {

ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels,
                          double threshold) {
  LOANCAST_CHECK(scores.size() == labels.size(), "confusion: ", scores.size(), " scores vs ",
                 labels.size(), " labels");
  ConfusionCounts c;
  for (size_t i = 0; i < scores.size(); ++i) {
    LOANCAST_CHECK(labels[i] == 0 || labels[i] == 1, "confusion: non-binary label ", labels[i]);
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1)
      (predicted ? c.tp : c.fn) += 1;
    else
      (predicted ? c.fp : c.tn) += 1;
  }
  return c;
}

PrfOa prf_oa(const ConfusionCounts& c) {
  PrfOa r;
  if (c.tp + c.fp > 0)
    r.precision = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  else
    r.precision_defined = false;
  if (c.tp + c.fn > 0)
    r.recall = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  else
    r.recall_defined = false;
  if (r.precision_defined && r.recall_defined && r.precision + r.recall > 0.0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  else
    r.f1_defined = false;
  if (c.total() > 0)
    r.oa = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  else
    r.oa_defined = false;
  return r;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  LOANCAST_CHECK(scores.size() == labels.size(), "auroc: size mismatch");
  int64_t pos = 0, neg = 0;
  for (int label : labels) {
    LOANCAST_CHECK(label == 0 || label == 1, "auroc: non-binary label ", label);
    (label == 1 ? pos : neg) += 1;
  }
  LOANCAST_CHECK(pos > 0 && neg > 0, "auroc: needs at least one positive and one negative label");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  // Sweep thresholds from high to low; tied scores advance as one group, so
  // the trapezoid over each tie group applies the standard tie correction.
  double area = 0.0;
  double tp = 0.0, fp = 0.0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1)
        tp += 1.0;
      else
        fp += 1.0;
      ++j;
    }
    const double tpr = tp / static_cast<double>(pos);
    const double fpr = fp / static_cast<double>(neg);
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return area;
}

PerClassRecall per_class_recall(std::span<const double> scores, std::span<const int> labels,
                                double threshold) {
  const ConfusionCounts c = confusion(scores, labels, threshold);
  PerClassRecall r;
  if (c.tp + c.fn > 0)
    r.positive = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  else
    r.positive_defined = false;
  if (c.tn + c.fp > 0)
    r.negative = 100.0 * static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  else
    r.negative_defined = false;
  return r;
}

MetricReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                             double threshold) {
  MetricReport report;
  report.threshold = threshold;
  report.counts = confusion(scores, labels, threshold);
  report.prf = prf_oa(report.counts);
  report.per_class = per_class_recall(scores, labels, threshold);
  const bool single_class = (report.counts.tp + report.counts.fn == 0) ||
                            (report.counts.tn + report.counts.fp == 0);
  if (!single_class) report.auroc = auroc(scores, labels);
  return report;
}

namespace {
std::string fmt2(double v, bool defined) {
  if (!defined) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}
}  // namespace

std::string report_table(const MetricReport& r) {
  std::string out = "TP\tFP\tTN\tFN\tPrecision\tRecall\tF1\tAUROC\tOA\n";
  out += std::to_string(r.counts.tp) + "\t" + std::to_string(r.counts.fp) + "\t" +
         std::to_string(r.counts.tn) + "\t" + std::to_string(r.counts.fn) + "\t" +
         fmt2(r.prf.precision, r.prf.precision_defined) + "\t" +
         fmt2(r.prf.recall, r.prf.recall_defined) + "\t" + fmt2(r.prf.f1, r.prf.f1_defined) +
         "\t" + (r.auroc ? fmt2(100.0 * *r.auroc, true) : "-") + "\t" +
         fmt2(r.prf.oa, r.prf.oa_defined) + "\n";
  return out;
}

std::string report_keyvalue(const MetricReport& r) {
  char buf[64];
  std::string out;
  out += "TP = " + std::to_string(r.counts.tp) + "\n";
  out += "FP = " + std::to_string(r.counts.fp) + "\n";
  out += "TN = " + std::to_string(r.counts.tn) + "\n";
  out += "FN = " + std::to_string(r.counts.fn) + "\n";
  auto kv = [&](const char* key, double v, bool defined) {
    if (defined) {
      std::snprintf(buf, sizeof(buf), "%s = %.6f\n", key, v);
      out += buf;
    } else {
      out += std::string(key) + " = -\n";
    }
  };
  kv("Precision", r.prf.precision, r.prf.precision_defined);
  kv("Recall", r.prf.recall, r.prf.recall_defined);
  kv("F1", r.prf.f1, r.prf.f1_defined);
  kv("AUROC", r.auroc ? 100.0 * *r.auroc : 0.0, r.auroc.has_value());
  kv("OA", r.prf.oa, r.prf.oa_defined);
  kv("RecallPositive", r.per_class.positive, r.per_class.positive_defined);
  kv("RecallNegative", r.per_class.negative, r.per_class.negative_defined);
  std::snprintf(buf, sizeof(buf), "Threshold = %.6f\n", r.threshold);
  out += buf;
  return out;
}

}  // namespace loancast
