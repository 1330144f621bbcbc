#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "earconv/error.hpp"

namespace earconv {

/// 2x2 count table; rows are actual {female=0, male=1}, columns predicted.
struct ConfusionMatrix {
  std::int64_t counts[2][2] = {{0, 0}, {0, 0}};

  std::int64_t total() const {
    return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  }
  std::int64_t trace() const { return counts[0][0] + counts[1][1]; }
  bool operator==(const ConfusionMatrix& o) const {
    return counts[0][0] == o.counts[0][0] && counts[0][1] == o.counts[0][1] &&
           counts[1][0] == o.counts[1][0] && counts[1][1] == o.counts[1][1];
  }
};

ConfusionMatrix confusion(const std::vector<int>& labels,
                          const std::vector<int>& predictions);

/// Counts are integers, so trace/total is an exact rational divided once.
double accuracy(const ConfusionMatrix& cm);

struct PerClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  bool degenerate = false;  // a 0/0 ratio was reported as 0
};

/// precision_c = cm[c][c] / column_c, recall_c = cm[c][c] / row_c;
/// 0/0 is reported as 0 with the degenerate flag set.
std::array<PerClassMetrics, 2> precision_recall(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;  // (0,0) .. (1,1), thresholds descending
  double auc = 0.0;
};

/// ROC swept over all distinct score thresholds, AUC by the trapezoidal
/// rule. scores are predicted probabilities of class 1. Throws MetricError
/// when only one class is present.
RocResult roc_auc(const std::vector<double>& scores,
                  const std::vector<int>& labels);

struct EvalReport {
  ConfusionMatrix cm;
  double accuracy = 0.0;
  std::array<PerClassMetrics, 2> per_class;
  std::vector<RocPoint> roc;
  double auc = 0.0;
};

EvalReport make_eval_report(const std::vector<int>& labels,
                            const std::vector<int>& predictions,
                            const std::vector<double>& scores);

/// JSON with keys: confusion, accuracy, per_class, roc, auc. Byte-stable
/// for identical reports.
std::string report_to_json(const EvalReport& report, int indent = 2);
void write_report_json(const std::string& path, const EvalReport& report);

/// One row of the summary table: integer percentages for female/male
/// precision and recall plus accuracy, and parameters in millions with two
/// decimals.
std::string render_report_row(const std::string& name, const EvalReport& report,
                              std::int64_t param_count);

/// Header + row(s), fixed-width columns.
std::string render_report_table(const std::string& name,
                                const EvalReport& report,
                                std::int64_t param_count);

}  // namespace earconv
