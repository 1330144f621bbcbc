#include "earconv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace earconv {

ConfusionMatrix confusion(const std::vector<int>& labels,
                          const std::vector<int>& predictions) {
  if (labels.size() != predictions.size()) {
    throw ShapeError("labels and predictions differ in length");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) {
      throw LabelError("labels and predictions must be binary");
    }
    ++cm.counts[y][p];
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) {
    return 0.0;
  }
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::array<PerClassMetrics, 2> precision_recall(const ConfusionMatrix& cm) {
  std::array<PerClassMetrics, 2> out;
  for (int c = 0; c < 2; ++c) {
    const std::int64_t col = cm.counts[0][c] + cm.counts[1][c];
    const std::int64_t row = cm.counts[c][0] + cm.counts[c][1];
    const std::int64_t hit = cm.counts[c][c];
    if (col == 0) {
      out[c].precision = 0.0;
      out[c].degenerate = true;
    } else {
      out[c].precision = static_cast<double>(hit) / static_cast<double>(col);
    }
    if (row == 0) {
      out[c].recall = 0.0;
      out[c].degenerate = true;
    } else {
      out[c].recall = static_cast<double>(hit) / static_cast<double>(row);
    }
  }
  return out;
}

RocResult roc_auc(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("scores and labels differ in length");
  }
  std::int64_t pos = 0;
  std::int64_t neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) {
      throw LabelError("labels must be binary");
    }
    y == 1 ? ++pos : ++neg;
  }
  if (pos == 0 || neg == 0) {
    throw MetricError("AUC is undefined with a single class");
  }

  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocResult res;
  res.points.push_back({0.0, 0.0});
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  double auc = 0.0;
  double prev_fpr = 0.0;
  double prev_tpr = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    // Samples sharing a score move together, giving ties half credit.
    const double threshold = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == threshold) {
      labels[idx[i]] == 1 ? ++tp : ++fp;
      ++i;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    res.points.push_back({fpr, tpr});
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  res.auc = auc;
  return res;
}

EvalReport make_eval_report(const std::vector<int>& labels,
                            const std::vector<int>& predictions,
                            const std::vector<double>& scores) {
  EvalReport report;
  report.cm = confusion(labels, predictions);
  report.accuracy = accuracy(report.cm);
  report.per_class = precision_recall(report.cm);
  auto roc = roc_auc(scores, labels);
  report.roc = std::move(roc.points);
  report.auc = roc.auc;
  return report;
}

std::string report_to_json(const EvalReport& report, int indent) {
  nlohmann::json j;
  j["confusion"] = {{report.cm.counts[0][0], report.cm.counts[0][1]},
                    {report.cm.counts[1][0], report.cm.counts[1][1]}};
  j["accuracy"] = report.accuracy;
  const char* names[2] = {"female", "male"};
  for (int c = 0; c < 2; ++c) {
    j["per_class"][names[c]] = {
        {"precision", report.per_class[c].precision},
        {"recall", report.per_class[c].recall},
        {"degenerate", report.per_class[c].degenerate},
    };
  }
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& pt : report.roc) {
    roc.push_back({pt.fpr, pt.tpr});
  }
  j["roc"] = std::move(roc);
  j["auc"] = report.auc;
  return j.dump(indent);
}

void write_report_json(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot open '" + path + "' for writing");
  }
  out << report_to_json(report) << "\n";
}

namespace {

long round_percent(double v) { return std::lround(100.0 * v); }

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string render_report_row(const std::string& name, const EvalReport& report,
                              std::int64_t param_count) {
  char millions[32];
  std::snprintf(millions, sizeof(millions), "%.2f",
                static_cast<double>(param_count) / 1e6);
  std::string row = pad(name, 18);
  row += pad(std::to_string(round_percent(report.per_class[0].precision)), 18);
  row += pad(std::to_string(round_percent(report.per_class[0].recall)), 15);
  row += pad(std::to_string(round_percent(report.per_class[1].precision)), 16);
  row += pad(std::to_string(round_percent(report.per_class[1].recall)), 13);
  row += pad(std::to_string(round_percent(report.accuracy)), 10);
  row += millions;
  return row;
}

std::string render_report_table(const std::string& name,
                                const EvalReport& report,
                                std::int64_t param_count) {
  std::string table = pad("CNN Model", 18) + pad("Female Precision", 18) +
                      pad("Female Recall", 15) + pad("Male Precision", 16) +
                      pad("Male Recall", 13) + pad("Accuracy", 10) +
                      "Model Parameters (M)\n";
  table += render_report_row(name, report, param_count);
  table += "\n";
  return table;
}

}  // namespace earconv
