#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace biomorph {

/// Row = ground truth, column = prediction.
using Confusion = std::vector<std::vector<std::size_t>>;

struct MetricsBundle {
  Confusion confusion;
  double bal_acc = 0.0;
  double w_f1 = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  double mean = 0.0;
  std::vector<std::string> warnings;
};

Confusion confusion_matrix(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred, std::size_t C);

/// Mean per-class recall. Throws on a class with no truth samples unless
/// `skip_empty`, in which case such classes are left out of the mean.
double balanced_accuracy(const Confusion& confusion, bool skip_empty = false);

/// Support-weighted F1; a class with P + R = 0 contributes 0.
double weighted_f1(const Confusion& confusion);

/// One-vs-rest AUROC of a single score column; ties count one half.
double binary_auroc(const std::vector<bool>& positive, const std::vector<double>& score);

/// Step-sum average precision; descending score, ties by ascending index.
double binary_average_precision(const std::vector<bool>& positive, const std::vector<double>& score);

/// Macro one-vs-rest averages over the classes present in `truth`. Absent
/// classes are skipped and reported through `warnings` when non-null.
double auroc_macro(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob,
                   std::vector<std::string>* warnings = nullptr);
double auprc_macro(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob,
                   std::vector<std::string>* warnings = nullptr);

/// Argmax per row; ties go to the lower class index.
std::vector<std::size_t> argmax_rows(const std::vector<std::vector<double>>& prob);

double mean_of_four(double bal_acc, double w_f1, double auprc, double auroc);

MetricsBundle compute_metrics(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob,
                              std::size_t C);

/// {"bal_acc", "w_f1", "auprc", "auroc", "mean"}, pretty-printed.
std::string metrics_json(const MetricsBundle& m);

}  // namespace biomorph
