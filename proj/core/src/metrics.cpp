#include "biomorph/metrics.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

namespace biomorph {

namespace {

void check_prob_shape(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob) {
  if (truth.size() != prob.size()) throw std::invalid_argument("metrics: truth and probability row counts differ");
  if (truth.empty()) throw std::invalid_argument("metrics: no samples");
  const std::size_t C = prob.front().size();
  for (const auto& row : prob) {
    if (row.size() != C) throw std::invalid_argument("metrics: ragged probability rows");
  }
  for (auto t : truth) {
    if (t >= C) throw std::invalid_argument("metrics: label " + std::to_string(t) + " outside " + std::to_string(C) + " classes");
  }
}

template <typename Fn>
double macro_ovr(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob,
                 std::vector<std::string>* warnings, Fn per_class) {
  check_prob_shape(truth, prob);
  const std::size_t C = prob.front().size();
  std::vector<std::size_t> counts(C, 0);
  for (auto t : truth) ++counts[t];
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t n) { return n > 0; }) < 2) {
    throw std::invalid_argument("metrics: truth contains a single class; one-vs-rest scores are undefined");
  }
  double total = 0.0;
  std::size_t used = 0;
  std::vector<bool> pos(truth.size());
  std::vector<double> score(truth.size());
  for (std::size_t c = 0; c < C; ++c) {
    if (counts[c] == 0) {
      if (warnings) warnings->push_back("class " + std::to_string(c) + " absent from truth; excluded from macro average");
      continue;
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
      pos[i] = truth[i] == c;
      score[i] = prob[i][c];
    }
    total += per_class(pos, score);
    ++used;
  }
  return total / static_cast<double>(used);
}

}  // namespace

Confusion confusion_matrix(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred, std::size_t C) {
  if (truth.size() != pred.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
  Confusion m(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= C || pred[i] >= C) {
      throw std::invalid_argument("confusion_matrix: label at position " + std::to_string(i) + " is >= " + std::to_string(C));
    }
    ++m[truth[i]][pred[i]];
  }
  return m;
}

double balanced_accuracy(const Confusion& m, bool skip_empty) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < m.size(); ++c) {
    const std::size_t row = std::accumulate(m[c].begin(), m[c].end(), std::size_t{0});
    if (row == 0) {
      if (skip_empty) continue;
      throw std::invalid_argument("balanced_accuracy: class " + std::to_string(c) + " has no samples");
    }
    total += static_cast<double>(m[c][c]) / static_cast<double>(row);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("balanced_accuracy: no samples");
  return total / static_cast<double>(used);
}

double weighted_f1(const Confusion& m) {
  const std::size_t C = m.size();
  std::size_t N = 0;
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    if (m[c].size() != C) throw std::invalid_argument("weighted_f1: confusion matrix must be square");
    std::size_t row = 0;
    std::size_t col = 0;
    for (std::size_t j = 0; j < C; ++j) {
      row += m[c][j];
      col += m[j][c];
    }
    N += row;
    const double tp = static_cast<double>(m[c][c]);
    const double p = col == 0 ? 0.0 : tp / static_cast<double>(col);
    const double r = row == 0 ? 0.0 : tp / static_cast<double>(row);
    const double f1 = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    total += f1 * static_cast<double>(row);
  }
  if (N == 0) throw std::invalid_argument("weighted_f1: no samples");
  return total / static_cast<double>(N);
}

double binary_auroc(const std::vector<bool>& positive, const std::vector<double>& score) {
  const std::size_t n = score.size();
  if (positive.size() != n) throw std::invalid_argument("binary_auroc: length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  // Sum of midranks (1-based) over positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && score[order[j]] == score[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("binary_auroc: needs both positives and negatives");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double binary_average_precision(const std::vector<bool>& positive, const std::vector<double>& score) {
  const std::size_t n = score.size();
  if (positive.size() != n) throw std::invalid_argument("binary_average_precision: length mismatch");
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  if (n_pos == 0) throw std::invalid_argument("binary_average_precision: no positives");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!positive[order[r]]) continue;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  return ap / static_cast<double>(n_pos);
}

double auroc_macro(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob,
                   std::vector<std::string>* warnings) {
  return macro_ovr(truth, prob, warnings, binary_auroc);
}

double auprc_macro(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob,
                   std::vector<std::string>* warnings) {
  return macro_ovr(truth, prob, warnings, binary_average_precision);
}

std::vector<std::size_t> argmax_rows(const std::vector<std::vector<double>>& prob) {
  std::vector<std::size_t> out;
  out.reserve(prob.size());
  for (const auto& row : prob) {
    if (row.empty()) throw std::invalid_argument("argmax_rows: empty row");
    out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

double mean_of_four(double bal_acc, double w_f1, double auprc, double auroc) {
  return (bal_acc + w_f1 + auprc + auroc) / 4.0;
}

MetricsBundle compute_metrics(const std::vector<std::size_t>& truth, const std::vector<std::vector<double>>& prob,
                              std::size_t C) {
  check_prob_shape(truth, prob);
  if (prob.front().size() != C) throw std::invalid_argument("compute_metrics: probability width differs from class count");
  MetricsBundle m;
  m.confusion = confusion_matrix(truth, argmax_rows(prob), C);
  m.bal_acc = balanced_accuracy(m.confusion, true);
  for (std::size_t c = 0; c < C; ++c) {
    if (std::accumulate(m.confusion[c].begin(), m.confusion[c].end(), std::size_t{0}) == 0) {
      m.warnings.push_back("class " + std::to_string(c) + " absent from truth; excluded from balanced accuracy");
    }
  }
  m.w_f1 = weighted_f1(m.confusion);
  m.auroc = auroc_macro(truth, prob, &m.warnings);
  m.auprc = auprc_macro(truth, prob, nullptr);
  m.mean = mean_of_four(m.bal_acc, m.w_f1, m.auprc, m.auroc);
  return m;
}

std::string metrics_json(const MetricsBundle& m) {
  nlohmann::ordered_json j;
  j["bal_acc"] = m.bal_acc;
  j["w_f1"] = m.w_f1;
  j["auprc"] = m.auprc;
  j["auroc"] = m.auroc;
  j["mean"] = m.mean;
  return j.dump(2) + "\n";
}

}  // namespace biomorph
