#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "biomorph/data.hpp"
#include "biomorph/training.hpp"

namespace biomorph {

inline constexpr double kDefaultConfidence = 0.95;
inline constexpr std::size_t kExactWilcoxonLimit = 20;
inline constexpr std::size_t kDefaultTopGenes = 10;

/// Predictions whose confidence is >= tau, in input order.
std::vector<Prediction> select_high_confidence(const std::vector<Prediction>& predictions,
                                               double tau = kDefaultConfidence);

enum class WilcoxonMethod {
  /// Exact when n_A + n_B <= kExactWilcoxonLimit, normal approximation otherwise.
  automatic,
  exact,
  normal,
};

struct WilcoxonResult {
  double u = 0.0;  // rank sum of A minus n_A(n_A+1)/2, with midranks
  double p = 1.0;  // two-sided
};

/// Rank-sum test of A against B. The exact path enumerates the permutation
/// distribution of U (with the observed ties) and reports
/// P(|U - mu| >= |U_obs - mu|). The normal path uses the tie-corrected
/// variance and a continuity correction of 1/2.
WilcoxonResult wilcoxon_rank_sum(const std::vector<double>& a, const std::vector<double>& b,
                                 WilcoxonMethod method = WilcoxonMethod::automatic);

/// Midranks (1-based) of the pooled values.
std::vector<double> midranks(const std::vector<double>& values);

/// Benjamini-Hochberg adjusted p-values, same order as the input.
std::vector<double> benjamini_hochberg(const std::vector<double>& p);

struct GeneStat {
  std::size_t gene = 0;
  double u = 0.0;
  double p = 1.0;
  double effect = 0.0;  // mean in group minus mean in the rest
  double fraction_expressing = 0.0;
  double mean_expression = 0.0;
};

struct ClassDge {
  std::size_t cls = 0;
  std::size_t group_size = 0;
  std::vector<GeneStat> ranked;  // ascending p, then descending effect, then gene index
};

struct DgeResult {
  std::vector<ClassDge> classes;  // ascending class index, tested classes only
  std::vector<std::string> warnings;
};

struct DgeOptions {
  bool benjamini_hochberg = false;
};

/// One-vs-rest test of every gene for every class that has at least one
/// spot in `groups`. `spots[i]` belongs to class `groups[i]`.
DgeResult rank_genes_groups(const Dataset& ds, const std::vector<std::size_t>& spots,
                            const std::vector<std::size_t>& groups, std::size_t C, const DgeOptions& opts = {});

/// Convenience wrapper grouping high-confidence predictions by predicted class.
DgeResult dge_from_predictions(const Dataset& ds, const std::vector<Prediction>& kept, std::size_t C,
                               const DgeOptions& opts = {});

/// spot_id, x, y, truth, predicted, confidence
void write_prediction_map(const std::filesystem::path& path, const Dataset& ds,
                          const std::vector<Prediction>& predictions);

/// class, gene, p, fraction_expressing, mean_expression; top_n genes per class.
void write_dge_dotplot(const std::filesystem::path& path, const Dataset& ds, const DgeResult& dge,
                       std::size_t top_n = kDefaultTopGenes);

/// Writes prediction_map.tsv and dge_dotplot.tsv into `out_dir`.
void emit_reports(const std::filesystem::path& out_dir, const Dataset& ds, const std::vector<Prediction>& predictions,
                  const DgeResult& dge, std::size_t top_n = kDefaultTopGenes);

}  // namespace biomorph
