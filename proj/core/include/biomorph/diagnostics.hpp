#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "biomorph/gradcheck.hpp"
#include "biomorph/training.hpp"

namespace biomorph {

inline constexpr double kPrimitiveTolerance = 1e-5;
inline constexpr double kModelTolerance = 1e-4;

struct GradCheckReport {
  std::string name;
  GradCheckResult result;
  double tolerance = 0.0;

  bool passed() const { return result.max_rel_error < tolerance; }
};

/// Finite-difference checks of every differentiable primitive and composite
/// block on small seeded inputs. Inputs to relu are kept away from the kink
/// and learnable-pathway weights are spaced so no perturbation changes the
/// top-k selection.
std::vector<GradCheckReport> primitive_gradchecks(std::uint64_t seed = 0);

struct ModelGradCheckOptions {
  ModelDims dims;
  AblationConfig ablation;
  AttentionLayout layout = AttentionLayout::literal;
  std::size_t spots = 4;
  /// Sampled entries per parameter tensor (0 checks all of them).
  std::size_t entries_per_param = 6;
  std::uint64_t seed = 1;
};

/// Weighted cross-entropy of the whole network on a micro-batch drawn from a
/// small synthetic dataset, dropout in eval mode.
GradCheckReport model_gradcheck(const ModelGradCheckOptions& options = {});

/// One training configuration evaluated over several seeds.
struct AblationPlan {
  std::vector<AblationConfig> rows;
  /// Learnable pathway counts to sweep; empty keeps the base config's count.
  std::vector<std::size_t> pathway_counts;
  std::vector<std::uint64_t> seeds;
  TrainConfig base;
  std::size_t jobs = 1;
};

struct AblationRun {
  AblationConfig ablation;
  std::size_t pathway_count = 0;
  std::uint64_t seed = 0;
  MetricsBundle metrics;
};

struct AblationSummaryRow {
  AblationConfig ablation;
  std::size_t pathway_count = 0;
  std::size_t runs = 0;
  double bal_acc = 0.0;
  double w_f1 = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  double mean = 0.0;
};

struct AblationOutcome {
  std::vector<AblationRun> runs;           // plan order: row, count, seed
  std::vector<AblationSummaryRow> summary;  // plan order: row, count
};

/// Trains and tests every (row, count, seed) combination on a bounded pool of
/// worker threads. Each run owns its model; `data` is shared read-only.
AblationOutcome run_ablation(const PreparedData& data, const AblationPlan& plan);

/// Tab-separated summary: ablation, pathway_count, runs, bal_acc, w_f1, auroc, auprc, mean.
std::string ablation_summary_tsv(const std::vector<AblationSummaryRow>& rows);

}  // namespace biomorph
