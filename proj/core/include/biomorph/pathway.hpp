#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "biomorph/autodiff.hpp"
#include "biomorph/data.hpp"
#include "biomorph/nn.hpp"

namespace biomorph {

inline constexpr double kDefaultOverlapThreshold = 0.9;
inline constexpr std::size_t kDefaultLearnablePathways = 200;
inline constexpr double kDefaultSelectionFraction = 0.05;

/// Database pathways retained for the current panel, with the panel indices
/// of their measured genes.
struct ClinicalPathwayMask {
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> gene_indices;

  std::size_t k() const noexcept { return names.size(); }
};

/// Fraction of a pathway's genes present in the panel.
double overlap_score(const PathwayDb::Entry& pathway, const GenePanel& panel);

/// Keeps pathways whose overlap is >= threshold, in database order.
ClinicalPathwayMask select_pathways(const PathwayDb& db, const GenePanel& panel,
                                    double threshold = kDefaultOverlapThreshold);

/// z_j = sum of expression over pathway j's measured genes. g is [B, d] or [d].
Var clinical_encode(const Var& g, const ClinicalPathwayMask& mask);

enum class PathwaySoftmax {
  /// Softmax restricted to the selected genes.
  support,
  /// Softmax over the full masked row w * m, unselected genes at logit 0.
  literal,
};

/// a learnable gene sets over d genes. Each row keeps its top ceil(frac * d)
/// weights; the selection is recomputed from the current weights on every
/// forward pass and treated as constant by backward.
struct LearnablePathwayLayer {
  Param* weights = nullptr;  // [a, d]
  double frac = kDefaultSelectionFraction;
  PathwaySoftmax softmax = PathwaySoftmax::support;

  LearnablePathwayLayer() = default;
  LearnablePathwayLayer(ParamStore& store, const std::string& name, std::size_t pathways, std::size_t genes,
                        double frac = kDefaultSelectionFraction, PathwaySoftmax mode = PathwaySoftmax::support);

  std::size_t a() const { return weights->value.shape()[0]; }
  std::size_t d() const { return weights->value.shape()[1]; }
  std::size_t selected_per_row() const;
  std::vector<Param*> params() const { return {weights}; }
};

std::size_t selection_size(std::size_t d, double frac);

/// Per row, indices of the k largest entries; ties go to the lower index.
/// Returned in ascending index order.
std::vector<std::vector<std::size_t>> top_k_rows(const Tensor& w, std::size_t k);

/// z'_i = sum_j softmax(w_i over its selected genes)_j * g_j. g is [B, d] or [d].
Var learnable_encode(Tape& tape, const Var& g, const LearnablePathwayLayer& layer);

}  // namespace biomorph
