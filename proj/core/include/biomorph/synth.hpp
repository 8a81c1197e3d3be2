#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "biomorph/data.hpp"

namespace biomorph {

struct SynthConfig {
  std::size_t classes = 3;
  std::size_t spots = 2000;
  std::size_t genes = 500;
  std::size_t pathways = 20;
  std::size_t samples = 7;
  std::size_t train_samples = 2;
  std::size_t val_samples = 1;
  std::size_t markers_per_class = 10;
  /// Markers listed in each planted pathway; 0 means half the class markers
  /// (rounded up). Pathways are padded with passenger genes to 9 measured genes.
  std::size_t pathway_markers = 0;
  /// Morphology feature width. Files on disk always carry kMorphDim columns.
  std::size_t morph_dim = kMorphDim;
  /// 0 draws isotropic morphology. Otherwise prototypes and per-spot noise live
  /// in a random rank-k subspace (signal and noise given per latent
  /// coordinate) plus isotropic residual noise, mimicking the correlated
  /// embeddings of a pretrained image encoder.
  std::size_t morph_rank = 0;
  double morph_residual = 0.1;
  /// Per-dimension deviation of class morphology prototypes.
  double morph_signal = 0.15;
  /// Per-dimension Gaussian noise added to every spot's morphology.
  double morph_noise = 1.0;
  /// Mean count of non-marker genes before library-size scaling.
  double base_mean = 1.0;
  /// Multiplicative up-regulation of a class's markers inside that class.
  double marker_fold = 2.0;
  /// Gamma-Poisson overdispersion (0 gives plain Poisson counts).
  double dispersion = 0.2;
  /// Genes left at zero in every spot; exercises gene filtering.
  std::size_t zero_genes = 0;
  std::uint64_t seed = 1;
};

struct PlantedTruth {
  /// Marker gene indices (into the generated panel) per class.
  std::vector<std::vector<std::size_t>> markers;
  std::vector<std::vector<double>> prototypes;
  /// Planted pathway names and the class each one tracks.
  std::vector<std::string> pathway_names;
  std::vector<std::size_t> pathway_class;
};

struct SynthData {
  Dataset dataset;
  PathwayDb pathways;
  PlantedTruth truth;
};

/// Grid samples split into contiguous class regions (Voronoi cells of one
/// seed point per class). Each class has a morphology prototype and a set of
/// up-regulated marker genes grouped into class-specific pathways. Output is a
/// pure function of the config.
SynthData synth_generate(const SynthConfig& cfg);

void write_truth(const std::filesystem::path& path, const PlantedTruth& truth, const GenePanel& panel);

}  // namespace biomorph
