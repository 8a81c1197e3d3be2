#include "biomorph/pathway.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace biomorph {

double overlap_score(const PathwayDb::Entry& pathway, const GenePanel& panel) {
  std::size_t hit = 0;
  for (const auto& g : pathway.genes) {
    if (panel.index_of(g)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(pathway.genes.size());
}

ClinicalPathwayMask select_pathways(const PathwayDb& db, const GenePanel& panel, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("select_pathways: threshold must lie in (0, 1]");
  ClinicalPathwayMask mask;
  for (const auto& p : db.entries()) {
    std::vector<std::size_t> idx;
    for (const auto& g : p.genes) {
      if (auto i = panel.index_of(g)) idx.push_back(*i);
    }
    const double overlap = static_cast<double>(idx.size()) / static_cast<double>(p.genes.size());
    if (idx.empty() || overlap < threshold) continue;
    std::sort(idx.begin(), idx.end());
    mask.names.push_back(p.name);
    mask.gene_indices.push_back(std::move(idx));
  }
  if (mask.names.empty()) {
    throw DataError("no pathway reaches overlap " + std::to_string(threshold) + " with the gene panel; lower the threshold");
  }
  return mask;
}

Var clinical_encode(const Var& g, const ClinicalPathwayMask& mask) { return ad::index_sum(g, mask.gene_indices); }

std::size_t selection_size(std::size_t d, double frac) {
  if (!(frac > 0.0 && frac <= 1.0)) throw std::invalid_argument("selection fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(d) - 1e-12));
  return std::clamp<std::size_t>(k, 1, d);
}

LearnablePathwayLayer::LearnablePathwayLayer(ParamStore& store, const std::string& name, std::size_t pathways,
                                             std::size_t genes, double f, PathwaySoftmax mode)
    : weights(&store.gaussian(name + ".weights", {pathways, genes})), frac(f), softmax(mode) {
  if (pathways == 0) throw std::invalid_argument("learnable pathway count must be positive");
  selection_size(genes, f);
}

std::size_t LearnablePathwayLayer::selected_per_row() const { return selection_size(d(), frac); }

std::vector<std::vector<std::size_t>> top_k_rows(const Tensor& w, std::size_t k) {
  const std::size_t rows = w.rows();
  const std::size_t d = w.cols();
  if (k == 0 || k > d) throw std::invalid_argument("top_k_rows: k out of range");
  std::vector<std::vector<std::size_t>> out(rows);
  std::vector<std::size_t> idx(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.ptr() + r * d;
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    out[r].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out[r].begin(), out[r].end());
  }
  return out;
}

Var learnable_encode(Tape& tape, const Var& g, const LearnablePathwayLayer& layer) {
  const Tensor& w = layer.weights->value;
  if (g.value().cols() != layer.d()) {
    throw ShapeError("learnable_encode: expression width " + std::to_string(g.value().cols()) + " but layer expects " +
                     std::to_string(layer.d()));
  }
  w.check_finite("learnable pathway weights");
  const auto selected = top_k_rows(w, layer.selected_per_row());
  const Var wv = tape.param(*layer.weights);
  if (layer.softmax == PathwaySoftmax::support) {
    const Var probs = ad::softmax(ad::gather_rows(wv, selected));
    return ad::sparse_mix(g, probs, selected);
  }
  Tensor mask(w.shape(), 0.0);
  for (std::size_t r = 0; r < selected.size(); ++r) {
    for (auto j : selected[r]) mask[r * layer.d() + j] = 1.0;
  }
  const Var probs = ad::softmax(ad::mul(wv, tape.constant(std::move(mask))));
  return ad::matmul(g, ad::transpose(probs));
}

}  // namespace biomorph
