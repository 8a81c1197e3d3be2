#include "biomorph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace biomorph {

std::vector<std::size_t> find_neighbors(const Dataset& ds, std::size_t center, std::size_t k) {
  if (center >= ds.spots.size()) throw std::out_of_range("find_neighbors: center index out of range");
  const auto& c = ds.spots[center];
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < ds.spots.size(); ++i) {
    if (i == center || ds.spots[i].sample_id != c.sample_id) continue;
    const double dx = ds.spots[i].x - c.x;
    const double dy = ds.spots[i].y - c.y;
    cand.emplace_back(dx * dx + dy * dy, i);
  }
  if (cand.empty()) {
    throw DataError("spot '" + c.spot_id + "' is alone in sample '" + c.sample_id + "'; no microenvironment");
  }
  const std::size_t take = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(cand[i].second);
  return out;
}

double mean_squared_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("mean_squared_difference: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

std::vector<double> compute_edge_weights(std::span<const double> x_center,
                                         const std::vector<std::span<const double>>& x_neighbors,
                                         std::span<const double> g_center,
                                         const std::vector<std::span<const double>>& g_neighbors, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("compute_edge_weights: eps must be positive");
  if (x_neighbors.size() != g_neighbors.size()) throw ShapeError("compute_edge_weights: neighbor list lengths differ");
  std::vector<double> e;
  e.reserve(x_neighbors.size());
  for (std::size_t i = 0; i < x_neighbors.size(); ++i) {
    const double r_morph = 1.0 / (mean_squared_difference(x_center, x_neighbors[i]) + eps);
    const double r_bio = 1.0 / (mean_squared_difference(g_center, g_neighbors[i]) + eps);
    e.push_back(0.5 * (r_morph + r_bio));
  }
  return e;
}

MicroenvGraph build_graph(const Dataset& ds, std::size_t center, std::size_t k, double eps) {
  MicroenvGraph g;
  g.center = center;
  g.neighbors = find_neighbors(ds, center, k);
  std::sort(g.neighbors.begin(), g.neighbors.end());
  std::vector<std::span<const double>> xs;
  std::vector<std::span<const double>> gs;
  for (auto n : g.neighbors) {
    xs.emplace_back(ds.spots[n].morph);
    gs.emplace_back(ds.spots[n].expr);
  }
  g.edge_weights = compute_edge_weights(ds.spots[center].morph, xs, ds.spots[center].expr, gs, eps);
  return g;
}

std::vector<MicroenvGraph> build_graphs(const Dataset& ds, std::size_t k, double eps) {
  std::vector<MicroenvGraph> out;
  out.reserve(ds.spots.size());
  for (std::size_t i = 0; i < ds.spots.size(); ++i) out.push_back(build_graph(ds, i, k, eps));
  return out;
}

std::vector<double> normalized_weights(std::span<const double> edge_weights, double self_loop) {
  std::vector<double> w;
  w.reserve(edge_weights.size() + 1);
  w.push_back(self_loop);
  for (double e : edge_weights) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw std::invalid_argument("normalized_weights: edge weights must be finite and non-negative");
    w.push_back(e);
  }
  double total = 0.0;
  for (double v : w) total += v;
  if (!(total > 0.0)) throw std::invalid_argument("normalized_weights: weights sum to zero");
  for (auto& v : w) v /= total;
  return w;
}

std::vector<double> aggregate(std::span<const double> weights, const std::vector<std::span<const double>>& feats) {
  if (weights.size() != feats.size() || feats.empty()) throw ShapeError("aggregate: weight and feature counts differ");
  std::vector<double> out(feats.front().size(), 0.0);
  for (std::size_t j = 0; j < feats.size(); ++j) {
    if (feats[j].size() != out.size()) throw ShapeError("aggregate: ragged feature widths");
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += weights[j] * feats[j][c];
  }
  return out;
}

GcnParams::GcnParams(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out)
    : layer1(store, name + ".layer1", in, hidden), layer2(store, name + ".layer2", hidden, out) {}

std::vector<Param*> GcnParams::params() const {
  return {layer1.weight, layer1.bias, layer2.weight, layer2.bias};
}

GcnBatch pack_graphs(const Dataset& ds, const std::vector<MicroenvGraph>& graphs, std::span<const std::size_t> centers,
                     double self_loop) {
  if (centers.empty()) throw std::invalid_argument("pack_graphs: empty batch");
  std::size_t max_nbrs = 0;
  for (auto c : centers) {
    const auto& g = graphs.at(c);
    if (g.neighbors.empty()) throw DataError("pack_graphs: spot without neighbors");
    max_nbrs = std::max(max_nbrs, g.neighbors.size());
  }
  const std::size_t J = max_nbrs + 1;
  const std::size_t width = ds.spots.front().morph.size();
  GcnBatch batch;
  batch.nodes_per_graph = J;
  batch.features = Tensor({centers.size() * J, width}, 0.0);
  batch.weights = Tensor({centers.size(), J}, 0.0);
  for (std::size_t b = 0; b < centers.size(); ++b) {
    const auto& g = graphs[centers[b]];
    const auto w = normalized_weights(g.edge_weights, self_loop);
    const auto copy_row = [&](std::size_t node, std::size_t spot) {
      const auto& src = ds.spots[spot].morph;
      std::copy(src.begin(), src.end(), batch.features.ptr() + (b * J + node) * width);
    };
    copy_row(0, g.center);
    for (std::size_t j = 0; j < g.neighbors.size(); ++j) copy_row(j + 1, g.neighbors[j]);
    for (std::size_t j = 0; j < w.size(); ++j) batch.weights[b * J + j] = w[j];
  }
  return batch;
}

Var gcn_forward(Tape& tape, const GcnBatch& batch, const GcnParams& params) {
  const std::size_t J = batch.nodes_per_graph;
  if (J < 2) throw std::invalid_argument("gcn_forward: graph has no neighbors");
  const std::size_t B = batch.weights.rows();
  const Var feats = tape.constant(batch.features);
  const Var w = tape.constant(batch.weights);
  Tensor center_only({B, 1}, 0.0);
  Tensor neighbors_only = batch.weights;
  for (std::size_t b = 0; b < B; ++b) {
    center_only[b] = batch.weights[b * J];
    neighbors_only[b * J] = 0.0;
  }
  const Var w_center = tape.constant(std::move(center_only));
  const Var w_nbrs = tape.constant(std::move(neighbors_only));

  // W1 applied per node, then aggregated at the hub (W1 is linear, so this
  // equals W1 applied to the aggregated features).
  const Var projected = ad::matmul(feats, tape.param(*params.layer1.weight));
  const Var b1 = tape.param(*params.layer1.bias);
  const Var hub1 = ad::relu(ad::add(ad::weighted_sum(w, projected), b1));
  const Var nodes1 = ad::relu(ad::add(projected, b1));
  const Var agg2 = ad::add(ad::weighted_sum(w_nbrs, nodes1), ad::weighted_sum(w_center, hub1));
  return ad::relu(params.layer2(tape, agg2));
}

Tensor gcn_forward(const MicroenvGraph& graph, const std::vector<std::span<const double>>& node_feats,
                   const GcnParams& params, double self_loop) {
  if (graph.neighbors.empty()) throw std::invalid_argument("gcn_forward: empty neighbor list");
  if (node_feats.size() != graph.neighbors.size() + 1 || graph.edge_weights.size() != graph.neighbors.size()) {
    throw ShapeError("gcn_forward: expected features for the center and every neighbor");
  }
  std::vector<std::size_t> order(graph.neighbors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return graph.neighbors[a] < graph.neighbors[b]; });
  std::vector<double> e;
  for (auto o : order) e.push_back(graph.edge_weights[o]);
  const auto w = normalized_weights(e, self_loop);
  const std::size_t J = w.size();
  const std::size_t width = node_feats.front().size();
  GcnBatch batch;
  batch.nodes_per_graph = J;
  batch.features = Tensor({J, width}, 0.0);
  batch.weights = Tensor({1, J}, w);
  const auto put = [&](std::size_t row, std::span<const double> src) {
    if (src.size() != width) throw ShapeError("gcn_forward: ragged node features");
    std::copy(src.begin(), src.end(), batch.features.ptr() + row * width);
  };
  put(0, node_feats[0]);
  for (std::size_t j = 0; j < order.size(); ++j) put(j + 1, node_feats[order[j] + 1]);
  Tape tape(false);
  const Var h = gcn_forward(tape, batch, params);
  return Tensor({h.value().cols()}, h.value().storage());
}

}  // namespace biomorph
