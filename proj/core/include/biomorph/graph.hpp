#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "biomorph/autodiff.hpp"
#include "biomorph/data.hpp"
#include "biomorph/nn.hpp"

namespace biomorph {

inline constexpr std::size_t kDefaultNeighbors = 8;
inline constexpr double kDefaultEdgeEps = 1e-6;
inline constexpr double kSelfLoopWeight = 1.0;

/// Hub-and-spoke microenvironment of one spot. Neighbors are stored in
/// ascending spot index so every reduction over them has a fixed order.
struct MicroenvGraph {
  std::size_t center = 0;
  std::vector<std::size_t> neighbors;
  std::vector<double> edge_weights;
};

/// The k nearest spots of the same sample by Euclidean distance on (x, y),
/// ties broken by ascending index. Returned nearest first.
std::vector<std::size_t> find_neighbors(const Dataset& ds, std::size_t center, std::size_t k = kDefaultNeighbors);

double mean_squared_difference(std::span<const double> a, std::span<const double> b);

/// e_i = (1/(MSE(x_c,x_i)+eps) + 1/(MSE(g_c,g_i)+eps)) / 2.
std::vector<double> compute_edge_weights(std::span<const double> x_center,
                                         const std::vector<std::span<const double>>& x_neighbors,
                                         std::span<const double> g_center,
                                         const std::vector<std::span<const double>>& g_neighbors,
                                         double eps = kDefaultEdgeEps);

MicroenvGraph build_graph(const Dataset& ds, std::size_t center, std::size_t k = kDefaultNeighbors,
                          double eps = kDefaultEdgeEps);
std::vector<MicroenvGraph> build_graphs(const Dataset& ds, std::size_t k = kDefaultNeighbors,
                                        double eps = kDefaultEdgeEps);

/// Weights over {center} + neighbors: (self_loop, e_1..e_k) divided by their sum.
std::vector<double> normalized_weights(std::span<const double> edge_weights, double self_loop = kSelfLoopWeight);

/// sum_j w_j * feats_j, reduced in the given order.
std::vector<double> aggregate(std::span<const double> weights, const std::vector<std::span<const double>>& feats);

/// Two-layer GCN over the star graph. Messages flow from neighbors into the
/// hub: layer 1 gives the center relu(W1 * sum_j w_j x_j + b1) and each
/// neighbor its self-loop transform relu(W1 x_j + b1); layer 2 re-aggregates
/// those with the same weights at the center and applies relu(W2 . + b2).
struct GcnParams {
  Linear layer1;
  Linear layer2;

  GcnParams() = default;
  GcnParams(ParamStore& store, const std::string& name, std::size_t in = kMorphDim, std::size_t hidden = 512,
            std::size_t out = 512);
  std::vector<Param*> params() const;
};

/// Packed inputs for a batch of graphs: features [B*J, in] with row b*J+j the
/// j-th node (center first) of graph b, and weights [B, J] (zero for padding).
struct GcnBatch {
  Tensor features;
  Tensor weights;
  std::size_t nodes_per_graph = 0;
};

GcnBatch pack_graphs(const Dataset& ds, const std::vector<MicroenvGraph>& graphs, std::span<const std::size_t> centers,
                     double self_loop = kSelfLoopWeight);

Var gcn_forward(Tape& tape, const GcnBatch& batch, const GcnParams& params);

/// Single-graph convenience form; returns h for the center.
Tensor gcn_forward(const MicroenvGraph& graph, const std::vector<std::span<const double>>& node_feats,
                   const GcnParams& params, double self_loop = kSelfLoopWeight);

}  // namespace biomorph
