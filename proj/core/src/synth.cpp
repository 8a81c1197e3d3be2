#include "biomorph/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "biomorph/autodiff.hpp"

namespace biomorph {
namespace {

enum Stream : std::uint64_t { kLayout = 11, kMorph = 12, kGenes = 13, kCounts = 14, kPathways = 15 };

std::mt19937_64 stream(std::uint64_t seed, Stream s) { return std::mt19937_64(mix_seed(seed, s)); }

std::string padded(const std::string& prefix, std::size_t i, int width) {
  std::string n = std::to_string(i);
  if (static_cast<int>(n.size()) < width) n.insert(0, static_cast<std::size_t>(width) - n.size(), '0');
  return prefix + n;
}

void validate(const SynthConfig& c) {
  if (c.classes < 2) throw DataError("synth: need at least 2 classes");
  if (c.spots < 9 * c.classes) throw DataError("synth: need at least 9 spots per class");
  if (c.pathways < c.classes) throw DataError("synth: need at least one pathway per class");
  if (c.samples < 3) throw DataError("synth: need at least 3 samples (train/val/test)");
  if (c.train_samples == 0 || c.val_samples == 0 || c.train_samples + c.val_samples >= c.samples) {
    throw DataError("synth: split counts leave no train, validation or test sample");
  }
  if (c.spots / c.samples < std::max<std::size_t>(c.classes, 2)) throw DataError("synth: too few spots per sample");
  if (c.markers_per_class == 0) throw DataError("synth: markers_per_class must be positive");
  if (c.pathway_markers > c.markers_per_class) {
    throw DataError("synth: pathway_markers cannot exceed markers_per_class");
  }
  if (!(c.morph_residual >= 0.0)) throw DataError("synth: morph_residual must be non-negative");
  if (c.morph_dim == 0) throw DataError("synth: morph_dim must be positive");
  if (c.markers_per_class * c.classes + c.zero_genes + 9 > c.genes) {
    throw DataError("synth: gene count too small for markers, passengers and zero genes");
  }
  if (!(c.morph_signal >= 0.0) || !(c.morph_noise >= 0.0) || !(c.base_mean > 0.0) || !(c.marker_fold > 0.0) ||
      !(c.dispersion >= 0.0)) {
    throw DataError("synth: invalid noise or expression level");
  }
}

}  // namespace

SynthData synth_generate(const SynthConfig& cfg) {
  validate(cfg);
  SynthData out;
  Dataset& ds = out.dataset;
  const std::size_t C = cfg.classes;

  for (std::size_t c = 0; c < C; ++c) ds.class_names.push_back("class" + std::to_string(c));
  std::vector<std::string> gene_names;
  for (std::size_t g = 0; g < cfg.genes; ++g) gene_names.push_back(padded("GENE", g + 1, 4));
  ds.panel = GenePanel(gene_names);

  // gene roles
  auto grng = stream(cfg.seed, kGenes);
  std::vector<std::size_t> order(cfg.genes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), grng);
  std::size_t cursor = 0;
  out.truth.markers.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < cfg.markers_per_class; ++k) out.truth.markers[c].push_back(order[cursor++]);
    std::sort(out.truth.markers[c].begin(), out.truth.markers[c].end());
  }
  std::vector<bool> zero_gene(cfg.genes, false);
  for (std::size_t k = 0; k < cfg.zero_genes; ++k) zero_gene[order[cursor++]] = true;
  std::vector<std::size_t> passengers(order.begin() + static_cast<std::ptrdiff_t>(cursor), order.end());
  std::sort(passengers.begin(), passengers.end());

  std::vector<int> marker_class(cfg.genes, -1);
  for (std::size_t c = 0; c < C; ++c) {
    for (auto g : out.truth.markers[c]) marker_class[g] = static_cast<int>(c);
  }
  std::vector<double> gene_mean(cfg.genes, 0.0);
  {
    std::normal_distribution<double> spread(0.0, 0.5);
    for (std::size_t g = 0; g < cfg.genes; ++g) {
      const double jitter = std::exp(spread(grng));
      if (zero_gene[g]) continue;
      gene_mean[g] = marker_class[g] >= 0 ? cfg.base_mean : cfg.base_mean * jitter;
    }
  }

  // morphology prototypes
  auto mrng = stream(cfg.seed, kMorph);
  const std::size_t rank = cfg.morph_rank;
  std::vector<double> basis(cfg.morph_dim * rank);  // row-major [morph_dim, rank]
  const auto embed = [&](const std::vector<double>& latent, std::vector<double>& dst) {
    for (std::size_t i = 0; i < cfg.morph_dim; ++i) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rank; ++r) acc += basis[i * rank + r] * latent[r];
      dst[i] += acc;
    }
  };
  std::vector<std::vector<double>> latent_protos;
  {
    std::normal_distribution<double> n01(0.0, 1.0);
    out.truth.prototypes.assign(C, std::vector<double>(cfg.morph_dim, 0.0));
    if (rank == 0) {
      for (auto& proto : out.truth.prototypes) {
        for (auto& v : proto) v = cfg.morph_signal * n01(mrng);
      }
    } else {
      for (auto& b : basis) b = n01(mrng);
      latent_protos.assign(C, std::vector<double>(rank));
      for (std::size_t c = 0; c < C; ++c) {
        for (auto& v : latent_protos[c]) v = cfg.morph_signal * n01(mrng);
        embed(latent_protos[c], out.truth.prototypes[c]);
      }
    }
  }

  // spatial layout and spots
  auto lrng = stream(cfg.seed, kLayout);
  auto crng = stream(cfg.seed, kCounts);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::normal_distribution<double> lib(0.0, 0.25);
  const std::size_t base_per_sample = cfg.spots / cfg.samples;
  const std::size_t extra = cfg.spots % cfg.samples;
  for (std::size_t s = 0; s < cfg.samples; ++s) {
    const std::string sample = padded("S", s, 2);
    ds.sample_splits[sample] = s < cfg.train_samples                      ? Split::train
                               : s < cfg.train_samples + cfg.val_samples ? Split::val
                                                                          : Split::test;
    const std::size_t n = base_per_sample + (s < extra ? 1 : 0);
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::vector<std::size_t> cells(n);
    std::iota(cells.begin(), cells.end(), std::size_t{0});
    std::shuffle(cells.begin(), cells.end(), lrng);
    std::vector<std::pair<double, double>> seeds;
    for (std::size_t c = 0; c < C; ++c) {
      seeds.emplace_back(static_cast<double>(cells[c] % side), static_cast<double>(cells[c] / side));
    }
    for (std::size_t i = 0; i < n; ++i) {
      SpotRecord spot;
      spot.spot_id = sample + "_" + padded("", i, 4);
      spot.sample_id = sample;
      spot.x = static_cast<double>(i % side);
      spot.y = static_cast<double>(i / side);
      std::size_t label = 0;
      double best = INFINITY;
      for (std::size_t c = 0; c < C; ++c) {
        const double dx = spot.x - seeds[c].first;
        const double dy = spot.y - seeds[c].second;
        const double dist = dx * dx + dy * dy;
        if (dist < best) {
          best = dist;
          label = c;
        }
      }
      spot.label = label;
      spot.morph = out.truth.prototypes[label];
      if (rank == 0) {
        for (auto& v : spot.morph) v += cfg.morph_noise * n01(mrng);
      } else {
        std::vector<double> latent(rank);
        for (auto& v : latent) v = cfg.morph_noise * n01(mrng);
        embed(latent, spot.morph);
        for (auto& v : spot.morph) v += cfg.morph_residual * n01(mrng);
      }

      spot.expr.assign(cfg.genes, 0.0);
      const double size_factor = std::exp(lib(crng));
      for (std::size_t g = 0; g < cfg.genes; ++g) {
        if (zero_gene[g]) continue;
        double rate = size_factor * gene_mean[g];
        if (marker_class[g] == static_cast<int>(label)) rate *= cfg.marker_fold;
        if (cfg.dispersion > 0.0) {
          std::gamma_distribution<double> gamma(1.0 / cfg.dispersion, cfg.dispersion);
          rate *= gamma(crng);
        }
        std::poisson_distribution<long> poisson(rate);
        spot.expr[g] = static_cast<double>(poisson(crng));
      }
      ds.spots.push_back(std::move(spot));
    }
  }

  // pathways: class-specific marker groups padded with passenger genes; every
  // other one also lists a gene absent from the panel (overlap 9/10). Decoys
  // are mostly absent from the panel and fall below any sensible threshold.
  auto prng = stream(cfg.seed, kPathways);
  const std::size_t marker_take =
      cfg.pathway_markers == 0 ? (cfg.markers_per_class + 1) / 2 : cfg.pathway_markers;
  const std::size_t passenger_take = marker_take >= 9 ? 0 : 9 - marker_take;
  for (std::size_t j = 0; j < cfg.pathways; ++j) {
    const std::size_t c = j % C;
    std::vector<std::size_t> pick = out.truth.markers[c];
    std::shuffle(pick.begin(), pick.end(), prng);
    pick.resize(marker_take);
    std::vector<std::size_t> pass = passengers;
    std::shuffle(pass.begin(), pass.end(), prng);
    pick.insert(pick.end(), pass.begin(), pass.begin() + static_cast<std::ptrdiff_t>(passenger_take));
    std::sort(pick.begin(), pick.end());
    std::vector<std::string> genes;
    for (auto g : pick) genes.push_back(gene_names[g]);
    if (j % 2 == 1) genes.push_back(padded("ABSENT", j, 3));
    const std::string name = padded("PATHWAY_", j + 1, 3);
    out.pathways.add(name, genes);
    out.truth.pathway_names.push_back(name);
    out.truth.pathway_class.push_back(c);
  }
  const std::size_t decoys = std::max<std::size_t>(1, cfg.pathways / 4);
  for (std::size_t j = 0; j < decoys; ++j) {
    std::vector<std::size_t> pass = passengers;
    std::shuffle(pass.begin(), pass.end(), prng);
    std::vector<std::string> genes;
    for (std::size_t k = 0; k < 3; ++k) genes.push_back(gene_names[pass[k]]);
    for (std::size_t k = 0; k < 7; ++k) genes.push_back(padded("UNMEASURED", j * 7 + k, 4));
    out.pathways.add(padded("PATHWAY_", cfg.pathways + j + 1, 3), genes);
  }
  ds.validate();
  return out;
}

void write_truth(const std::filesystem::path& path, const PlantedTruth& truth, const GenePanel& panel) {
  nlohmann::json j;
  nlohmann::json markers = nlohmann::json::array();
  for (const auto& m : truth.markers) {
    nlohmann::json names = nlohmann::json::array();
    for (auto g : m) names.push_back(panel[g]);
    markers.push_back(names);
  }
  j["markers"] = markers;
  j["pathways"] = truth.pathway_names;
  j["pathway_class"] = truth.pathway_class;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace biomorph
