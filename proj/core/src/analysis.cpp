#include "biomorph/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace biomorph {

std::vector<Prediction> select_high_confidence(const std::vector<Prediction>& predictions, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("confidence threshold must lie in (0, 1]");
  std::vector<Prediction> kept;
  for (const auto& p : predictions) {
    if (p.confidence >= tau) kept.push_back(p);
  }
  return kept;
}

std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

namespace {

/// Exact two-sided p from the doubled ranks (all integers) of the pooled sample.
double exact_p(const std::vector<long>& ranks2, std::size_t na, long s2_obs) {
  const std::size_t n = ranks2.size();
  const long total = std::accumulate(ranks2.begin(), ranks2.end(), 0L);
  // count[k][s]: number of k-subsets of the items seen so far with doubled rank sum s.
  std::vector<std::vector<double>> count(na + 1, std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
  count[0][0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(ranks2[i]);
    for (std::size_t k = std::min(na, i + 1); k >= 1; --k) {
      auto& dst = count[k];
      const auto& src = count[k - 1];
      for (std::size_t s = dst.size(); s-- > r;) dst[s] += src[s - r];
    }
  }
  const auto nal = static_cast<long>(na);
  const auto nbl = static_cast<long>(n - na);
  const long offset = nal * (nal + 1) + nal * nbl;  // doubled (n_A(n_A+1)/2 + mu)
  const long obs_dev = std::labs(s2_obs - offset);
  double hit = 0.0;
  double all = 0.0;
  for (std::size_t s = 0; s < count[na].size(); ++s) {
    const double c = count[na][s];
    if (c == 0.0) continue;
    all += c;
    if (std::labs(static_cast<long>(s) - offset) >= obs_dev) hit += c;
  }
  return hit / all;
}

double normal_p(const std::vector<double>& pooled, std::size_t na, double u) {
  const double n = static_cast<double>(pooled.size());
  const double a = static_cast<double>(na);
  const double b = n - a;
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double var = a * b / 12.0 * ((n + 1.0) - (n > 1.0 ? ties / (n * (n - 1.0)) : 0.0));
  if (!(var > 0.0)) return 1.0;
  const double dev = std::max(0.0, std::fabs(u - a * b / 2.0) - 0.5);
  return std::min(1.0, std::erfc(dev / std::sqrt(2.0 * var)));
}

}  // namespace

WilcoxonResult wilcoxon_rank_sum(const std::vector<double>& a, const std::vector<double>& b, WilcoxonMethod method) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wilcoxon_rank_sum: both groups must be non-empty");
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  for (double v : pooled) {
    if (!std::isfinite(v)) throw std::invalid_argument("wilcoxon_rank_sum: non-finite value");
  }
  const auto ranks = midranks(pooled);
  const std::size_t na = a.size();
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < na; ++i) rank_sum += ranks[i];
  WilcoxonResult r;
  const double nad = static_cast<double>(na);
  r.u = rank_sum - nad * (nad + 1.0) / 2.0;
  const bool exact = method == WilcoxonMethod::exact ||
                     (method == WilcoxonMethod::automatic && pooled.size() <= kExactWilcoxonLimit);
  if (exact) {
    if (pooled.size() > 50) throw std::invalid_argument("wilcoxon_rank_sum: exact method limited to 50 samples");
    std::vector<long> ranks2(ranks.size());
    long s2 = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      ranks2[i] = std::lround(2.0 * ranks[i]);
      if (i < na) s2 += ranks2[i];
    }
    r.p = exact_p(ranks2, na, s2);
  } else {
    r.p = normal_p(pooled, na, r.u);
  }
  return r;
}

std::vector<double> benjamini_hochberg(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return p[x] < p[y]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    const double v = p[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1);
    running = std::min(running, v);
    adj[order[i]] = running;
  }
  return adj;
}

DgeResult rank_genes_groups(const Dataset& ds, const std::vector<std::size_t>& spots,
                            const std::vector<std::size_t>& groups, std::size_t C, const DgeOptions& opts) {
  if (spots.size() != groups.size()) throw std::invalid_argument("rank_genes_groups: spots and groups differ in length");
  std::vector<std::size_t> sizes(C, 0);
  for (auto g : groups) {
    if (g >= C) throw std::invalid_argument("rank_genes_groups: group index out of range");
    ++sizes[g];
  }
  DgeResult out;
  std::vector<std::size_t> tested;
  for (std::size_t c = 0; c < C; ++c) {
    const std::string name = c < ds.class_names.size() ? ds.class_names[c] : std::to_string(c);
    if (sizes[c] == 0) {
      out.warnings.push_back("class '" + name + "' has no high-confidence spots; excluded from DGE");
    } else {
      tested.push_back(c);
    }
  }
  if (tested.size() < 2) throw std::invalid_argument("rank_genes_groups: at least two groups are required");

  const std::size_t n = spots.size();
  const std::size_t d = ds.panel.d();
  for (auto c : tested) out.classes.push_back(ClassDge{c, sizes[c], std::vector<GeneStat>(d)});

  std::vector<double> column(n);
  std::vector<double> in;
  std::vector<double> rest;
  for (std::size_t g = 0; g < d; ++g) {
    for (std::size_t i = 0; i < n; ++i) column[i] = ds.spots.at(spots[i]).expr.at(g);
    for (auto& cls : out.classes) {
      in.clear();
      rest.clear();
      double expressing = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (groups[i] == cls.cls) {
          in.push_back(column[i]);
          if (column[i] > 0.0) expressing += 1.0;
        } else {
          rest.push_back(column[i]);
        }
      }
      GeneStat s;
      s.gene = g;
      const auto mean = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      };
      s.mean_expression = mean(in);
      s.effect = s.mean_expression - mean(rest);
      s.fraction_expressing = expressing / static_cast<double>(in.size());
      const auto w = wilcoxon_rank_sum(in, rest);
      s.u = w.u;
      s.p = w.p;
      cls.ranked[g] = s;
    }
  }
  for (auto& cls : out.classes) {
    if (opts.benjamini_hochberg) {
      std::vector<double> p;
      for (const auto& s : cls.ranked) p.push_back(s.p);
      const auto adj = benjamini_hochberg(p);
      for (std::size_t g = 0; g < d; ++g) cls.ranked[g].p = adj[g];
    }
    std::sort(cls.ranked.begin(), cls.ranked.end(), [](const GeneStat& x, const GeneStat& y) {
      if (x.p != y.p) return x.p < y.p;
      if (x.effect != y.effect) return x.effect > y.effect;
      return x.gene < y.gene;
    });
  }
  return out;
}

DgeResult dge_from_predictions(const Dataset& ds, const std::vector<Prediction>& kept, std::size_t C,
                               const DgeOptions& opts) {
  std::vector<std::size_t> spots;
  std::vector<std::size_t> groups;
  for (const auto& p : kept) {
    spots.push_back(p.spot);
    groups.push_back(p.predicted);
  }
  return rank_genes_groups(ds, spots, groups, C, opts);
}

namespace {

std::ofstream open_tsv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

const std::string& class_name(const Dataset& ds, std::size_t c) {
  if (c >= ds.class_names.size()) throw std::out_of_range("class index " + std::to_string(c) + " has no name");
  return ds.class_names[c];
}

}  // namespace

void write_prediction_map(const std::filesystem::path& path, const Dataset& ds,
                          const std::vector<Prediction>& predictions) {
  auto out = open_tsv(path);
  out << "spot_id\tx\ty\ttruth\tpredicted\tconfidence\n";
  for (const auto& p : predictions) {
    const auto& s = ds.spots.at(p.spot);
    out << s.spot_id << '\t' << format_double6(s.x) << '\t' << format_double6(s.y) << '\t'
        << (p.truth ? class_name(ds, *p.truth) : std::string("NA")) << '\t' << class_name(ds, p.predicted) << '\t'
        << format_double6(p.confidence) << '\n';
  }
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void write_dge_dotplot(const std::filesystem::path& path, const Dataset& ds, const DgeResult& dge, std::size_t top_n) {
  auto out = open_tsv(path);
  out << "class\tgene\tp\tfraction_expressing\tmean_expression\n";
  for (const auto& cls : dge.classes) {
    const std::size_t take = std::min(top_n, cls.ranked.size());
    for (std::size_t i = 0; i < take; ++i) {
      const auto& s = cls.ranked[i];
      out << class_name(ds, cls.cls) << '\t' << ds.panel[s.gene] << '\t' << format_double6(s.p) << '\t'
          << format_double6(s.fraction_expressing) << '\t' << format_double6(s.mean_expression) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void emit_reports(const std::filesystem::path& out_dir, const Dataset& ds, const std::vector<Prediction>& predictions,
                  const DgeResult& dge, std::size_t top_n) {
  std::filesystem::create_directories(out_dir);
  write_prediction_map(out_dir / "prediction_map.tsv", ds, predictions);
  write_dge_dotplot(out_dir / "dge_dotplot.tsv", ds, dge, top_n);
}

}  // namespace biomorph
