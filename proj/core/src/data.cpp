#include "biomorph/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace biomorph {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::string where(const fs::path& file, std::size_t row) { return file.string() + ":" + std::to_string(row); }

double parse_number(const std::string& s, const fs::path& file, std::size_t row) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty() || !std::isfinite(v)) {
    throw DataError(where(file, row) + ": malformed number '" + s + "'");
  }
  return v;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

struct Matrix {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

Matrix read_matrix(const fs::path& path) {
  auto in = open_in(path);
  Matrix m;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  strip_cr(line);
  m.header = split_tabs(line);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != m.header.size()) {
      throw DataError(where(path, row) + ": expected " + std::to_string(m.header.size()) + " columns, found " +
                      std::to_string(fields.size()));
    }
    std::vector<double> values;
    values.reserve(fields.size());
    for (const auto& f : fields) values.push_back(parse_number(f, path, row));
    m.rows.push_back(std::move(values));
  }
  return m;
}

void write_row(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << '\t';
    out << format_double(values[i]);
  }
  out << '\n';
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format_double6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

GenePanel::GenePanel(std::vector<std::string> genes) : genes_(std::move(genes)) {
  if (genes_.empty()) throw DataError("gene panel must contain at least one gene");
  for (std::size_t i = 0; i < genes_.size(); ++i) {
    if (!index_.emplace(genes_[i], i).second) throw DataError("duplicate gene name '" + genes_[i] + "'");
  }
}

std::optional<std::size_t> GenePanel::index_of(const std::string& gene) const {
  if (auto it = index_.find(gene); it != index_.end()) return it->second;
  return std::nullopt;
}

void PathwayDb::add(std::string name, std::vector<std::string> genes) {
  if (index_.count(name)) throw DataError("duplicate pathway name '" + name + "'");
  std::vector<std::string> unique;
  std::unordered_set<std::string> seen;
  for (auto& g : genes) {
    if (!g.empty() && seen.insert(g).second) unique.push_back(std::move(g));
  }
  if (unique.empty()) throw DataError("pathway '" + name + "' has no genes");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(unique)});
}

const PathwayDb::Entry* PathwayDb::find(const std::string& name) const {
  if (auto it = index_.find(name); it != index_.end()) return &entries_[it->second];
  return nullptr;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val" || s == "validation") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

Split Dataset::split_of(const SpotRecord& s) const {
  auto it = sample_splits.find(s.sample_id);
  if (it == sample_splits.end()) throw DataError("sample '" + s.sample_id + "' has no split assignment");
  return it->second;
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spots.size(); ++i) {
    if (split_of(spots[i]) == s) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  const std::size_t morph_width = spots.empty() ? 0 : spots.front().morph.size();
  for (const auto& s : spots) {
    if (s.morph.empty() || s.morph.size() != morph_width) {
      throw DataError("spot '" + s.spot_id + "': morphology width " + std::to_string(s.morph.size()) +
                      ", expected " + std::to_string(morph_width));
    }
    if (s.expr.size() != panel.d()) throw DataError("spot '" + s.spot_id + "': expression width does not match panel");
    if (!std::isfinite(s.x) || !std::isfinite(s.y)) throw DataError("spot '" + s.spot_id + "': non-finite coordinates");
    if (s.label && *s.label >= class_names.size()) throw DataError("spot '" + s.spot_id + "': label out of range");
    split_of(s);
  }
}

PathwayDb parse_gmt(std::istream& in, const std::string& source) {
  PathwayDb db;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 3) {
      throw DataError(source + ":" + std::to_string(row) + ": gene set line needs a name, a description and genes");
    }
    std::vector<std::string> genes(std::make_move_iterator(fields.begin() + 2), std::make_move_iterator(fields.end()));
    try {
      db.add(fields[0], std::move(genes));
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(row) + ": " + e.what());
    }
  }
  return db;
}

PathwayDb parse_gmt(const fs::path& path) {
  auto in = open_in(path);
  return parse_gmt(in, path.string());
}

void write_gmt(std::ostream& out, const PathwayDb& db) {
  for (const auto& e : db.entries()) {
    out << e.name << "\tNA";
    for (const auto& g : e.genes) out << '\t' << g;
    out << '\n';
  }
}

void write_gmt(const fs::path& path, const PathwayDb& db) {
  auto out = open_out(path);
  write_gmt(out, db);
}

Dataset load_dataset(const fs::path& manifest) {
  json j;
  {
    auto in = open_in(manifest);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError(manifest.string() + ": invalid JSON: " + e.what());
    }
  }
  static const std::set<std::string> kKeys{"class_names", "spots_file", "features_file", "expression_file",
                                           "sample_splits"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.count(key)) throw DataError(manifest.string() + ": unknown manifest key '" + key + "'");
  }
  for (const auto& key : kKeys) {
    if (!j.contains(key)) throw DataError(manifest.string() + ": missing manifest key '" + key + "'");
  }
  const fs::path base = manifest.parent_path();
  Dataset ds;
  ds.class_names = j.at("class_names").get<std::vector<std::string>>();
  if (ds.class_names.empty()) throw DataError(manifest.string() + ": class_names is empty");
  std::unordered_map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) {
    if (!class_index.emplace(ds.class_names[i], i).second) {
      throw DataError(manifest.string() + ": duplicate class '" + ds.class_names[i] + "'");
    }
  }
  for (const auto& [sample, split] : j.at("sample_splits").items()) {
    ds.sample_splits[sample] = split_from_string(split.get<std::string>());
  }

  // spots table
  const fs::path spots_path = base / j.at("spots_file").get<std::string>();
  {
    auto in = open_in(spots_path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(spots_path.string() + ": empty file");
    strip_cr(line);
    const std::vector<std::string> expected{"spot_id", "sample_id", "x", "y", "label"};
    if (split_tabs(line) != expected) {
      throw DataError(spots_path.string() + ":1: header must be spot_id, sample_id, x, y, label");
    }
    std::size_t row = 1;
    std::unordered_set<std::string> ids;
    while (std::getline(in, line)) {
      ++row;
      strip_cr(line);
      if (line.empty()) continue;
      const auto f = split_tabs(line);
      if (f.size() != 5) throw DataError(where(spots_path, row) + ": expected 5 columns");
      SpotRecord s;
      s.spot_id = f[0];
      s.sample_id = f[1];
      if (!ids.insert(s.spot_id).second) throw DataError(where(spots_path, row) + ": duplicate spot id");
      if (!ds.sample_splits.count(s.sample_id)) {
        throw DataError(where(spots_path, row) + ": sample '" + s.sample_id + "' missing from sample_splits");
      }
      s.x = parse_number(f[2], spots_path, row);
      s.y = parse_number(f[3], spots_path, row);
      if (!f[4].empty() && f[4] != "NA") {
        auto it = class_index.find(f[4]);
        if (it == class_index.end()) throw DataError(where(spots_path, row) + ": unknown class label '" + f[4] + "'");
        s.label = it->second;
      }
      ds.spots.push_back(std::move(s));
    }
  }

  // morphology features
  const fs::path feat_path = base / j.at("features_file").get<std::string>();
  {
    auto m = read_matrix(feat_path);
    if (m.header.size() != kMorphDim) {
      throw DataError(feat_path.string() + ":1: expected " + std::to_string(kMorphDim) + " feature columns, found " +
                      std::to_string(m.header.size()));
    }
    if (m.rows.size() != ds.spots.size()) {
      throw DataError(feat_path.string() + ": " + std::to_string(m.rows.size()) + " rows but " +
                      std::to_string(ds.spots.size()) + " spots");
    }
    for (std::size_t i = 0; i < m.rows.size(); ++i) ds.spots[i].morph = std::move(m.rows[i]);
  }

  // expression, possibly split across several files whose panels are intersected
  std::vector<fs::path> expr_paths;
  const auto& ef = j.at("expression_file");
  if (ef.is_array()) {
    for (const auto& p : ef) expr_paths.push_back(base / p.get<std::string>());
  } else {
    expr_paths.push_back(base / ef.get<std::string>());
  }
  if (expr_paths.empty()) throw DataError(manifest.string() + ": expression_file list is empty");
  std::vector<Matrix> blocks;
  for (const auto& p : expr_paths) blocks.push_back(read_matrix(p));
  std::vector<std::string> common = blocks.front().header;
  for (std::size_t b = 1; b < blocks.size(); ++b) {
    std::unordered_set<std::string> present(blocks[b].header.begin(), blocks[b].header.end());
    std::erase_if(common, [&](const std::string& g) { return !present.count(g); });
  }
  if (common.empty()) throw DataError(manifest.string() + ": expression files share no genes");
  ds.panel = GenePanel(common);
  std::size_t total_rows = 0;
  for (const auto& b : blocks) total_rows += b.rows.size();
  if (total_rows != ds.spots.size()) {
    throw DataError(expr_paths.front().string() + ": " + std::to_string(total_rows) + " expression rows but " +
                    std::to_string(ds.spots.size()) + " spots");
  }
  std::size_t spot = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t c = 0; c < blocks[b].header.size(); ++c) col.emplace(blocks[b].header[c], c);
    std::vector<std::size_t> pick;
    for (const auto& g : common) pick.push_back(col.at(g));
    for (std::size_t r = 0; r < blocks[b].rows.size(); ++r, ++spot) {
      const auto& src = blocks[b].rows[r];
      auto& dst = ds.spots[spot].expr;
      dst.resize(pick.size());
      for (std::size_t c = 0; c < pick.size(); ++c) {
        if (src[pick[c]] < 0.0) throw DataError(where(expr_paths[b], r + 2) + ": negative expression value");
        dst[c] = src[pick[c]];
      }
    }
  }
  ds.validate();
  return ds;
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  {
    json j;
    j["class_names"] = ds.class_names;
    j["spots_file"] = "spots.tsv";
    j["features_file"] = "features.tsv";
    j["expression_file"] = "expression.tsv";
    json splits = json::object();
    for (const auto& [sample, split] : ds.sample_splits) splits[sample] = to_string(split);
    j["sample_splits"] = splits;
    auto out = open_out(dir / "manifest.json");
    out << j.dump(2) << '\n';
  }
  {
    auto out = open_out(dir / "spots.tsv");
    out << "spot_id\tsample_id\tx\ty\tlabel\n";
    for (const auto& s : ds.spots) {
      out << s.spot_id << '\t' << s.sample_id << '\t' << format_double(s.x) << '\t' << format_double(s.y) << '\t'
          << (s.label ? ds.class_names.at(*s.label) : std::string("NA")) << '\n';
    }
  }
  {
    auto out = open_out(dir / "features.tsv");
    for (std::size_t c = 0; c < kMorphDim; ++c) out << (c ? "\t" : "") << "f" << c;
    out << '\n';
    for (const auto& s : ds.spots) write_row(out, s.morph);
  }
  {
    auto out = open_out(dir / "expression.tsv");
    for (std::size_t c = 0; c < ds.panel.d(); ++c) out << (c ? "\t" : "") << ds.panel[c];
    out << '\n';
    for (const auto& s : ds.spots) write_row(out, s.expr);
  }
}

Dataset preprocess_expression(const Dataset& ds, PreprocessReport* report) {
  PreprocessReport local;
  const std::size_t d = ds.panel.d();
  for (const auto& s : ds.spots) {
    for (double v : s.expr) {
      if (v < 0.0) throw DataError("spot '" + s.spot_id + "': negative expression value");
    }
  }
  if (ds.log_normalized) {
    for (const auto& s : ds.spots) {
      double total = 0.0;
      for (double v : s.expr) total += std::expm1(v);
      if (std::abs(total - kTargetCounts) > 1e-9 * kTargetCounts) {
        throw DataError("spot '" + s.spot_id + "': normalized expression does not sum to the target count");
      }
    }
    if (report) *report = local;
    return ds;
  }

  std::vector<double> gene_total(d, 0.0);
  for (const auto& s : ds.spots) {
    for (std::size_t g = 0; g < d; ++g) gene_total[g] += s.expr[g];
  }
  std::vector<std::size_t> keep;
  std::vector<std::string> names;
  for (std::size_t g = 0; g < d; ++g) {
    if (gene_total[g] > 0.0) {
      keep.push_back(g);
      names.push_back(ds.panel[g]);
    }
  }
  if (keep.empty()) throw DataError("preprocess: every gene has zero expression");
  local.genes_removed = d - keep.size();

  Dataset out;
  out.panel = GenePanel(std::move(names));
  out.class_names = ds.class_names;
  out.sample_splits = ds.sample_splits;
  out.log_normalized = true;
  for (const auto& s : ds.spots) {
    std::vector<double> expr(keep.size());
    double total = 0.0;
    for (std::size_t c = 0; c < keep.size(); ++c) {
      expr[c] = s.expr[keep[c]];
      total += expr[c];
    }
    if (total <= 0.0) {
      ++local.spots_removed;
      continue;
    }
    const double factor = kTargetCounts / total;
    for (auto& v : expr) v = std::log1p(v * factor);
    SpotRecord copy = s;
    copy.expr = std::move(expr);
    out.spots.push_back(std::move(copy));
  }
  if (report) *report = local;
  return out;
}

}  // namespace biomorph
