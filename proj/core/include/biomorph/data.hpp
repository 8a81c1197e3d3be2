#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace biomorph {

inline constexpr std::size_t kMorphDim = 1024;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered, unique gene names.
class GenePanel {
 public:
  GenePanel() = default;
  explicit GenePanel(std::vector<std::string> genes);

  std::size_t d() const noexcept { return genes_.size(); }
  const std::vector<std::string>& genes() const noexcept { return genes_; }
  const std::string& operator[](std::size_t i) const { return genes_.at(i); }
  std::optional<std::size_t> index_of(const std::string& gene) const;

 private:
  std::vector<std::string> genes_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct SpotRecord {
  std::string spot_id;
  std::string sample_id;
  double x = 0.0;
  double y = 0.0;
  std::vector<double> morph;
  std::vector<double> expr;
  std::optional<std::size_t> label;
};

/// Named gene sets in file order. Genes within a set keep first-seen order.
class PathwayDb {
 public:
  struct Entry {
    std::string name;
    std::vector<std::string> genes;
  };

  void add(std::string name, std::vector<std::string> genes);
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  const Entry* find(const std::string& name) const;

  friend bool operator==(const PathwayDb& a, const PathwayDb& b);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline bool operator==(const PathwayDb::Entry& a, const PathwayDb::Entry& b) {
  return a.name == b.name && a.genes == b.genes;
}
inline bool operator==(const PathwayDb& a, const PathwayDb& b) { return a.entries_ == b.entries_; }

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Dataset {
  GenePanel panel;
  std::vector<SpotRecord> spots;
  std::vector<std::string> class_names;
  std::map<std::string, Split> sample_splits;
  /// Set once expression has been total-count normalized and log1p transformed.
  bool log_normalized = false;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  Split split_of(const SpotRecord& s) const;
  std::vector<std::size_t> indices(Split s) const;
  /// Throws DataError when an invariant (widths, labels, split coverage) fails.
  void validate() const;
};

PathwayDb parse_gmt(std::istream& in, const std::string& source = "<stream>");
PathwayDb parse_gmt(const std::filesystem::path& path);
void write_gmt(std::ostream& out, const PathwayDb& db);
void write_gmt(const std::filesystem::path& path, const PathwayDb& db);

/// Reads a JSON manifest naming the spots table, feature and expression
/// matrices (paths relative to the manifest) and the sample split map.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Writes manifest.json, spots.tsv, features.tsv and expression.tsv into `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);

struct PreprocessReport {
  std::size_t genes_removed = 0;
  std::size_t spots_removed = 0;
};

inline constexpr double kTargetCounts = 1e4;

/// Drops all-zero genes and spots, scales each spot to kTargetCounts total,
/// then applies log1p. On already normalized data only the invariants are
/// re-checked.
Dataset preprocess_expression(const Dataset& ds, PreprocessReport* report = nullptr);

/// Shortest round-trip decimal form.
std::string format_double(double v);
/// Six significant digits.
std::string format_double6(double v);

}  // namespace biomorph
