#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lookalike/bvae.hpp"
#include "lookalike/embedding.hpp"

namespace lookalike {

struct FeatureRecord {
  std::vector<double> feature;
  std::string source_id;
  std::int64_t start_bin = 0;
  double center_freq = 0.0;
  bool embedded = false;
};

struct SearchResult {
  std::size_t record = 0;  // row in the index
  double score = 0.0;      // cosine similarity
};

struct QueryOptions {
  std::size_t k = 10;
  // Drop records whose (source_id, start_bin) equals the query's.
  bool exclude_self = false;
  std::size_t threads = 1;
};

// Rows scored per block in a query.
inline constexpr std::size_t kDefaultBlockRows = 4096;

// Immutable feature store answering exact top-k cosine queries.
class Index {
 public:
  Index() = default;

  // Zero-norm and non-finite rows are dropped and counted. All features must
  // share one dimension; ecfg must be set iff the features carry the
  // frequency embedding.
  static Index from_records(std::vector<FeatureRecord> records, std::optional<EmbeddingConfig> ecfg);

  std::size_t size() const { return source_ids_.size(); }
  std::size_t dim() const { return dim_; }
  bool embedded() const { return embedding_.has_value(); }
  const std::optional<EmbeddingConfig>& embedding() const { return embedding_; }
  std::size_t dropped() const { return dropped_; }

  std::span<const float> feature(std::size_t i) const;
  const std::string& source_id(std::size_t i) const { return source_ids_.at(i); }
  std::int64_t start_bin(std::size_t i) const { return start_bins_.at(i); }
  double center_freq(std::size_t i) const { return center_freqs_.at(i); }

  // Top-k by cosine similarity, descending score, ties by ascending row.
  // `skip` rows are never returned.
  std::vector<SearchResult> query_vector(std::span<const double> q, std::size_t k, std::size_t threads = 1,
                                         std::span<const std::size_t> skip = {},
                                         std::size_t block_rows = kDefaultBlockRows) const;

  // Scores of every row in record order (blocked product).
  std::vector<double> score_all(std::span<const double> q, std::size_t block_rows = kDefaultBlockRows) const;

  void write(std::ostream& os) const;
  static Index read(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static Index load(const std::filesystem::path& path);

 private:
  void score_block(std::span<const double> q, double q_norm, std::size_t lo, std::size_t hi,
                   std::span<double> out) const;
  void finalize();

  std::size_t dim_ = 0;
  std::optional<EmbeddingConfig> embedding_;
  std::vector<float> features_;  // size() x dim_, row-major
  std::vector<double> inv_norms_;
  std::vector<std::string> source_ids_;
  std::vector<std::int64_t> start_bins_;
  std::vector<double> center_freqs_;
  std::size_t dropped_ = 0;
};

// Encodes snippets in inference mode (z = mu) and, when ecfg is given, adds
// the frequency embedding of each snippet's center frequency.
Index build_index(std::span<const Snippet> snippets, const ModelParams<float>& model,
                  const std::optional<EmbeddingConfig>& ecfg, std::size_t threads = 1);

// Query feature for a snippet, computed exactly as build_index does.
std::vector<double> query_feature(const Index& index, const ModelParams<float>& model, const Snippet& soi,
                                  std::optional<double> soi_freq);

std::vector<SearchResult> query(const Index& index, const ModelParams<float>& model, const Snippet& soi,
                                std::optional<double> soi_freq, const QueryOptions& options);

// Counts of result center frequencies per bin, keyed by bin start (Hz).
std::map<double, std::size_t> frequency_histogram(std::span<const SearchResult> results, const Index& index,
                                                  double bin_width);

// CSV: rank,score,source_id,start_bin,center_freq_hz
void write_results_csv(std::ostream& os, std::span<const SearchResult> results, const Index& index);
// CSV: bin_start_hz,count
void write_histogram_csv(std::ostream& os, const std::map<double, std::size_t>& histogram);

}  // namespace lookalike
