#include "lookalike/search_index.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "lookalike/binary_io.hpp"
#include "lookalike/parallel.hpp"

namespace lookalike {

namespace {

constexpr char kIndexMagic[5] = "RSSI";
constexpr std::uint16_t kIndexVersion = 1;

bool ranks_before(const SearchResult& a, const SearchResult& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.record < b.record;
}

void keep_top(std::vector<SearchResult>& v, std::size_t k) {
  if (v.size() > k) {
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), ranks_before);
    v.resize(k);
  } else {
    std::sort(v.begin(), v.end(), ranks_before);
  }
}

void write_embedding_config(std::ostream& os, const EmbeddingConfig& c) {
  binio::write_le<double>(os, c.n);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.d));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.seq_len));
  binio::write_le<double>(os, c.band_start);
  binio::write_le<double>(os, c.band_width);
  binio::write_le<double>(os, c.weight);
}

EmbeddingConfig read_embedding_config(std::istream& is) {
  EmbeddingConfig c;
  c.n = binio::read_le<double>(is);
  c.d = binio::read_le<std::uint32_t>(is);
  c.seq_len = binio::read_le<std::uint32_t>(is);
  c.band_start = binio::read_le<double>(is);
  c.band_width = binio::read_le<double>(is);
  c.weight = binio::read_le<double>(is);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::FormatError, std::string("embedded config: ") + e.what());
  }
  return c;
}

}  // namespace

Index Index::from_records(std::vector<FeatureRecord> records, std::optional<EmbeddingConfig> ecfg) {
  if (records.empty()) throw Error(ErrorCode::EmptyDataset, "no records to index");
  Index idx;
  idx.dim_ = records.front().feature.size();
  if (idx.dim_ == 0) throw Error(ErrorCode::ShapeError, "features must be non-empty");
  if (ecfg) {
    ecfg->validate();
    if (ecfg->d != idx.dim_) throw Error(ErrorCode::ShapeError, "embedding dimension differs from feature dimension");
  }
  idx.embedding_ = ecfg;
  for (auto& r : records) {
    if (r.feature.size() != idx.dim_) throw Error(ErrorCode::ShapeError, "inconsistent feature dimensions");
    if (r.embedded != ecfg.has_value()) throw Error(ErrorCode::InvalidConfig, "record embedding flag disagrees with index");
    double norm2 = 0.0;
    bool finite = true;
    for (double v : r.feature) {
      finite = finite && std::isfinite(v);
      norm2 += static_cast<double>(static_cast<float>(v)) * static_cast<float>(v);
    }
    if (!finite || !(norm2 > 0.0)) {
      ++idx.dropped_;
      continue;
    }
    for (double v : r.feature) idx.features_.push_back(static_cast<float>(v));
    idx.source_ids_.push_back(std::move(r.source_id));
    idx.start_bins_.push_back(r.start_bin);
    idx.center_freqs_.push_back(r.center_freq);
  }
  if (idx.size() == 0) throw Error(ErrorCode::EmptyDataset, "every record had a zero-norm feature");
  idx.finalize();
  return idx;
}

void Index::finalize() {
  inv_norms_.assign(size(), 0.0);
  for (std::size_t i = 0; i < size(); ++i) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double v = features_[i * dim_ + j];
      norm2 += v * v;
    }
    inv_norms_[i] = 1.0 / std::sqrt(norm2);
  }
}

std::span<const float> Index::feature(std::size_t i) const {
  if (i >= size()) throw Error(ErrorCode::IndexError, "record index out of range");
  return std::span<const float>(features_).subspan(i * dim_, dim_);
}

void Index::score_block(std::span<const double> q, double q_norm, std::size_t lo, std::size_t hi,
                        std::span<double> out) const {
  using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const MatF> block(features_.data() + lo * dim_, static_cast<Eigen::Index>(hi - lo),
                                     static_cast<Eigen::Index>(dim_));
  const Eigen::Map<const Eigen::VectorXd> qv(q.data(), static_cast<Eigen::Index>(dim_));
  const Eigen::VectorXd dots = block.cast<double>() * qv;
  for (std::size_t i = lo; i < hi; ++i) {
    out[i - lo] = dots[static_cast<Eigen::Index>(i - lo)] * inv_norms_[i] / q_norm;
  }
}

std::vector<double> Index::score_all(std::span<const double> q, std::size_t block_rows) const {
  if (q.size() != dim_) throw Error(ErrorCode::ShapeError, "query dimension differs from index");
  double q_norm = 0.0;
  for (double v : q) q_norm += v * v;
  q_norm = std::sqrt(q_norm);
  if (!(q_norm > 0.0) || !std::isfinite(q_norm)) throw Error(ErrorCode::NumericalError, "query feature has zero norm");
  block_rows = std::max<std::size_t>(1, block_rows);
  std::vector<double> scores(size());
  for (std::size_t lo = 0; lo < size(); lo += block_rows) {
    const std::size_t hi = std::min(size(), lo + block_rows);
    score_block(q, q_norm, lo, hi, std::span<double>(scores).subspan(lo, hi - lo));
  }
  return scores;
}

std::vector<SearchResult> Index::query_vector(std::span<const double> q, std::size_t k, std::size_t threads,
                                              std::span<const std::size_t> skip, std::size_t block_rows) const {
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
  if (q.size() != dim_) throw Error(ErrorCode::ShapeError, "query dimension differs from index");
  double q_norm = 0.0;
  for (double v : q) q_norm += v * v;
  q_norm = std::sqrt(q_norm);
  if (!(q_norm > 0.0) || !std::isfinite(q_norm)) throw Error(ErrorCode::NumericalError, "query feature has zero norm");

  block_rows = std::max<std::size_t>(1, block_rows);
  const std::size_t blocks = (size() + block_rows - 1) / block_rows;
  std::vector<std::vector<SearchResult>> partial(blocks);
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t lo = b * block_rows;
    const std::size_t hi = std::min(size(), lo + block_rows);
    std::vector<double> scores(hi - lo);
    score_block(q, q_norm, lo, hi, scores);
    auto& mine = partial[b];
    mine.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      if (std::find(skip.begin(), skip.end(), i) != skip.end()) continue;
      mine.push_back({i, scores[i - lo]});
    }
    keep_top(mine, k);
  });
  std::vector<SearchResult> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  keep_top(merged, k);
  return merged;
}

void Index::write(std::ostream& os) const {
  binio::write_magic(os, kIndexMagic);
  binio::write_le<std::uint16_t>(os, kIndexVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim_));
  binio::write_le<std::uint64_t>(os, size());
  binio::write_le<std::uint8_t>(os, embedded() ? 1 : 0);
  if (embedding_) write_embedding_config(os, *embedding_);
  for (float v : features_) binio::write_le<float>(os, v);
  for (std::size_t i = 0; i < size(); ++i) {
    binio::write_string(os, source_ids_[i], 4);
    binio::write_le<std::int64_t>(os, start_bins_[i]);
    binio::write_le<double>(os, center_freqs_[i]);
  }
  if (!os) throw Error(ErrorCode::IOError, "failed writing index");
}

Index Index::read(std::istream& is) {
  binio::expect_magic(is, kIndexMagic);
  if (binio::read_le<std::uint16_t>(is) != kIndexVersion) throw Error(ErrorCode::FormatError, "unsupported RSSI version");
  Index idx;
  idx.dim_ = binio::read_le<std::uint32_t>(is);
  const auto count = binio::read_le<std::uint64_t>(is);
  const auto flag = binio::read_le<std::uint8_t>(is);
  if (flag > 1) throw Error(ErrorCode::FormatError, "bad embedded flag");
  if (idx.dim_ == 0 || count == 0 || count > (std::uint64_t{1} << 40) / idx.dim_) {
    throw Error(ErrorCode::FormatError, "implausible index dimensions");
  }
  if (flag == 1) {
    idx.embedding_ = read_embedding_config(is);
    if (idx.embedding_->d != idx.dim_) throw Error(ErrorCode::FormatError, "embedding dimension mismatch");
  }
  idx.features_.resize(count * idx.dim_);
  for (auto& v : idx.features_) v = binio::read_le<float>(is);
  idx.source_ids_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    idx.source_ids_.push_back(binio::read_string(is, 4));
    idx.start_bins_.push_back(binio::read_le<std::int64_t>(is));
    idx.center_freqs_.push_back(binio::read_le<double>(is));
  }
  idx.finalize();
  for (double inv : idx.inv_norms_) {
    if (!std::isfinite(inv)) throw Error(ErrorCode::FormatError, "index contains a zero-norm feature");
  }
  return idx;
}

void Index::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IOError, "cannot open " + path.string() + " for writing");
  write(os);
}

Index Index::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IOError, "cannot open " + path.string());
  return read(is);
}

Index build_index(std::span<const Snippet> snippets, const ModelParams<float>& model,
                  const std::optional<EmbeddingConfig>& ecfg, std::size_t threads) {
  if (snippets.empty()) throw Error(ErrorCode::EmptyDataset, "no snippets to index");
  std::optional<EmbeddingTable> table;
  if (ecfg) {
    if (ecfg->d != model.config.latent_dim) throw Error(ErrorCode::ShapeError, "embedding dimension differs from latent_dim");
    table.emplace(*ecfg);
  }
  auto latents = encode_snippets(model, snippets, threads);
  std::vector<FeatureRecord> records(snippets.size());
  for (std::size_t i = 0; i < snippets.size(); ++i) {
    auto& r = records[i];
    r.feature = table ? table->embed(latents[i], snippets[i].center_freq) : std::move(latents[i]);
    r.source_id = snippets[i].source_id;
    r.start_bin = snippets[i].start_bin;
    r.center_freq = snippets[i].center_freq;
    r.embedded = table.has_value();
  }
  return Index::from_records(std::move(records), ecfg);
}

std::vector<double> query_feature(const Index& index, const ModelParams<float>& model, const Snippet& soi,
                                  std::optional<double> soi_freq) {
  if (index.embedded() && !soi_freq) throw Error(ErrorCode::MissingFrequency, "embedded index needs the query frequency");
  auto z = encode_snippets(model, std::span<const Snippet>(&soi, 1)).front();
  if (z.size() != index.dim()) throw Error(ErrorCode::ShapeError, "model latent size differs from index dimension");
  if (index.embedded()) return embed_feature(z, freq_to_index(*soi_freq, *index.embedding()), *index.embedding());
  return z;
}

std::vector<SearchResult> query(const Index& index, const ModelParams<float>& model, const Snippet& soi,
                                std::optional<double> soi_freq, const QueryOptions& options) {
  const auto q = query_feature(index, model, soi, soi_freq);
  std::vector<std::size_t> skip;
  if (options.exclude_self) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index.source_id(i) == soi.source_id && index.start_bin(i) == soi.start_bin) skip.push_back(i);
    }
  }
  return index.query_vector(q, options.k, options.threads, skip);
}

std::map<double, std::size_t> frequency_histogram(std::span<const SearchResult> results, const Index& index,
                                                  double bin_width) {
  if (!(bin_width > 0.0) || !std::isfinite(bin_width)) throw Error(ErrorCode::InvalidConfig, "bin width must be positive");
  if (results.empty()) throw Error(ErrorCode::EmptyDataset, "no results to histogram");
  std::map<double, std::size_t> hist;
  for (const auto& r : results) {
    const double f = index.center_freq(r.record);
    ++hist[std::floor(f / bin_width) * bin_width];
  }
  return hist;
}

void write_results_csv(std::ostream& os, std::span<const SearchResult> results, const Index& index) {
  os << "rank,score,source_id,start_bin,center_freq_hz\n";
  const auto old = os.precision(10);
  for (std::size_t r = 0; r < results.size(); ++r) {
    const auto i = results[r].record;
    os << r + 1 << ',' << results[r].score << ',' << index.source_id(i) << ',' << index.start_bin(i) << ','
       << index.center_freq(i) << '\n';
  }
  os.precision(old);
}

void write_histogram_csv(std::ostream& os, const std::map<double, std::size_t>& histogram) {
  os << "bin_start_hz,count\n";
  const auto old = os.precision(12);
  for (const auto& [bin, count] : histogram) os << bin << ',' << count << '\n';
  os.precision(old);
}

}  // namespace lookalike
