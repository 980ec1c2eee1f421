#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lookalike {

// Sinusoidal frequency embedding. Position k in [0, seq_len] indexes a
// frequency chunk of the band; entry i of the d-dimensional adjustment is
// sin(k / n^(i/d)) for even i and cos(k / n^((i-1)/d)) for odd i.
struct EmbeddingConfig {
  double n = 10000.0;
  std::size_t d = 5;
  std::size_t seq_len = 1000;
  double band_start = 0.0;  // Hz
  double band_width = 0.0;  // Hz
  double weight = 1.0;

  // Throws InvalidConfig.
  void validate() const;

  bool operator==(const EmbeddingConfig&) const = default;
};

std::vector<double> positional_embedding(std::size_t k, const EmbeddingConfig& cfg);

// floor((f - band_start) / band_width * seq_len); OutOfBand outside
// [band_start, band_start + band_width).
std::size_t freq_to_index(double f, const EmbeddingConfig& cfg);

// z + weight * positional_embedding(k).
std::vector<double> embed_feature(std::span<const double> z, std::size_t k, const EmbeddingConfig& cfg);

// Immutable table of positional_embedding(k) for k in [0, seq_len].
class EmbeddingTable {
 public:
  explicit EmbeddingTable(const EmbeddingConfig& cfg);

  const EmbeddingConfig& config() const { return cfg_; }
  std::span<const double> row(std::size_t k) const;
  std::vector<double> embed(std::span<const double> z, double freq_hz) const;

 private:
  EmbeddingConfig cfg_;
  std::vector<double> table_;
};

}  // namespace lookalike
