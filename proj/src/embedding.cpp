#include "lookalike/embedding.hpp"

#include <cmath>

#include "lookalike/error.hpp"

namespace lookalike {

void EmbeddingConfig::validate() const {
  if (d < 1) throw Error(ErrorCode::InvalidConfig, "embedding dimension must be >= 1");
  if (seq_len < 1) throw Error(ErrorCode::InvalidConfig, "sequence length must be >= 1");
  if (!(n > 1.0) || !std::isfinite(n)) throw Error(ErrorCode::InvalidConfig, "embedding scale n must exceed 1");
  if (!(band_width > 0.0) || !std::isfinite(band_width) || !std::isfinite(band_start)) {
    throw Error(ErrorCode::InvalidConfig, "band width must be positive");
  }
  if (!std::isfinite(weight)) throw Error(ErrorCode::InvalidConfig, "embedding weight must be finite");
}

std::vector<double> positional_embedding(std::size_t k, const EmbeddingConfig& cfg) {
  if (k > cfg.seq_len) throw Error(ErrorCode::IndexError, "position index beyond sequence length");
  const double dd = static_cast<double>(cfg.d);
  const double kk = static_cast<double>(k);
  std::vector<double> out(cfg.d);
  for (std::size_t i = 0; i < cfg.d; ++i) {
    if (i % 2 == 0) {
      out[i] = std::sin(kk / std::pow(cfg.n, static_cast<double>(i) / dd));
    } else {
      out[i] = std::cos(kk / std::pow(cfg.n, static_cast<double>(i - 1) / dd));
    }
  }
  return out;
}

std::size_t freq_to_index(double f, const EmbeddingConfig& cfg) {
  if (!(f >= cfg.band_start && f < cfg.band_start + cfg.band_width)) {
    throw Error(ErrorCode::OutOfBand, "frequency outside the embedding band");
  }
  const double pos = (f - cfg.band_start) / cfg.band_width * static_cast<double>(cfg.seq_len);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  return std::min(k, cfg.seq_len - 1);
}

std::vector<double> embed_feature(std::span<const double> z, std::size_t k, const EmbeddingConfig& cfg) {
  if (z.size() != cfg.d) throw Error(ErrorCode::ShapeError, "feature length differs from embedding dimension");
  const auto p = positional_embedding(k, cfg);
  std::vector<double> out(z.begin(), z.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += cfg.weight * p[i];
  return out;
}

EmbeddingTable::EmbeddingTable(const EmbeddingConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  table_.reserve((cfg_.seq_len + 1) * cfg_.d);
  for (std::size_t k = 0; k <= cfg_.seq_len; ++k) {
    const auto p = positional_embedding(k, cfg_);
    table_.insert(table_.end(), p.begin(), p.end());
  }
}

std::span<const double> EmbeddingTable::row(std::size_t k) const {
  if (k > cfg_.seq_len) throw Error(ErrorCode::IndexError, "position index beyond sequence length");
  return std::span<const double>(table_).subspan(k * cfg_.d, cfg_.d);
}

std::vector<double> EmbeddingTable::embed(std::span<const double> z, double freq_hz) const {
  if (z.size() != cfg_.d) throw Error(ErrorCode::ShapeError, "feature length differs from embedding dimension");
  const auto p = row(freq_to_index(freq_hz, cfg_));
  std::vector<double> out(z.begin(), z.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += cfg_.weight * p[i];
  return out;
}

}  // namespace lookalike
