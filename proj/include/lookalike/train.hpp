#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "lookalike/bvae.hpp"

namespace lookalike {

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_total = 0.0;
  double train_recon = 0.0;
  double train_kl = 0.0;
  double val_total = 0.0;
  double val_recon = 0.0;
  double val_kl = 0.0;
};

struct TrainOptions {
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  ModelParams<float> params;  // parameters of the best validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

// Mini-batch Adam training with early stopping on validation total loss.
// Noise is sampled for the reparameterization only when beta > 0, so a
// beta = 0 run is a deterministic plain autoencoder.
TrainResult train(std::span<const Snippet> dataset, std::span<const Snippet> val_set, const ModelConfig& config,
                  const TrainOptions& options = {});

// Inference-mode loss (z = mu) averaged over a snippet set.
LossTerms<double> evaluate_loss(const ModelParams<float>& params, std::span<const Snippet> snippets);

// CSV: epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl
void write_training_log_csv(std::ostream& os, std::span<const EpochLog> log);

// Axes of the hyperparameter grid. Expanded configs use conv filters
// [first, second, third, third, third] and dense sizes [dense1, dense2].
struct ParamGrid {
  std::vector<std::size_t> latent_dims{3, 4, 5, 6, 7, 8, 10};
  std::vector<std::size_t> first_filters{3, 8, 16, 32};
  std::vector<std::size_t> second_filters{32, 64};
  std::vector<std::size_t> third_filters{64, 128};
  std::vector<std::size_t> dense1{64, 128, 256};
  std::vector<std::size_t> dense2{16, 32, 64};
  std::vector<double> learning_rates{1e-3, 5e-4, 1e-4};

  std::vector<ModelConfig> expand(const ModelConfig& base) const;
};

struct TuneData {
  std::span<const Snippet> train;
  std::span<const Snippet> val;
  std::span<const Snippet> eval;
  std::span<const int> eval_labels;
};

struct TuneTrial {
  ModelConfig config;
  double score = 0.0;  // modified silhouette on the eval set
};

struct TuneResult {
  ModelConfig best;
  std::vector<TuneTrial> trials;  // in sampling order
};

// Random search: draws min(budget, candidates) distinct candidates uniformly,
// trains each and keeps the highest modified silhouette (earliest wins ties).
TuneResult tune(std::span<const ModelConfig> candidates, std::size_t budget, const TuneData& data, std::uint64_t seed,
                std::size_t threads = 1);

// Sampling order used by tune, exposed for reproducibility checks.
std::vector<std::size_t> tune_sample_order(std::size_t candidates, std::size_t budget, std::uint64_t seed);

}  // namespace lookalike
