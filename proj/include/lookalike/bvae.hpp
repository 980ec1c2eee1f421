#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lookalike/layers.hpp"
#include "lookalike/spectrogram.hpp"
#include "lookalike/tensor.hpp"

namespace lookalike {

struct ModelConfig {
  std::size_t latent_dim = 5;
  std::vector<std::size_t> conv_filters{16, 32, 32, 32, 32};
  std::vector<std::size_t> dense_sizes{32, 16};
  double beta = 2.0;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  // Throws InvalidConfig. The frequency axis must halve cleanly at every
  // stage: 256 / 2^stages >= 1.
  void validate() const;

  // Columns left after the encoder's pooling stages (8 for five stages).
  std::size_t pooled_cols() const { return kSnippetCols >> conv_filters.size(); }
  std::size_t flat_size() const { return conv_filters.back() * kSnippetRows * pooled_cols(); }

  // "beta_vae", or "autoencoder" when beta == 0.
  std::string model_kind() const { return beta == 0.0 ? "autoencoder" : "beta_vae"; }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

// Encoder and decoder weights plus batch-norm running statistics.
template <typename T>
struct ModelParams {
  ModelConfig config;
  NamedTensors<T> tensors;

  template <typename U>
  ModelParams<U> cast() const {
    return {config, tensors.template cast<U>()};
  }
};

// He-uniform conv/dense init, unit gain and zero shift for batch norm,
// running variance 1.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

// Throws ShapeError when a tensor is missing or its shape disagrees with the
// config, NumericalError when a value is not finite.
template <typename T>
void validate_params(const ModelParams<T>& params);

// Names of tensors updated by the optimizer (everything but running stats).
bool is_trainable(const std::string& name);

enum class Mode { Train, Inference };

template <typename T>
struct LatentBatch {
  layers::Rows<T> mu;
  layers::Rows<T> logvar;
};

// Stacks snippet data into a [1][n][16][256] map.
template <typename T>
layers::FeatureMap<T> stack_snippets(std::span<const Snippet> snippets);
template <typename T>
layers::FeatureMap<T> stack_raw(std::span<const T> flat, std::size_t n);

// Inference-mode encoder (batch norm uses running statistics).
template <typename T>
LatentBatch<T> encoder_forward(const ModelParams<T>& params, const layers::FeatureMap<T>& x);

// z = mu + exp(logvar / 2) * eps. With sample == false, z = mu.
template <typename T>
layers::Rows<T> reparameterize(const layers::Rows<T>& mu, const layers::Rows<T>& logvar, std::uint64_t seed,
                               bool sample = true);
// Same map with caller-provided noise (row-major, same shape as mu).
template <typename T>
layers::Rows<T> reparameterize_with(const layers::Rows<T>& mu, const layers::Rows<T>& logvar,
                                    const layers::Rows<T>& eps);

// Inference-mode decoder. Output shape [1][n][16][256], values in (0, 1).
template <typename T>
layers::FeatureMap<T> decoder_forward(const ModelParams<T>& params, const layers::Rows<T>& z);

template <typename T>
struct LossTerms {
  T total = T(0);
  T recon = T(0);  // mean over batch of per-snippet MSE
  T kl = T(0);     // mean over batch of per-snippet KL to N(0, I)
};

template <typename T>
LossTerms<T> vae_loss(const layers::FeatureMap<T>& x, const layers::FeatureMap<T>& recon, const layers::Rows<T>& mu,
                      const layers::Rows<T>& logvar, double beta);

// Intermediate activations of a full pass, kept for backward.
template <typename T>
struct ForwardCache {
  Mode mode = Mode::Train;
  std::vector<layers::FeatureMap<T>> enc_in;       // conv input per stage
  std::vector<layers::FeatureMap<T>> enc_act;      // relu(conv) per stage
  std::vector<std::vector<std::uint8_t>> enc_arg;  // maxpool argmax per stage
  layers::FeatureMap<T> enc_bn_in;
  layers::BatchNormCache<T> enc_bn;
  std::vector<layers::Rows<T>> enc_dense_in;
  layers::Rows<T> head_in;
  layers::Rows<T> mu, logvar, eps, z;
  std::vector<layers::Rows<T>> dec_dense_in;
  layers::Rows<T> dec_dense_out;
  layers::BatchNormCache<T> dec_bn;
  std::vector<layers::FeatureMap<T>> dec_in;  // deconv input per stage
  layers::FeatureMap<T> recon;
};

// Full pass. Train mode uses batch statistics (the params are not modified;
// see update_running_stats). eps must have the shape of mu.
template <typename T>
ForwardCache<T> vae_forward(const ModelParams<T>& params, const layers::FeatureMap<T>& x, const layers::Rows<T>& eps,
                            Mode mode);

// Gradient of the batch-mean total loss for the pass recorded in cache.
template <typename T>
NamedTensors<T> vae_backward(const ModelParams<T>& params, const layers::FeatureMap<T>& x,
                             const ForwardCache<T>& cache, double beta);

template <typename T>
struct GradientResult {
  LossTerms<T> loss;
  NamedTensors<T> grads;
};

// Train-mode forward + backward with explicit noise.
template <typename T>
GradientResult<T> compute_gradients(const ModelParams<T>& params, const layers::FeatureMap<T>& x,
                                    const layers::Rows<T>& eps);

inline constexpr double kBatchNormMomentum = 0.9;

template <typename T>
void update_running_stats(ModelParams<T>& params, const ForwardCache<T>& cache, double momentum = kBatchNormMomentum);

template <typename T>
struct AdamState {
  NamedTensors<T> m;
  NamedTensors<T> v;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
AdamState<T> adam_init(const NamedTensors<T>& params);

// One bias-corrected Adam update; step_index counts from 1.
template <typename T>
void adam_step(NamedTensors<T>& params, const NamedTensors<T>& grads, AdamState<T>& state, double lr,
               std::size_t step_index, const AdamConfig& cfg = {});

// Inference-mode mu for each snippet, processed in chunks across threads.
std::vector<std::vector<double>> encode_snippets(const ModelParams<float>& params, std::span<const Snippet> snippets,
                                                 std::size_t threads = 1);

}  // namespace lookalike
