#include "lookalike/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "lookalike/metrics_eval.hpp"

namespace lookalike {

namespace {

constexpr std::size_t kEvalChunk = 64;

// KL is non-negative analytically; allow float round-off.
constexpr double kKlTolerance = -1e-5;

}  // namespace

LossTerms<double> evaluate_loss(const ModelParams<float>& params, std::span<const Snippet> snippets) {
  if (snippets.empty()) throw Error(ErrorCode::EmptyDataset, "no snippets to evaluate");
  LossTerms<double> acc;
  for (std::size_t lo = 0; lo < snippets.size(); lo += kEvalChunk) {
    const auto part = snippets.subspan(lo, std::min(kEvalChunk, snippets.size() - lo));
    const auto x = stack_snippets<float>(part);
    const layers::Rows<float> eps(part.size(), params.config.latent_dim);
    const auto cache = vae_forward(params, x, eps, Mode::Inference);
    const auto l = vae_loss(x, cache.recon, cache.mu, cache.logvar, params.config.beta);
    const double w = static_cast<double>(part.size());
    acc.total += w * l.total;
    acc.recon += w * l.recon;
    acc.kl += w * l.kl;
  }
  const double n = static_cast<double>(snippets.size());
  acc.total /= n;
  acc.recon /= n;
  acc.kl /= n;
  return acc;
}

TrainResult train(std::span<const Snippet> dataset, std::span<const Snippet> val_set, const ModelConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  if (val_set.empty()) throw Error(ErrorCode::EmptyDataset, "validation set is empty");

  ModelParams<float> params = init_params<float>(config, config.seed);
  // Output bias starts at the logit of the mean training pixel.
  {
    double mean = 0.0;
    for (const auto& s : dataset) mean += std::accumulate(s.data.begin(), s.data.end(), 0.0);
    mean = std::clamp(mean / static_cast<double>(dataset.size() * kSnippetSize), 1e-3, 1.0 - 1e-3);
    auto& bias = params.tensors.at("dec.deconv" + std::to_string(config.conv_filters.size() - 1) + ".bias");
    std::fill(bias.data.begin(), bias.data.end(), static_cast<float>(std::log(mean / (1.0 - mean))));
  }
  AdamState<float> adam = adam_init(params.tensors);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal;
  const bool sample = config.beta > 0.0;

  TrainResult result;
  result.params = params;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t step = 0;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Snippet> batch;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(dataset[order[i]]);
      const auto x = stack_snippets<float>(batch);
      layers::Rows<float> eps(batch.size(), config.latent_dim);
      if (sample) {
        for (auto& e : eps.v) e = static_cast<float>(normal(rng));
      }
      const auto cache = vae_forward(params, x, eps, Mode::Train);
      const auto loss = vae_loss(x, cache.recon, cache.mu, cache.logvar, config.beta);
      if (loss.kl < kKlTolerance) throw Error(ErrorCode::NumericalError, "negative KL term");
      const auto grads = vae_backward(params, x, cache, config.beta);
      update_running_stats(params, cache);
      adam_step(params.tensors, grads, adam, config.learning_rate, ++step);

      const double w = static_cast<double>(batch.size());
      log.train_total += w * loss.total;
      log.train_recon += w * loss.recon;
      log.train_kl += w * loss.kl;
    }
    const double n = static_cast<double>(dataset.size());
    log.train_total /= n;
    log.train_recon /= n;
    log.train_kl /= n;

    const auto val = evaluate_loss(params, val_set);
    log.val_total = val.total;
    log.val_recon = val.recon;
    log.val_kl = val.kl;
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);

    if (val.total < best) {
      best = val.total;
      since_best = 0;
      result.params = params;
      result.best_epoch = epoch;
    } else {
      ++since_best;
    }
    if (since_best >= config.patience) break;
  }
  return result;
}

void write_training_log_csv(std::ostream& os, std::span<const EpochLog> log) {
  os << "epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl\n";
  const auto old = os.precision(10);
  for (const auto& e : log) {
    os << e.epoch << ',' << e.train_total << ',' << e.train_recon << ',' << e.train_kl << ',' << e.val_total << ','
       << e.val_recon << ',' << e.val_kl << '\n';
  }
  os.precision(old);
}

std::vector<ModelConfig> ParamGrid::expand(const ModelConfig& base) const {
  std::vector<ModelConfig> out;
  for (auto latent : latent_dims)
    for (auto c1 : first_filters)
      for (auto c2 : second_filters)
        for (auto c3 : third_filters)
          for (auto d1 : dense1)
            for (auto d2 : dense2)
              for (auto lr : learning_rates) {
                ModelConfig c = base;
                c.latent_dim = latent;
                c.conv_filters = {c1, c2, c3, c3, c3};
                c.dense_sizes = {d1, d2};
                c.learning_rate = lr;
                out.push_back(c);
              }
  return out;
}

std::vector<std::size_t> tune_sample_order(std::size_t candidates, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> idx(candidates);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  const std::size_t take = std::min(budget, candidates);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, candidates - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(take);
  return idx;
}

TuneResult tune(std::span<const ModelConfig> candidates, std::size_t budget, const TuneData& data, std::uint64_t seed,
                std::size_t threads) {
  if (candidates.empty()) throw Error(ErrorCode::InvalidConfig, "empty hyperparameter grid");
  if (budget < 1) throw Error(ErrorCode::InvalidConfig, "tuning budget must be >= 1");
  if (data.eval.size() != data.eval_labels.size()) throw Error(ErrorCode::ShapeError, "eval labels do not match eval set");

  TuneResult result;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t pick : tune_sample_order(candidates.size(), budget, seed)) {
    const ModelConfig& cfg = candidates[pick];
    TuneTrial trial{cfg, 0.0};
    if (result.trials.empty()) result.best = cfg;
    const auto trained = train(data.train, data.val, cfg);
    const auto features = encode_snippets(trained.params, data.eval, threads);
    trial.score = modified_silhouette(to_matrix(features), data.eval_labels);
    if (trial.score > best) {
      best = trial.score;
      result.best = cfg;
    }
    result.trials.push_back(trial);
  }
  return result;
}

}  // namespace lookalike
