// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when a criterion outside --expected-red fails.
#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "lookalike/bvae.hpp"
#include "lookalike/checkpoint.hpp"
#include "lookalike/datasets.hpp"
#include "lookalike/embedding.hpp"
#include "lookalike/energy_detection.hpp"
#include "lookalike/error.hpp"
#include "lookalike/layers.hpp"
#include "lookalike/metrics_eval.hpp"
#include "lookalike/search_index.hpp"
#include "lookalike/spectrogram.hpp"
#include "lookalike/train.hpp"

using namespace lookalike;
using namespace lookalike::layers;
using grad_check::dot;
using grad_check::fill_uniform;
using grad_check::numeric;
using grad_check::relative_error;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. gradients

double worst_layer_error(std::map<std::string, double>& per_layer) {
  std::mt19937_64 rng(101);
  using FM = FeatureMap<double>;
  using Tn = Tensor<double>;
  auto record = [&](const std::string& name, double e) { per_layer[name] = std::max(per_layer[name], e); };

  {
    FM x(3, 2, 5, 6), r(4, 2, 5, 6);
    Tn k({4, 3, 3, 3}), b({4}), dk({4, 3, 3, 3}), db({4});
    for (auto* v : {&x.v, &r.v, &k.data, &b.data}) fill_uniform(*v, rng);
    auto loss = [&] { return dot(conv2d_forward(x, k, b).v, r.v); };
    const FM dx = conv2d_backward(x, k, r, dk, db);
    record("conv2d", relative_error(dx.v, numeric(x.v, loss)));
    record("conv2d", relative_error(dk.data, numeric(k.data, loss)));
    record("conv2d", relative_error(db.data, numeric(b.data, loss)));
  }
  {
    FM x(3, 2, 4, 5), r(2, 2, 4, 10);
    Tn k({3, 2, 3, 3}), b({2}), dk({3, 2, 3, 3}), db({2});
    for (auto* v : {&x.v, &r.v, &k.data, &b.data}) fill_uniform(*v, rng);
    auto loss = [&] { return dot(conv_transpose2d_forward(x, k, b).v, r.v); };
    const FM dx = conv_transpose2d_backward(x, k, r, dk, db);
    record("conv_transpose2d", relative_error(dx.v, numeric(x.v, loss)));
    record("conv_transpose2d", relative_error(dk.data, numeric(k.data, loss)));
    record("conv_transpose2d", relative_error(db.data, numeric(b.data, loss)));
  }
  {
    FM x(2, 2, 3, 8), r(2, 2, 3, 4);
    fill_uniform(x.v, rng);
    fill_uniform(r.v, rng);
    std::vector<std::uint8_t> arg;
    maxpool_cols_forward(x, arg);
    auto loss = [&] {
      std::vector<std::uint8_t> a;
      return dot(maxpool_cols_forward(x, a).v, r.v);
    };
    record("maxpool", relative_error(maxpool_cols_backward(r, arg).v, numeric(x.v, loss)));
  }
  {
    FM x(3, 4, 2, 5), r(3, 4, 2, 5);
    Tn g({3}), s({3}), dg({3}), ds({3});
    fill_uniform(x.v, rng, 0.0, 3.0);
    fill_uniform(g.data, rng, 0.5, 1.5);
    fill_uniform(s.data, rng);
    fill_uniform(r.v, rng);
    auto loss = [&] {
      BatchNormCache<double> c;
      return dot(batchnorm_forward_train(x, g, s, c).v, r.v);
    };
    BatchNormCache<double> cache;
    batchnorm_forward_train(x, g, s, cache);
    const FM dx = batchnorm_backward(r, g, cache, dg, ds);
    record("batchnorm", relative_error(dx.v, numeric(x.v, loss)));
    record("batchnorm", relative_error(dg.data, numeric(g.data, loss)));
    record("batchnorm", relative_error(ds.data, numeric(s.data, loss)));
  }
  {
    Rows<double> x(4, 6), r(4, 3);
    Tn w({6, 3}), b({3}), dw({6, 3}), db({3});
    for (auto* v : {&x.v, &r.v, &w.data, &b.data}) fill_uniform(*v, rng);
    auto loss = [&] { return dot(dense_forward(x, w, b).v, r.v); };
    const auto dx = dense_backward(x, w, r, dw, db);
    record("dense", relative_error(dx.v, numeric(x.v, loss)));
    record("dense", relative_error(dw.data, numeric(w.data, loss)));
    record("dense", relative_error(db.data, numeric(b.data, loss)));
  }
  {
    std::vector<double> x(40), r(40);
    fill_uniform(x, rng);
    fill_uniform(r, rng);
    auto relu_loss = [&] {
      auto y = x;
      relu_inplace(y);
      return dot(y, r);
    };
    auto y = x;
    relu_inplace(y);
    auto dy = r;
    relu_backward_inplace(dy, y);
    record("relu", relative_error(dy, numeric(x, relu_loss)));

    auto sig_loss = [&] {
      auto s = x;
      sigmoid_inplace(s);
      return dot(s, r);
    };
    auto s = x;
    sigmoid_inplace(s);
    dy = r;
    sigmoid_backward_inplace(dy, s);
    record("sigmoid", relative_error(dy, numeric(x, sig_loss)));
  }
  double worst = 0.0;
  for (const auto& [name, e] : per_layer) worst = std::max(worst, e);
  return worst;
}

double worst_end_to_end_error(double beta) {
  ModelConfig c;
  c.latent_dim = 2;
  c.conv_filters = {2, 3, 2, 3, 2};
  c.dense_sizes = {5, 3};
  c.beta = beta;
  auto params = init_params<double>(c, 11);
  std::mt19937_64 rng(14);
  for (auto& [name, t] : params.tensors.entries())
    if (name.ends_with(".bias") || name.ends_with(".shift")) fill_uniform(t.data, rng, -0.2, 0.2);

  FeatureMap<double> x(1, 3, kSnippetRows, kSnippetCols);
  fill_uniform(x.v, rng, 0.0, 1.0);
  Rows<double> eps(3, 2);
  std::normal_distribution<double> normal;
  for (auto& v : eps.v) v = normal(rng);

  const auto result = compute_gradients(params, x, eps);
  auto loss = [&] {
    const auto cache = vae_forward(params, x, eps, Mode::Train);
    return vae_loss(x, cache.recon, cache.mu, cache.logvar, beta).total;
  };
  double worst = 0.0;
  for (auto& [name, t] : params.tensors.entries()) {
    if (!is_trainable(name)) continue;
    worst = std::max(worst, relative_error(result.grads.at(name).data, numeric(t.data, loss, 1e-6)));
  }
  return worst;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  std::map<std::string, double> per_layer;
  const double layers_worst = worst_layer_error(per_layer);
  const double e2e = std::max(worst_end_to_end_error(0.0), worst_end_to_end_error(0.7));
  const double elapsed = seconds_since(t0);
  for (const auto& [name, e] : per_layer) std::cerr << "  " << name << " relative error " << e << "\n";
  std::cerr << "  end-to-end relative error " << e2e << "\n";
  return {layers_worst < 1e-3 && e2e < 1e-3 && elapsed < 300.0,
          fmt("worst layer rel err %.2e, end-to-end %.2e, %.1fs", layers_worst, e2e, elapsed)};
}

// ---------------------------------------------------------------------------
// 2. embedding

Outcome criterion_embedding() {
  double worst = 0.0, bound = 0.0;
  std::size_t collisions = 0;
  for (std::size_t d : {4u, 5u}) {
    EmbeddingConfig cfg;
    cfg.d = d;
    cfg.band_width = 1.0;
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < 1000; ++k) {
      auto p = positional_embedding(k, cfg);
      for (std::size_t i = 0; i < d; ++i) {
        const long double kk = static_cast<long double>(k);
        const long double expo = static_cast<long double>(i - i % 2) / static_cast<long double>(d);
        const long double arg = kk / std::pow(10000.0L, expo);
        const long double ref = i % 2 == 0 ? std::sin(arg) : std::cos(arg);
        worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(p[i]) - ref)));
        bound = std::max(bound, std::abs(p[i]));
      }
      rows.push_back(std::move(p));
    }
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (std::size_t b = a + 1; b < rows.size(); ++b) collisions += rows[a] == rows[b];
  }
  return {worst <= 1e-12 && collisions == 0 && bound <= 1.0,
          fmt("max deviation %.2e, %zu collisions, max |value| %.6f", worst, collisions, bound)};
}

// ---------------------------------------------------------------------------
// Shared models for criteria 3 to 7.

struct Models {
  ModelParams<float> bvae;
  ModelParams<float> ae;
  double train_seconds = 0.0;
};

ModelParams<float> train_model(std::span<const Snippet> data, double beta) {
  ModelConfig mc;
  mc.beta = beta;
  mc.learning_rate = 1e-3;
  mc.max_epochs = 25;
  mc.patience = 5;
  mc.seed = 3;
  const std::size_t n_val = data.size() / 10;
  TrainOptions opt;
  const auto t0 = Clock::now();
  opt.on_epoch = [&](const EpochLog& e) {
    std::cerr << "  [" << mc.model_kind() << "] epoch " << e.epoch << " recon " << e.train_recon << " kl "
              << e.train_kl << " val " << e.val_total << " (" << seconds_since(t0) << "s)\n";
  };
  return train(data.subspan(n_val), data.subspan(0, n_val), mc, opt).params;
}

Models train_models() {
  const auto t0 = Clock::now();
  TrainingSetConfig tc;
  tc.n_spectrograms = 40;
  const auto data = synth_training_set(tc, 1);
  std::cerr << "training on " << data.size() << " snippets\n";
  Models m;
  m.bvae = train_model(data, 1e-3);
  m.ae = train_model(data, 0.0);
  m.train_seconds = seconds_since(t0);
  return m;
}

std::vector<std::vector<double>> naive_extract(std::span<const Snippet> s) {
  std::vector<std::vector<double>> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(naive_features(x));
  return out;
}

// ---------------------------------------------------------------------------
// 3, 4, 5. benchmark orderings

struct BenchmarkOutcomes {
  Outcome silhouette, clustering, disentanglement;
};

std::size_t count_trials(std::size_t n, const std::function<bool(std::size_t)>& ok) {
  std::size_t c = 0;
  for (std::size_t t = 0; t < n; ++t) c += ok(t);
  return c;
}

double noise_oracle_mean() {
  DisentanglementConfig dc;
  dc.render = false;
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto enc = [s](std::span<const FactorPoint> pts) {
      std::mt19937_64 rng(s * 7919 + pts.size());
      std::normal_distribution<double> nd;
      std::vector<std::vector<double>> out(pts.size(), std::vector<double>(5));
      for (auto& row : out)
        for (auto& v : row) v = nd(rng);
      return out;
    };
    sum += disentanglement_score(enc, dc, 500 + s);
  }
  return sum / 10.0;
}

BenchmarkOutcomes criteria_benchmark(const Models& models, std::size_t n_trials) {
  const auto t0 = Clock::now();
  std::vector<NamedExtractor> ex{
      {"naive", naive_extract, false},
      {"ae", [&](std::span<const Snippet> s) { return encode_snippets(models.ae, s); }, true},
      {"bvae", [&](std::span<const Snippet> s) { return encode_snippets(models.bvae, s); }, true},
  };
  BenchmarkConfig bc;
  bc.n_trials = n_trials;
  bc.seed = 2024;
  const auto report = run_benchmark(ex, bc);
  print_benchmark_table(std::cerr, report);
  const double elapsed = seconds_since(t0) + models.train_seconds;

  BenchmarkOutcomes out;
  {
    const auto& n = report.row("naive", "silhouette");
    const auto& a = report.row("ae", "silhouette");
    const auto& b = report.row("bvae", "silhouette");
    const std::size_t good = count_trials(n_trials, [&](std::size_t t) {
      return b.values[t] - a.values[t] >= 0.02 && a.values[t] - n.values[t] >= 0.02;
    });
    const bool ordered = b.mean > a.mean && a.mean > n.mean;
    out.silhouette = {ordered && good * 10 >= n_trials * 8 && elapsed < 2700.0,
                      fmt("means bvae %.4f ae %.4f naive %.4f; gapped ordering in %zu/%zu trials; %.0fs", b.mean,
                          a.mean, n.mean, good, n_trials, elapsed)};
  }
  {
    const auto& n = report.row("naive", "clustering");
    const auto& a = report.row("ae", "clustering");
    const auto& b = report.row("bvae", "clustering");
    const std::size_t good =
        count_trials(n_trials, [&](std::size_t t) { return b.values[t] < a.values[t] && a.values[t] < n.values[t]; });
    const std::size_t ratio = count_trials(n_trials, [&](std::size_t t) {
      return n.values[t] >= 5.0 * a.values[t] && n.values[t] >= 5.0 * b.values[t];
    });
    out.clustering = {good * 10 >= n_trials * 8 && ratio == n_trials,
                      fmt("means bvae %.3f ae %.3f naive %.3f; ordered in %zu/%zu, naive >= 5x in %zu/%zu", b.mean,
                          a.mean, n.mean, good, n_trials, ratio, n_trials)};
  }
  {
    const auto& a = report.row("ae", "disentanglement");
    const auto& b = report.row("bvae", "disentanglement");
    const std::size_t good = count_trials(n_trials, [&](std::size_t t) { return b.values[t] > a.values[t]; });
    DisentanglementConfig dc;
    dc.render = false;
    const double oracle = disentanglement_score(
        [](std::span<const FactorPoint> pts) {
          std::vector<std::vector<double>> out;
          for (const auto& p : pts) out.emplace_back(p.factors.begin(), p.factors.end());
          return out;
        },
        dc, 77);
    const double noise = noise_oracle_mean();
    out.disentanglement = {good * 10 >= n_trials * 8 && b.mean >= 0.5 && oracle >= 0.95 && std::abs(noise - 0.25) <= 0.1,
                           fmt("bvae %.3f ae %.3f, bvae > ae in %zu/%zu; oracle %.3f; noise %.3f", b.mean, a.mean,
                               good, n_trials, oracle, noise)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// 6. self-retrieval

Outcome criterion_self_retrieval(const Models& models) {
  const auto flat = flatten(build_eval_set(10, 100, {}, 61));
  const auto index = build_index(flat.snippets, models.bvae, std::nullopt);
  std::mt19937_64 rng(62);
  std::uniform_int_distribution<std::size_t> pick(0, flat.snippets.size() - 1);
  std::size_t hits = 0;
  double worst = 0.0;
  for (int q = 0; q < 100; ++q) {
    const std::size_t i = pick(rng);
    QueryOptions opt;
    opt.k = 1;
    const auto r = query(index, models.bvae, flat.snippets[i], std::nullopt, opt);
    const double dev = r.empty() ? 1.0 : std::abs(r[0].score - 1.0);
    worst = std::max(worst, dev);
    hits += !r.empty() && r[0].record == i && dev <= 1e-6;
  }
  return {hits == 100, fmt("%zu/100 queries at rank 1, max |score - 1| %.2e", hits, worst)};
}

// ---------------------------------------------------------------------------
// 7. frequency embedding

double mean_freq_gap(const Index& index, const ModelParams<float>& model, std::span<const Snippet> snippets,
                     std::span<const std::size_t> queries) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto qi : queries) {
    QueryOptions opt;
    opt.k = 100;
    opt.exclude_self = true;
    const auto& soi = snippets[qi];
    const std::optional<double> freq = index.embedded() ? std::optional<double>(soi.center_freq) : std::nullopt;
    for (const auto& r : query(index, model, soi, freq, opt)) {
      sum += std::abs(soi.center_freq - index.center_freq(r.record));
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

Outcome criterion_frequency_embedding(const Models& models, std::size_t n_trials) {
  EvalRanges ranges;
  ranges.class_band_fraction = 0.02;
  EmbeddingConfig ecfg;
  ecfg.d = models.bvae.config.latent_dim;
  ecfg.band_start = ranges.band_start;
  ecfg.band_width = ranges.band_width;
  std::size_t wins = 0;
  double with_sum = 0.0, without_sum = 0.0;
  for (std::size_t t = 0; t < n_trials; ++t) {
    const auto flat = flatten(build_eval_set(10, 100, ranges, 700 + t));
    const auto plain = build_index(flat.snippets, models.bvae, std::nullopt);
    const auto embedded = build_index(flat.snippets, models.bvae, ecfg);
    std::mt19937_64 rng(800 + t);
    std::vector<std::size_t> queries(flat.snippets.size());
    std::iota(queries.begin(), queries.end(), 0);
    std::shuffle(queries.begin(), queries.end(), rng);
    queries.resize(50);
    const double without = mean_freq_gap(plain, models.bvae, flat.snippets, queries);
    const double with = mean_freq_gap(embedded, models.bvae, flat.snippets, queries);
    std::cerr << "  trial " << t << " mean |df| without " << without << " Hz, with " << with << " Hz\n";
    wins += with < without;
    with_sum += with;
    without_sum += without;
  }
  return {wins * 10 >= n_trials * 9,
          fmt("embedding closer in %zu/%zu trials; mean |df| %.0f Hz with, %.0f Hz without", wins, n_trials,
              with_sum / static_cast<double>(n_trials), without_sum / static_cast<double>(n_trials))};
}

// ---------------------------------------------------------------------------
// 8. energy detection

struct DetectionRates {
  std::size_t detected = 0;
  std::size_t flagged = 0;
  std::size_t scanned = 0;
};

DetectionRates detection_rates(double threshold) {
  const BandpassConfig bp{4096 * kDefaultDf, 64};
  DetectionRates r;
  std::mt19937_64 rng(31);
  const EvalRanges ranges;
  std::uniform_real_distribution<double> centre(512.0, 256.0 * 14);
  for (std::uint64_t t = 0; t < 100; ++t) {
    auto spec = gen_noise(kSnippetRows, 256 * 16, 1000 + t);
    const SignalParams p{ranges.snr.sample(rng), ranges.drift_rate.sample(rng), ranges.width.sample(rng),
                         spec.bin_freq(centre(rng))};
    inject_signal_inplace(spec, p);
    const double first = (p.f_center - spec.f_start) / spec.df;
    const double last = first + p.drift_rate * spec.dt * static_cast<double>(kSnippetRows - 1) / spec.df;
    const double lo = std::min(first, last), hi = std::max(first, last);
    bool found = false;
    for (const auto& h : detect(bandpass_correct(spec, bp), threshold).hits) {
      const auto s = static_cast<double>(h.start_bin);
      found = found || (s <= hi && s + kSnippetCols > lo);
    }
    r.detected += found;
  }
  for (std::uint64_t s = 0; s < 8; ++s) {
    const auto res = detect(bandpass_correct(gen_noise(kSnippetRows, 256 * 128, 2000 + s), bp), threshold);
    r.flagged += res.hits.size();
    r.scanned += res.windows_scanned;
  }
  return r;
}

Outcome criterion_detection() {
  const double calibrated = calibrate_threshold(5000, 0.999, 9);
  const auto at_512 = detection_rates(kDefaultSThreshold);
  const auto at_cal = detection_rates(calibrated);
  auto ok = [](const DetectionRates& r) { return r.detected >= 95 && r.flagged * 100 <= r.scanned; };
  return {ok(at_cal),
          fmt("calibrated threshold %.1f: %zu/100 detected, %zu/%zu noise flagged; at 512: %zu/100, %zu/%zu",
              calibrated, at_cal.detected, at_cal.flagged, at_cal.scanned, at_512.detected, at_512.flagged,
              at_512.scanned)};
}

// ---------------------------------------------------------------------------
// 9. metric oracles

double brute_silhouette(const Matrix& x, const std::vector<int>& labels) {
  const auto n = x.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> acc;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      auto& [s, c] = acc[labels[j]];
      s += (x.row(i) - x.row(j)).norm();
      ++c;
    }
    const double a = acc[labels[i]].first / acc[labels[i]].second;
    double b = 1e300;
    for (const auto& [lab, sc] : acc)
      if (lab != labels[i]) b = std::min(b, sc.first / sc.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

double brute_clustering(const Matrix& x, const std::vector<int>& labels) {
  std::set<int> labs(labels.begin(), labels.end());
  double total = 0.0;
  for (int lab : labs) {
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(x.cols());
    int m = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (labels[i] == lab) c += x.row(i), ++m;
    c /= m;
    double mx = 0.0, sum = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (labels[i] == lab) {
        const double d = (x.row(i) - c).norm();
        mx = std::max(mx, d);
        sum += d;
      }
    total += mx / (sum / m);
  }
  return total / static_cast<double>(labs.size());
}

Outcome criterion_metric_oracles() {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> nd;
  double sil_err = 0.0, clu_err = 0.0;
  for (std::size_t n : {10u, 57u, 200u, 500u}) {
    Matrix x(static_cast<Eigen::Index>(n), 6);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(i % 4);
      for (Eigen::Index j = 0; j < 6; ++j) x(static_cast<Eigen::Index>(i), j) = nd(rng) + (j == labels[i] ? 2.0 : 0.0);
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    sil_err = std::max(sil_err, std::abs(silhouette_score(x, labels) - brute_silhouette(x, labels)));
    clu_err = std::max(clu_err, std::abs(clustering_metric(x, labels) - brute_clustering(x, labels)));
  }

  std::vector<FeatureRecord> recs(1000);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].feature.resize(16);
    for (auto& v : recs[i].feature) v = nd(rng);
    recs[i].source_id = "r" + std::to_string(i);
  }
  const auto index = Index::from_records(recs, std::nullopt);
  double cos_err = 0.0;
  for (int q = 0; q < 20; ++q) {
    std::vector<double> query(16);
    for (auto& v : query) v = nd(rng);
    const double qn = std::sqrt(dot(query, query));
    for (std::size_t block : {1u, 37u, 256u, 4096u}) {
      const auto scores = index.score_all(query, block);
      for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& f = recs[i].feature;
        const double ref = dot(query, f) / (qn * std::sqrt(dot(f, f)));
        cos_err = std::max(cos_err, std::abs(scores[i] - ref));
      }
    }
  }
  return {sil_err <= 1e-9 && clu_err <= 1e-9 && cos_err <= 1e-6,
          fmt("silhouette err %.2e, clustering err %.2e, cosine err %.2e", sil_err, clu_err, cos_err)};
}

// ---------------------------------------------------------------------------
// 10. formats

template <typename T, typename Write, typename Read>
bool round_trips(const T& value, Write&& write, Read&& read) {
  std::ostringstream os(std::ios::binary);
  write(os, value);
  const std::string bytes = os.str();
  std::istringstream is(bytes);
  std::ostringstream again(std::ios::binary);
  write(again, read(is));
  if (again.str() != bytes) return false;
  std::string bad = bytes;
  bad[1] ^= 0x20;
  std::istringstream bis(bad);
  try {
    read(bis);
  } catch (const Error& e) {
    return e.code() == ErrorCode::FormatError;
  }
  return false;
}

Outcome criterion_formats() {
  auto spec = gen_noise(16, 700, 3, 1.1e9);
  spec.data[5] = 1e-30f;
  ModelConfig cfg;
  cfg.conv_filters = {2, 3, 2, 3, 2};
  cfg.dense_sizes = {6, 4};
  auto params = init_params<float>(cfg, 17);
  params.tensors.at("enc.bn.running_var").data[0] = 0.123f;
  std::vector<FeatureRecord> recs(37);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].feature = {1.0 + i, -0.5 * i, 0.25, 3.0, -1.0};
    recs[i].source_id = "s" + std::to_string(i);
    recs[i].center_freq = 1.4e9 + 31.7 * i;
    recs[i].embedded = true;
  }
  EmbeddingConfig ecfg;
  ecfg.band_start = 1.4e9;
  ecfg.band_width = 2.5e6;

  const bool rssg = round_trips(
      spec, [](std::ostream& os, const Spectrogram& s) { write_spectrogram(os, s); },
      [](std::istream& is) { return read_spectrogram(is); });
  const bool rssm = round_trips(
      params, [](std::ostream& os, const ModelParams<float>& p) { write_checkpoint(os, p); },
      [](std::istream& is) { return read_checkpoint(is); });
  const bool rssi = round_trips(
      Index::from_records(recs, ecfg), [](std::ostream& os, const Index& i) { i.write(os); },
      [](std::istream& is) { return Index::read(is); });
  return {rssg && rssm && rssi, fmt("RSSG %s, RSSM %s, RSSI %s", rssg ? "ok" : "bad", rssm ? "ok" : "bad",
                                    rssi ? "ok" : "bad")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> expected_red;
  std::vector<int> only;
  std::size_t trials = 10;
  app.add_option("--expected-red", expected_red, "Criteria known to fail")->delimiter(',');
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  app.add_option("--trials", trials, "Trials for criteria 3, 4, 5 and 7")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::ranges::count(only, c) > 0; };
  std::map<int, Outcome> results;
  auto run = [&](int id, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
    const auto& r = results[id];
    std::cout << "criterion " << id << ": " << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << std::endl;
  };

  run(1, criterion_gradients);
  run(2, criterion_embedding);
  run(9, criterion_metric_oracles);
  run(10, criterion_formats);
  run(8, criterion_detection);

  if (wanted(3) || wanted(4) || wanted(5) || wanted(6) || wanted(7)) {
    const Models models = train_models();
    if (wanted(3) || wanted(4) || wanted(5)) {
      std::optional<BenchmarkOutcomes> bench;
      std::string error;
      try {
        bench = criteria_benchmark(models, trials);
      } catch (const std::exception& e) {
        error = std::string("error: ") + e.what();
      }
      run(3, [&] { return bench ? bench->silhouette : Outcome{false, error}; });
      run(4, [&] { return bench ? bench->clustering : Outcome{false, error}; });
      run(5, [&] { return bench ? bench->disentanglement : Outcome{false, error}; });
    }
    run(6, [&] { return criterion_self_retrieval(models); });
    run(7, [&] { return criterion_frequency_embedding(models, trials); });
  }

  int unexpected = 0;
  for (const auto& [id, r] : results) {
    const bool known = std::ranges::count(expected_red, id) > 0;
    if (!r.pass && !known) ++unexpected;
    if (r.pass && known) std::cout << "note: criterion " << id << " listed as expected red but passed" << std::endl;
  }
  std::cout << (unexpected == 0 ? "acceptance: ok" : "acceptance: unexpected failures") << std::endl;
  return unexpected == 0 ? 0 : 1;
}
