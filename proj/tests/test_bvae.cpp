#include "lookalike/bvae.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <numeric>

#include "grad_check.hpp"
#include "lookalike/metrics_eval.hpp"
#include "lookalike/train.hpp"
#include "test_support.hpp"

using namespace lookalike;
using layers::FeatureMap;
using layers::Rows;
using Catch::Matchers::WithinAbs;
using test_support::code_of;

namespace {

ModelConfig small_config(double beta) {
  ModelConfig c;
  c.latent_dim = 2;
  c.conv_filters = {2, 3, 2, 3, 2};
  c.dense_sizes = {5, 3};
  c.beta = beta;
  return c;
}

FeatureMap<double> random_batch(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureMap<double> x(1, n, kSnippetRows, kSnippetCols);
  grad_check::fill_uniform(x.v, rng, 0.0, 1.0);
  return x;
}

Rows<double> random_eps(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Rows<double> e(n, d);
  for (auto& v : e.v) v = normal(rng);
  return e;
}

// Random running statistics so inference-mode paths are non-trivial.
template <typename T>
void perturb_running_stats(ModelParams<T>& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& [name, t] : p.tensors.entries())
    if (!is_trainable(name))
      for (auto& v : t.data) v = static_cast<T>(u(rng));
}

std::vector<Snippet> delta_snippets(std::size_t n) {
  std::vector<Snippet> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].data.assign(kSnippetSize, 0.0f);
    const std::size_t col = 8 + i * 15;
    for (std::size_t t = 0; t < kSnippetRows; ++t) out[i].data[t * kSnippetCols + col] = 1.0f;
    out[i].start_bin = static_cast<std::int64_t>(col);
  }
  return out;
}

std::size_t peak_column(std::span<const float> img) {
  std::vector<double> col(kSnippetCols, 0.0);
  for (std::size_t t = 0; t < kSnippetRows; ++t)
    for (std::size_t f = 0; f < kSnippetCols; ++f) col[f] += img[t * kSnippetCols + f];
  return static_cast<std::size_t>(std::max_element(col.begin(), col.end()) - col.begin());
}

// Zero-initialized biases put pre-activations exactly on the relu kink.
void randomize_biases(ModelParams<double>& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : p.tensors.entries())
    if (name.ends_with(".bias") || name.ends_with(".shift")) grad_check::fill_uniform(t.data, rng, -0.2, 0.2);
}

// Small enough that no relu or maxpool decision flips inside the stencil.
constexpr double kEndToEndStep = 1e-6;

}  // namespace

TEST_CASE("end-to-end gradients match central differences", "[bvae][grad]") {
  for (double beta : {0.0, 0.7}) {
    DYNAMIC_SECTION("beta " << beta) {
      auto params = init_params<double>(small_config(beta), 11);
      randomize_biases(params, 14);
      const auto x = random_batch(3, 12);
      const auto eps = random_eps(3, 2, 13);
      const auto result = compute_gradients(params, x, eps);
      auto loss = [&] {
        const auto c = vae_forward(params, x, eps, Mode::Train);
        return vae_loss(x, c.recon, c.mu, c.logvar, beta).total;
      };
      for (auto& [name, tensor] : params.tensors.entries()) {
        if (!is_trainable(name)) continue;
        const auto numeric = grad_check::numeric(tensor.data, loss, kEndToEndStep);
        const double err = grad_check::relative_error(result.grads.at(name).data, numeric);
        INFO(name << " relative error " << err);
        CHECK(err < grad_check::kTolerance);
      }
    }
  }
}

TEST_CASE("gradients of a duplicated batch equal the single-item gradients", "[bvae][grad]") {
  auto params = init_params<double>(small_config(0.5), 21);
  const auto x1 = random_batch(1, 22);
  FeatureMap<double> x2(1, 2, kSnippetRows, kSnippetCols);
  std::copy(x1.v.begin(), x1.v.end(), x2.v.begin());
  std::copy(x1.v.begin(), x1.v.end(), x2.v.begin() + kSnippetSize);
  const auto e1 = random_eps(1, 2, 23);
  Rows<double> e2(2, 2);
  for (std::size_t j = 0; j < 2; ++j) e2.at(0, j) = e2.at(1, j) = e1.at(0, j);
  const auto g1 = compute_gradients(params, x1, e1);
  const auto g2 = compute_gradients(params, x2, e2);
  for (const auto& [name, t] : g1.grads.entries()) {
    INFO(name);
    CHECK(grad_check::relative_error(t.data, g2.grads.at(name).data) < 1e-10);
  }
}

TEST_CASE("beta zero removes every KL contribution", "[bvae]") {
  auto params = init_params<double>(small_config(0.0), 31);
  const auto x = random_batch(3, 32);
  const Rows<double> eps(3, 2);
  const auto r = compute_gradients(params, x, eps);
  CHECK(r.loss.total == r.loss.recon);
  for (double v : r.grads.at("enc.logvar.weight").data) CHECK(v == 0.0);
  for (double v : r.grads.at("enc.logvar.bias").data) CHECK(v == 0.0);

  // Changing the logvar head leaves the remaining gradients untouched.
  auto other = params;
  for (auto& v : other.tensors.at("enc.logvar.bias").data) v += 0.3;
  const auto r2 = compute_gradients(other, x, eps);
  for (const auto& [name, t] : r.grads.entries()) {
    INFO(name);
    CHECK(grad_check::relative_error(t.data, r2.grads.at(name).data) < 1e-12);
  }
}

TEST_CASE("encoder forward", "[bvae]") {
  ModelConfig cfg;
  SECTION("zero parameters give zero outputs") {
    auto p = init_params<float>(cfg, 1);
    for (auto& [name, t] : p.tensors.entries())
      if (is_trainable(name)) std::fill(t.data.begin(), t.data.end(), 0.0f);
    const auto lat = encoder_forward(p, FeatureMap<float>(1, 2, kSnippetRows, kSnippetCols));
    for (float v : lat.mu.v) CHECK(v == 0.0f);
    for (float v : lat.logvar.v) CHECK(v == 0.0f);
    const auto rec = decoder_forward(p, Rows<float>(2, cfg.latent_dim));
    REQUIRE(rec.v.size() == 2 * kSnippetSize);
    for (float v : rec.v) REQUIRE(v == 0.5f);
  }
  SECTION("shapes and determinism") {
    auto p = init_params<float>(cfg, 2);
    perturb_running_stats(p, 3);
    std::mt19937_64 rng(4);
    FeatureMap<float> x(1, 3, kSnippetRows, kSnippetCols);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : x.v) v = u(rng);
    const auto a = encoder_forward(p, x);
    const auto b = encoder_forward(p, x);
    CHECK(a.mu.n == 3);
    CHECK(a.mu.d == 5);
    CHECK(a.logvar.d == 5);
    CHECK(a.mu.v == b.mu.v);
    CHECK(a.logvar.v == b.logvar.v);

    const auto rec = decoder_forward(p, a.mu);
    CHECK(rec.c == 1);
    CHECK(rec.h == kSnippetRows);
    CHECK(rec.w == kSnippetCols);
    for (float v : rec.v) REQUIRE((v > 0.0f && v < 1.0f));

    const auto cache = vae_forward(p, x, Rows<float>(3, 5), Mode::Inference);
    CHECK(cache.mu.v == a.mu.v);
    CHECK(cache.z.v == a.mu.v);
  }
  SECTION("shape mismatch") {
    auto p = init_params<float>(cfg, 2);
    CHECK(code_of([&] { encoder_forward(p, FeatureMap<float>(1, 1, 16, 128)); }) == ErrorCode::ShapeError);
    CHECK(code_of([&] { decoder_forward(p, Rows<float>(1, 4)); }) == ErrorCode::ShapeError);
    p.tensors.at("enc.conv2.kernel").shape[0] += 1;
    CHECK(code_of([&] { validate_params(p); }) == ErrorCode::ShapeError);
  }
}

TEST_CASE("reparameterize", "[bvae]") {
  Rows<double> mu(1, 3), lv(1, 3, -100.0);
  mu.v = {0.5, -1.0, 2.0};
  const auto z = reparameterize(mu, lv, 7);
  for (std::size_t i = 0; i < 3; ++i) CHECK_THAT(z.v[i], WithinAbs(mu.v[i], 1e-12));
  CHECK(reparameterize(mu, Rows<double>(1, 3), 7, false).v == mu.v);

  const std::size_t n = 100000;
  const auto draws = reparameterize(Rows<double>(n, 3), Rows<double>(n, 3), 9);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) s += draws.at(i, j), s2 += draws.at(i, j) * draws.at(i, j);
    const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
    CHECK_THAT(sd, WithinAbs(1.0, 0.02));
  }
  CHECK(reparameterize(mu, Rows<double>(1, 3), 5).v == reparameterize(mu, Rows<double>(1, 3), 5).v);
}

TEST_CASE("loss terms", "[bvae]") {
  const FeatureMap<double> x(1, 1, kSnippetRows, kSnippetCols, 0.25);
  const FeatureMap<double> rec(1, 1, kSnippetRows, kSnippetCols, 0.75);
  Rows<double> mu(1, 1), lv(1, 1);
  auto l = vae_loss(x, rec, mu, lv, 2.0);
  CHECK(l.kl == 0.0);
  CHECK_THAT(l.recon, WithinAbs(0.25, 1e-15));

  mu.v = {1.0};
  l = vae_loss(x, rec, mu, lv, 2.0);
  CHECK_THAT(l.kl, WithinAbs(0.5, 1e-15));
  CHECK_THAT(l.total, WithinAbs(0.25 + 2.0 * 0.5, 1e-15));

  mu.v = {0.0};
  lv.v = {std::log(2.0)};
  CHECK_THAT(vae_loss(x, rec, mu, lv, 1.0).kl, WithinAbs(0.5 * (1.0 - std::log(2.0)), 1e-12));
  CHECK_THAT(vae_loss(x, rec, mu, lv, 1.0).kl, WithinAbs(0.15343, 1e-5));

  lv.v = {std::nan("")};
  CHECK(code_of([&] { vae_loss(x, rec, mu, lv, 1.0); }) == ErrorCode::NumericalError);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 3.0);
  Rows<double> m(50, 4), v(50, 4);
  for (auto& a : m.v) a = nd(rng);
  for (auto& a : v.v) a = nd(rng);
  FeatureMap<double> xs(1, 50, kSnippetRows, kSnippetCols), rs(1, 50, kSnippetRows, kSnippetCols);
  CHECK(vae_loss(xs, rs, m, v, 1.0).kl >= 0.0);
}

TEST_CASE("adam step", "[bvae]") {
  NamedTensors<double> p;
  p.add("w", {3}, 0.5);
  p.add("enc.bn.running_mean", {1}, 0.0);
  auto state = adam_init(p);
  auto zero = p.like();
  adam_step(p, zero, state, 1e-3, 1);
  for (double v : p.at("w").data) CHECK(v == 0.5);

  auto g = p.like();
  g.at("w").data = {2.0, -0.01, 1e3};
  g.at("enc.bn.running_mean").data = {5.0};
  adam_step(p, g, state, 1e-3, 1);
  CHECK_THAT(p.at("w").data[0], WithinAbs(0.5 - 1e-3, 1e-5));
  CHECK_THAT(p.at("w").data[1], WithinAbs(0.5 + 1e-3, 1e-5));
  CHECK_THAT(p.at("w").data[2], WithinAbs(0.5 - 1e-3, 1e-5));
  CHECK(p.at("enc.bn.running_mean").data[0] == 0.0);
}

TEST_CASE("training loop", "[bvae][train]") {
  const auto data = delta_snippets(16);

  SECTION("patience zero runs one epoch and log is bounded") {
    ModelConfig cfg = small_config(0.01);
    cfg.patience = 0;
    cfg.max_epochs = 5;
    const auto r = train(data, data, cfg);
    CHECK(r.log.size() == 1);
    cfg.patience = 100;
    cfg.max_epochs = 3;
    const auto r2 = train(data, data, cfg);
    CHECK(r2.log.size() == 3);
    const auto r3 = train(data, data, cfg);
    CHECK(r3.params.tensors.at("enc.mu.weight").data == r2.params.tensors.at("enc.mu.weight").data);
    for (std::size_t i = 0; i < r2.log.size(); ++i) CHECK(r2.log[i].val_total == r3.log[i].val_total);
  }

  SECTION("overfits a delta-function dataset") {
    ModelConfig cfg;
    cfg.beta = 0.0;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 2;
    cfg.max_epochs = 200;
    cfg.patience = 200;
    cfg.seed = 5;
    const auto r = train(data, data, cfg);
    REQUIRE(r.log.size() == 200);
    CHECK(r.log.back().train_recon < 0.25 * r.log.front().train_recon);

    const auto x = stack_snippets<float>(data);
    const auto lat = encoder_forward(r.params, x);
    const auto rec = decoder_forward(r.params, lat.mu);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::span<const float> img(rec.v.data() + i * kSnippetSize, kSnippetSize);
      hits += peak_column(img) == static_cast<std::size_t>(data[i].start_bin);
    }
    CHECK(hits * 10 >= data.size() * 9);
  }

  SECTION("empty inputs") {
    CHECK(code_of([&] { train({}, data, small_config(1.0)); }) == ErrorCode::EmptyDataset);
    CHECK(code_of([&] { train(data, {}, small_config(1.0)); }) == ErrorCode::EmptyDataset);
  }
}

TEST_CASE("model config JSON round trip", "[bvae]") {
  ModelConfig c = small_config(0.0);
  c.seed = 99;
  c.learning_rate = 3e-4;
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  CHECK(c.model_kind() == "autoencoder");
  CHECK(ModelConfig{}.model_kind() == "beta_vae");
  ModelConfig bad;
  bad.latent_dim = 0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("tuner", "[bvae][tune]") {
  SECTION("sampling order is deterministic and without replacement") {
    const auto a = tune_sample_order(20, 8, 4);
    CHECK(a == tune_sample_order(20, 8, 4));
    CHECK(a.size() == 8);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    CHECK(tune_sample_order(3, 10, 1).size() == 3);
  }

  SECTION("grid expansion covers every combination") {
    ParamGrid g;
    CHECK(g.expand(ModelConfig{}).size() == 7 * 4 * 2 * 2 * 3 * 3 * 3);
  }

  EvalRanges ranges;
  const auto train_set = flatten(build_eval_set(3, 12, ranges, 1)).snippets;
  const auto eval = flatten(build_eval_set(3, 10, ranges, 2));
  TuneData data{train_set, train_set, eval.snippets, eval.labels};

  SECTION("budget one returns the sampled config") {
    ModelConfig a = small_config(0.01), b = small_config(0.01);
    a.max_epochs = b.max_epochs = 1;
    b.latent_dim = 3;
    const std::vector<ModelConfig> grid{a, b};
    const auto r = tune(grid, 1, data, 8);
    REQUIRE(r.trials.size() == 1);
    CHECK(r.best == grid[tune_sample_order(2, 1, 8)[0]]);
  }

  SECTION("errors") {
    CHECK(code_of([&] { tune({}, 1, data, 1); }) == ErrorCode::InvalidConfig);
    const std::vector<ModelConfig> grid{small_config(0.01)};
    CHECK(code_of([&] { tune(grid, 0, data, 1); }) == ErrorCode::InvalidConfig);
  }
}
