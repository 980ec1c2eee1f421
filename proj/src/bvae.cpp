#include "lookalike/bvae.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "lookalike/parallel.hpp"

namespace lookalike {

using layers::FeatureMap;
using layers::Rows;

namespace {

struct ShapeSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t fan_in = 0;  // 0: not a weight
  enum class Init { HeUniform, Zero, One } init = Init::Zero;
};

std::string stage_name(const char* prefix, std::size_t i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + suffix;
}

std::vector<ShapeSpec> parameter_layout(const ModelConfig& cfg) {
  using Init = ShapeSpec::Init;
  std::vector<ShapeSpec> out;
  const std::size_t stages = cfg.conv_filters.size();
  auto batchnorm = [&](const std::string& prefix, std::size_t ch) {
    out.push_back({prefix + ".gain", {ch}, 0, Init::One});
    out.push_back({prefix + ".shift", {ch}, 0, Init::Zero});
    out.push_back({prefix + ".running_mean", {ch}, 0, Init::Zero});
    out.push_back({prefix + ".running_var", {ch}, 0, Init::One});
  };
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t o) {
    out.push_back({prefix + ".weight", {in, o}, in, Init::HeUniform});
    out.push_back({prefix + ".bias", {o}, 0, Init::Zero});
  };

  std::size_t in = 1;
  for (std::size_t s = 0; s < stages; ++s) {
    if (s + 1 == stages) batchnorm("enc.bn", in);
    const std::size_t f = cfg.conv_filters[s];
    out.push_back({stage_name("enc.conv", s, ".kernel"), {f, in, 3, 3}, in * 9, Init::HeUniform});
    out.push_back({stage_name("enc.conv", s, ".bias"), {f}, 0, Init::Zero});
    in = f;
  }
  std::size_t width = cfg.flat_size();
  for (std::size_t i = 0; i < cfg.dense_sizes.size(); ++i) {
    dense(stage_name("enc.dense", i, ""), width, cfg.dense_sizes[i]);
    width = cfg.dense_sizes[i];
  }
  dense("enc.mu", width, cfg.latent_dim);
  dense("enc.logvar", width, cfg.latent_dim);

  width = cfg.latent_dim;
  std::size_t d = 0;
  for (auto it = cfg.dense_sizes.rbegin(); it != cfg.dense_sizes.rend(); ++it, ++d) {
    dense(stage_name("dec.dense", d, ""), width, *it);
    width = *it;
  }
  dense(stage_name("dec.dense", d, ""), width, cfg.flat_size());
  batchnorm("dec.bn", cfg.conv_filters.back());
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t c_in = cfg.conv_filters[stages - 1 - s];
    const std::size_t c_out = s + 1 < stages ? cfg.conv_filters[stages - 2 - s] : 1;
    out.push_back({stage_name("dec.deconv", s, ".kernel"), {c_in, c_out, 3, 3}, c_in * 9, Init::HeUniform});
    out.push_back({stage_name("dec.deconv", s, ".bias"), {c_out}, 0, Init::Zero});
  }
  return out;
}

template <typename T>
void add_into(Rows<T>& acc, const Rows<T>& other) {
  for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += other.v[i];
}

template <typename T>
struct Names {
  const NamedTensors<T>& t;
  const Tensor<T>& operator()(const std::string& name) const { return t.at(name); }
};

}  // namespace

void ModelConfig::validate() const {
  if (latent_dim < 1) throw Error(ErrorCode::InvalidConfig, "latent_dim must be >= 1");
  if (conv_filters.empty() || conv_filters.size() > 8) throw Error(ErrorCode::InvalidConfig, "need 1..8 conv stages");
  for (auto f : conv_filters)
    if (f < 1) throw Error(ErrorCode::InvalidConfig, "conv filter counts must be >= 1");
  for (auto d : dense_sizes)
    if (d < 1) throw Error(ErrorCode::InvalidConfig, "dense sizes must be >= 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error(ErrorCode::InvalidConfig, "beta must be finite and >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be positive");
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
  if (max_epochs < 1) throw Error(ErrorCode::InvalidConfig, "max_epochs must be >= 1");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model_kind"] = model_kind();
  j["latent_dim"] = latent_dim;
  j["conv_filters"] = conv_filters;
  j["dense_sizes"] = dense_sizes;
  j["beta"] = beta;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("model config JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.conv_filters = j.value("conv_filters", c.conv_filters);
    c.dense_sizes = j.value("dense_sizes", c.dense_sizes);
    c.beta = j.value("beta", c.beta);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("model config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

bool is_trainable(const std::string& name) {
  return name.find("running_") == std::string::npos;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<T> p{cfg, {}};
  std::mt19937_64 rng(seed);
  for (const auto& s : parameter_layout(cfg)) {
    auto& t = p.tensors.add(s.name, s.shape);
    switch (s.init) {
      case ShapeSpec::Init::Zero: break;
      case ShapeSpec::Init::One: std::fill(t.data.begin(), t.data.end(), T(1)); break;
      case ShapeSpec::Init::HeUniform: {
        const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (auto& v : t.data) v = static_cast<T>(u(rng));
        break;
      }
    }
  }
  return p;
}

template <typename T>
void validate_params(const ModelParams<T>& params) {
  params.config.validate();
  const auto layout = parameter_layout(params.config);
  if (layout.size() != params.tensors.size()) throw Error(ErrorCode::ShapeError, "tensor count does not match config");
  for (const auto& s : layout) {
    const auto* t = params.tensors.find(s.name);
    if (t == nullptr) throw Error(ErrorCode::ShapeError, "missing tensor " + s.name);
    if (t->shape != s.shape || t->data.size() != Tensor<T>::element_count(s.shape)) {
      throw Error(ErrorCode::ShapeError, "tensor " + s.name + " has the wrong shape");
    }
    for (T v : t->data) {
      if (!std::isfinite(static_cast<double>(v))) throw Error(ErrorCode::NumericalError, "non-finite value in " + s.name);
    }
  }
}

template <typename T>
FeatureMap<T> stack_snippets(std::span<const Snippet> snippets) {
  FeatureMap<T> x(1, snippets.size(), kSnippetRows, kSnippetCols);
  for (std::size_t n = 0; n < snippets.size(); ++n) {
    if (snippets[n].data.size() != kSnippetSize) throw Error(ErrorCode::ShapeError, "snippet must be 16x256");
    std::transform(snippets[n].data.begin(), snippets[n].data.end(), x.v.begin() + static_cast<std::ptrdiff_t>(n * kSnippetSize),
                   [](float v) { return static_cast<T>(v); });
  }
  return x;
}

template <typename T>
FeatureMap<T> stack_raw(std::span<const T> flat, std::size_t n) {
  if (flat.size() != n * kSnippetSize) throw Error(ErrorCode::ShapeError, "input must be n x 16 x 256");
  FeatureMap<T> x(1, n, kSnippetRows, kSnippetCols);
  std::copy(flat.begin(), flat.end(), x.v.begin());
  return x;
}

template <typename T>
ForwardCache<T> vae_forward(const ModelParams<T>& params, const FeatureMap<T>& x, const Rows<T>& eps, Mode mode) {
  const auto& cfg = params.config;
  const Names<T> P{params.tensors};
  if (x.c != 1 || x.h != kSnippetRows || x.w != kSnippetCols) throw Error(ErrorCode::ShapeError, "input must be 16x256");
  if (eps.n != x.n || eps.d != cfg.latent_dim) throw Error(ErrorCode::ShapeError, "eps shape mismatch");
  const std::size_t stages = cfg.conv_filters.size();

  ForwardCache<T> c;
  c.mode = mode;
  c.enc_in.resize(stages);
  c.enc_act.resize(stages);
  c.enc_arg.resize(stages);

  FeatureMap<T> a = x;
  for (std::size_t s = 0; s < stages; ++s) {
    if (s + 1 == stages) {
      c.enc_bn_in = a;
      a = mode == Mode::Train
              ? layers::batchnorm_forward_train(a, P("enc.bn.gain"), P("enc.bn.shift"), c.enc_bn)
              : layers::batchnorm_forward_infer(a, P("enc.bn.gain"), P("enc.bn.shift"), P("enc.bn.running_mean"),
                                                P("enc.bn.running_var"));
    }
    c.enc_in[s] = a;
    auto y = layers::conv2d_forward(a, P(stage_name("enc.conv", s, ".kernel")), P(stage_name("enc.conv", s, ".bias")));
    layers::relu_inplace(y.v);
    a = layers::maxpool_cols_forward(y, c.enc_arg[s]);
    c.enc_act[s] = std::move(y);
  }

  Rows<T> h = layers::flatten(a);
  for (std::size_t i = 0; i < cfg.dense_sizes.size(); ++i) {
    c.enc_dense_in.push_back(h);
    h = layers::dense_forward(h, P(stage_name("enc.dense", i, ".weight")), P(stage_name("enc.dense", i, ".bias")));
    layers::relu_inplace(h.v);
  }
  c.head_in = h;
  c.mu = layers::dense_forward(h, P("enc.mu.weight"), P("enc.mu.bias"));
  c.logvar = layers::dense_forward(h, P("enc.logvar.weight"), P("enc.logvar.bias"));
  c.eps = eps;
  c.z = reparameterize_with(c.mu, c.logvar, eps);

  h = c.z;
  for (std::size_t i = 0; i <= cfg.dense_sizes.size(); ++i) {
    c.dec_dense_in.push_back(h);
    h = layers::dense_forward(h, P(stage_name("dec.dense", i, ".weight")), P(stage_name("dec.dense", i, ".bias")));
    layers::relu_inplace(h.v);
  }
  c.dec_dense_out = h;
  FeatureMap<T> m = layers::unflatten(h, cfg.conv_filters.back(), kSnippetRows, cfg.pooled_cols());
  m = mode == Mode::Train ? layers::batchnorm_forward_train(m, P("dec.bn.gain"), P("dec.bn.shift"), c.dec_bn)
                          : layers::batchnorm_forward_infer(m, P("dec.bn.gain"), P("dec.bn.shift"),
                                                            P("dec.bn.running_mean"), P("dec.bn.running_var"));
  c.dec_in.resize(stages);
  for (std::size_t s = 0; s < stages; ++s) {
    c.dec_in[s] = m;
    m = layers::conv_transpose2d_forward(m, P(stage_name("dec.deconv", s, ".kernel")),
                                         P(stage_name("dec.deconv", s, ".bias")));
    if (s + 1 < stages) layers::relu_inplace(m.v);
  }
  layers::sigmoid_inplace(m.v);
  c.recon = std::move(m);
  return c;
}

template <typename T>
LatentBatch<T> encoder_forward(const ModelParams<T>& params, const FeatureMap<T>& x) {
  const auto& cfg = params.config;
  const Names<T> P{params.tensors};
  if (x.c != 1 || x.h != kSnippetRows || x.w != kSnippetCols) throw Error(ErrorCode::ShapeError, "input must be 16x256");
  const std::size_t stages = cfg.conv_filters.size();
  FeatureMap<T> a = x;
  std::vector<std::uint8_t> arg;
  for (std::size_t s = 0; s < stages; ++s) {
    if (s + 1 == stages) {
      a = layers::batchnorm_forward_infer(a, P("enc.bn.gain"), P("enc.bn.shift"), P("enc.bn.running_mean"),
                                          P("enc.bn.running_var"));
    }
    auto y = layers::conv2d_forward(a, P(stage_name("enc.conv", s, ".kernel")), P(stage_name("enc.conv", s, ".bias")));
    layers::relu_inplace(y.v);
    a = layers::maxpool_cols_forward(y, arg);
  }
  Rows<T> h = layers::flatten(a);
  for (std::size_t i = 0; i < cfg.dense_sizes.size(); ++i) {
    h = layers::dense_forward(h, P(stage_name("enc.dense", i, ".weight")), P(stage_name("enc.dense", i, ".bias")));
    layers::relu_inplace(h.v);
  }
  return {layers::dense_forward(h, P("enc.mu.weight"), P("enc.mu.bias")),
          layers::dense_forward(h, P("enc.logvar.weight"), P("enc.logvar.bias"))};
}

template <typename T>
Rows<T> reparameterize_with(const Rows<T>& mu, const Rows<T>& logvar, const Rows<T>& eps) {
  if (mu.n != logvar.n || mu.d != logvar.d || eps.n != mu.n || eps.d != mu.d) {
    throw Error(ErrorCode::ShapeError, "reparameterize shape mismatch");
  }
  Rows<T> z(mu.n, mu.d);
  for (std::size_t i = 0; i < z.v.size(); ++i) {
    z.v[i] = eps.v[i] == T(0) ? mu.v[i] : mu.v[i] + std::exp(logvar.v[i] / T(2)) * eps.v[i];
  }
  return z;
}

template <typename T>
Rows<T> reparameterize(const Rows<T>& mu, const Rows<T>& logvar, std::uint64_t seed, bool sample) {
  Rows<T> eps(mu.n, mu.d);
  if (sample) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (auto& e : eps.v) e = static_cast<T>(normal(rng));
  }
  return sample ? reparameterize_with(mu, logvar, eps) : mu;
}

template <typename T>
FeatureMap<T> decoder_forward(const ModelParams<T>& params, const Rows<T>& z) {
  const auto& cfg = params.config;
  const Names<T> P{params.tensors};
  if (z.d != cfg.latent_dim) throw Error(ErrorCode::ShapeError, "latent vector length mismatch");
  const std::size_t stages = cfg.conv_filters.size();
  Rows<T> h = z;
  for (std::size_t i = 0; i <= cfg.dense_sizes.size(); ++i) {
    h = layers::dense_forward(h, P(stage_name("dec.dense", i, ".weight")), P(stage_name("dec.dense", i, ".bias")));
    layers::relu_inplace(h.v);
  }
  FeatureMap<T> m = layers::unflatten(h, cfg.conv_filters.back(), kSnippetRows, cfg.pooled_cols());
  m = layers::batchnorm_forward_infer(m, P("dec.bn.gain"), P("dec.bn.shift"), P("dec.bn.running_mean"),
                                      P("dec.bn.running_var"));
  for (std::size_t s = 0; s < stages; ++s) {
    m = layers::conv_transpose2d_forward(m, P(stage_name("dec.deconv", s, ".kernel")),
                                         P(stage_name("dec.deconv", s, ".bias")));
    if (s + 1 < stages) layers::relu_inplace(m.v);
  }
  layers::sigmoid_inplace(m.v);
  return m;
}

template <typename T>
LossTerms<T> vae_loss(const FeatureMap<T>& x, const FeatureMap<T>& recon, const Rows<T>& mu, const Rows<T>& logvar,
                      double beta) {
  if (x.v.size() != recon.v.size() || x.n != recon.n || mu.n != x.n || logvar.n != x.n || mu.d != logvar.d) {
    throw Error(ErrorCode::ShapeError, "loss input shapes disagree");
  }
  const double n = static_cast<double>(x.n);
  double se = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double d = static_cast<double>(x.v[i]) - static_cast<double>(recon.v[i]);
    se += d * d;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.v.size(); ++i) {
    const double m = mu.v[i];
    const double lv = logvar.v[i];
    kl += -0.5 * (1.0 + lv - m * m - std::exp(lv));
  }
  LossTerms<T> out;
  const double recon_term = se / (n * static_cast<double>(kSnippetSize));
  const double kl_term = kl / n;
  const double total = beta == 0.0 ? recon_term : recon_term + beta * kl_term;
  if (!std::isfinite(total)) throw Error(ErrorCode::NumericalError, "loss is not finite");
  out.recon = static_cast<T>(recon_term);
  out.kl = static_cast<T>(kl_term);
  out.total = static_cast<T>(total);
  return out;
}

template <typename T>
NamedTensors<T> vae_backward(const ModelParams<T>& params, const FeatureMap<T>& x, const ForwardCache<T>& c,
                             double beta) {
  if (c.mode != Mode::Train) throw Error(ErrorCode::InvalidConfig, "backward needs a train-mode forward pass");
  const auto& cfg = params.config;
  const Names<T> P{params.tensors};
  NamedTensors<T> g = params.tensors.like();
  const std::size_t stages = cfg.conv_filters.size();
  const std::size_t n = x.n;

  // d(mean MSE)/d recon, then through the sigmoid.
  FeatureMap<T> dm(1, n, kSnippetRows, kSnippetCols);
  const T scale = T(2) / static_cast<T>(n * kSnippetSize);
  for (std::size_t i = 0; i < dm.v.size(); ++i) dm.v[i] = scale * (c.recon.v[i] - x.v[i]);
  layers::sigmoid_backward_inplace(dm.v, c.recon.v);

  for (std::size_t s = stages; s-- > 0;) {
    if (s + 1 < stages) layers::relu_backward_inplace(dm.v, c.dec_in[s + 1].v);
    const auto k = stage_name("dec.deconv", s, ".kernel");
    const auto b = stage_name("dec.deconv", s, ".bias");
    dm = layers::conv_transpose2d_backward(c.dec_in[s], P(k), dm, g.at(k), g.at(b));
  }
  dm = layers::batchnorm_backward(dm, P("dec.bn.gain"), c.dec_bn, g.at("dec.bn.gain"), g.at("dec.bn.shift"));

  Rows<T> dh = layers::flatten(dm);
  layers::relu_backward_inplace(dh.v, c.dec_dense_out.v);
  for (std::size_t i = cfg.dense_sizes.size() + 1; i-- > 0;) {
    const auto w = stage_name("dec.dense", i, ".weight");
    const auto b = stage_name("dec.dense", i, ".bias");
    dh = layers::dense_backward(c.dec_dense_in[i], P(w), dh, g.at(w), g.at(b));
    if (i > 0) layers::relu_backward_inplace(dh.v, c.dec_dense_in[i].v);
  }

  // dh is now dL/dz. Reparameterization and KL terms.
  Rows<T> dmu(n, cfg.latent_dim), dlv(n, cfg.latent_dim);
  const T kl_scale = static_cast<T>(beta / static_cast<double>(n));
  for (std::size_t i = 0; i < dmu.v.size(); ++i) {
    dmu.v[i] = dh.v[i];
    dlv.v[i] = T(0);
    if (c.eps.v[i] != T(0)) dlv.v[i] += dh.v[i] * c.eps.v[i] * std::exp(c.logvar.v[i] / T(2)) / T(2);
    if (beta != 0.0) {
      dmu.v[i] += kl_scale * c.mu.v[i];
      dlv.v[i] += kl_scale * (std::exp(c.logvar.v[i]) - T(1)) / T(2);
    }
  }
  Rows<T> dhead = layers::dense_backward(c.head_in, P("enc.mu.weight"), dmu, g.at("enc.mu.weight"), g.at("enc.mu.bias"));
  add_into(dhead, layers::dense_backward(c.head_in, P("enc.logvar.weight"), dlv, g.at("enc.logvar.weight"),
                                         g.at("enc.logvar.bias")));
  dh = std::move(dhead);
  for (std::size_t i = cfg.dense_sizes.size(); i-- > 0;) {
    layers::relu_backward_inplace(dh.v, i + 1 < cfg.dense_sizes.size() ? c.enc_dense_in[i + 1].v : c.head_in.v);
    const auto w = stage_name("enc.dense", i, ".weight");
    const auto b = stage_name("enc.dense", i, ".bias");
    dh = layers::dense_backward(c.enc_dense_in[i], P(w), dh, g.at(w), g.at(b));
  }

  FeatureMap<T> da = layers::unflatten(dh, cfg.conv_filters.back(), kSnippetRows, cfg.pooled_cols());
  for (std::size_t s = stages; s-- > 0;) {
    FeatureMap<T> dy = layers::maxpool_cols_backward(da, c.enc_arg[s]);
    layers::relu_backward_inplace(dy.v, c.enc_act[s].v);
    const auto k = stage_name("enc.conv", s, ".kernel");
    const auto b = stage_name("enc.conv", s, ".bias");
    da = layers::conv2d_backward(c.enc_in[s], P(k), dy, g.at(k), g.at(b));
    if (s + 1 == stages) {
      da = layers::batchnorm_backward(da, P("enc.bn.gain"), c.enc_bn, g.at("enc.bn.gain"), g.at("enc.bn.shift"));
    }
  }
  for (const auto& [name, t] : g.entries()) {
    for (T v : t.data) {
      if (!std::isfinite(static_cast<double>(v))) throw Error(ErrorCode::NumericalError, "non-finite gradient in " + name);
    }
  }
  return g;
}

template <typename T>
GradientResult<T> compute_gradients(const ModelParams<T>& params, const FeatureMap<T>& x, const Rows<T>& eps) {
  const auto cache = vae_forward(params, x, eps, Mode::Train);
  GradientResult<T> r;
  r.loss = vae_loss(x, cache.recon, cache.mu, cache.logvar, params.config.beta);
  r.grads = vae_backward(params, x, cache, params.config.beta);
  return r;
}

template <typename T>
void update_running_stats(ModelParams<T>& params, const ForwardCache<T>& cache, double momentum) {
  if (cache.mode != Mode::Train) return;
  auto update = [&](const std::string& prefix, const layers::BatchNormCache<T>& bn, std::size_t count) {
    auto& rm = params.tensors.at(prefix + ".running_mean");
    auto& rv = params.tensors.at(prefix + ".running_var");
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t ch = 0; ch < bn.mean.size(); ++ch) {
      rm.data[ch] = static_cast<T>(momentum * rm.data[ch] + (1.0 - momentum) * bn.mean[ch]);
      rv.data[ch] = static_cast<T>(momentum * rv.data[ch] + (1.0 - momentum) * bn.var[ch] * unbias);
    }
  };
  update("enc.bn", cache.enc_bn, cache.enc_bn.xhat.plane());
  update("dec.bn", cache.dec_bn, cache.dec_bn.xhat.plane());
}

template <typename T>
AdamState<T> adam_init(const NamedTensors<T>& params) {
  return {params.like(), params.like()};
}

template <typename T>
void adam_step(NamedTensors<T>& params, const NamedTensors<T>& grads, AdamState<T>& state, double lr,
               std::size_t step_index, const AdamConfig& cfg) {
  if (step_index < 1) throw Error(ErrorCode::InvalidConfig, "adam step index starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (auto& [name, p] : params.entries()) {
    if (!is_trainable(name)) continue;
    const auto& g = grads.at(name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    if (g.size() != p.size() || m.size() != p.size()) throw Error(ErrorCode::ShapeError, "adam shape mismatch: " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[i];
      const double mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      p.data[i] = static_cast<T>(p.data[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
  }
}

std::vector<std::vector<double>> encode_snippets(const ModelParams<float>& params, std::span<const Snippet> snippets,
                                                 std::size_t threads) {
  constexpr std::size_t kChunk = 64;
  std::vector<std::vector<double>> out(snippets.size());
  const std::size_t chunks = (snippets.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t ci) {
    const std::size_t lo = ci * kChunk;
    const std::size_t hi = std::min(snippets.size(), lo + kChunk);
    const auto x = stack_snippets<float>(snippets.subspan(lo, hi - lo));
    const auto latent = encoder_forward(params, x);
    for (std::size_t i = lo; i < hi; ++i) {
      auto& row = out[i];
      row.resize(latent.mu.d);
      for (std::size_t j = 0; j < latent.mu.d; ++j) row[j] = latent.mu.at(i - lo, j);
    }
  });
  return out;
}

#define LOOKALIKE_INSTANTIATE_BVAE(T)                                                                              \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                      \
  template void validate_params(const ModelParams<T>&);                                                            \
  template FeatureMap<T> stack_snippets<T>(std::span<const Snippet>);                                              \
  template FeatureMap<T> stack_raw<T>(std::span<const T>, std::size_t);                                            \
  template LatentBatch<T> encoder_forward(const ModelParams<T>&, const FeatureMap<T>&);                            \
  template Rows<T> reparameterize(const Rows<T>&, const Rows<T>&, std::uint64_t, bool);                            \
  template Rows<T> reparameterize_with(const Rows<T>&, const Rows<T>&, const Rows<T>&);                            \
  template FeatureMap<T> decoder_forward(const ModelParams<T>&, const Rows<T>&);                                   \
  template LossTerms<T> vae_loss(const FeatureMap<T>&, const FeatureMap<T>&, const Rows<T>&, const Rows<T>&,       \
                                 double);                                                                          \
  template ForwardCache<T> vae_forward(const ModelParams<T>&, const FeatureMap<T>&, const Rows<T>&, Mode);         \
  template NamedTensors<T> vae_backward(const ModelParams<T>&, const FeatureMap<T>&, const ForwardCache<T>&,       \
                                        double);                                                                   \
  template GradientResult<T> compute_gradients(const ModelParams<T>&, const FeatureMap<T>&, const Rows<T>&);       \
  template void update_running_stats(ModelParams<T>&, const ForwardCache<T>&, double);                             \
  template AdamState<T> adam_init(const NamedTensors<T>&);                                                         \
  template void adam_step(NamedTensors<T>&, const NamedTensors<T>&, AdamState<T>&, double, std::size_t,            \
                          const AdamConfig&);

LOOKALIKE_INSTANTIATE_BVAE(float)
LOOKALIKE_INSTANTIATE_BVAE(double)

#undef LOOKALIKE_INSTANTIATE_BVAE

}  // namespace lookalike
