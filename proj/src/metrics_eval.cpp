#include "lookalike/metrics_eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "lookalike/bvae.hpp"
#include "lookalike/error.hpp"
#include "lookalike/parallel.hpp"

namespace lookalike {

namespace {

constexpr double kSnippetWidthHz = static_cast<double>(kSnippetCols) * kDefaultDf;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Clusters {
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> of_point;
};

Clusters group_labels(const Matrix& features, std::span<const int> labels, std::size_t min_members,
                      std::size_t min_clusters = 2) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error(ErrorCode::ShapeError, "label count differs from feature rows");
  }
  std::map<int, std::size_t> ids;
  for (int l : labels) ids.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [label, id] : ids) id = next++;
  if (ids.size() < min_clusters) throw Error(ErrorCode::InvalidClustering, "too few clusters");
  Clusters c;
  c.members.resize(ids.size());
  c.of_point.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    c.of_point[i] = ids[labels[i]];
    c.members[c.of_point[i]].push_back(i);
  }
  for (const auto& m : c.members) {
    if (m.size() < min_members) throw Error(ErrorCode::InvalidClustering, "every cluster needs at least two members");
  }
  return c;
}

Eigen::RowVectorXd centroid(const Matrix& features, const std::vector<std::size_t>& members) {
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(features.cols());
  for (auto i : members) c += features.row(static_cast<Eigen::Index>(i));
  return c / static_cast<double>(members.size());
}

void check_finite(const Matrix& features) {
  if (!features.allFinite()) throw Error(ErrorCode::NumericalError, "non-finite feature values");
}

double population_std(std::span<const double> v, double mean) {
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  const std::size_t d = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw Error(ErrorCode::ShapeError, "ragged feature rows");
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

double ParamRange::sample(std::mt19937_64& rng) const {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void EvalRanges::validate() const {
  auto check = [](const ParamRange& r, const char* what, bool positive) {
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || (positive && !(r.lo > 0.0))) {
      throw Error(ErrorCode::InvalidConfig, std::string("invalid ") + what + " range");
    }
  };
  check(snr, "snr", true);
  check(drift_rate, "drift rate", false);
  check(width, "width", true);
  if (!std::isfinite(band_start) || !(band_width >= kSnippetWidthHz)) {
    throw Error(ErrorCode::InvalidConfig, "band must hold at least one snippet");
  }
  if (!(class_band_fraction > 0.0 && class_band_fraction <= 1.0) ||
      class_band_fraction * band_width < kSnippetWidthHz) {
    throw Error(ErrorCode::InvalidConfig, "class sub-band must be in (0, 1] of the band and hold one snippet");
  }
}

FactorVector sample_factors(const EvalRanges& ranges, std::mt19937_64& rng) {
  FactorVector f{};
  f[kFactorSnr] = ranges.snr.sample(rng);
  f[kFactorDrift] = ranges.drift_rate.sample(rng);
  f[kFactorWidth] = ranges.width.sample(rng);
  f[kFactorPosition] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return f;
}

double track_offset(const FactorVector& factors, double df, double dt) {
  const double span = factors[kFactorDrift] * dt * static_cast<double>(kSnippetRows - 1);
  const double w = static_cast<double>(kSnippetCols) * df;
  const double lo = factors[kFactorWidth] - std::min(0.0, span);
  const double hi = w - factors[kFactorWidth] - std::max(0.0, span);
  if (hi < lo) return std::clamp(0.5 * (lo + hi), 0.0, std::nextafter(w, 0.0));
  return lo + factors[kFactorPosition] * (hi - lo);
}

Spectrogram render_patch(const FactorVector& factors, double f_start, std::uint64_t noise_seed) {
  Spectrogram spec = gen_noise(kSnippetRows, kSnippetCols, noise_seed, f_start);
  SignalParams p;
  p.snr = factors[kFactorSnr];
  p.drift_rate = factors[kFactorDrift];
  p.width = factors[kFactorWidth];
  p.f_center = f_start + track_offset(factors, spec.df, spec.dt);
  inject_signal_inplace(spec, p);
  return spec;
}

Snippet render_snippet(const FactorVector& factors, double f_start, std::uint64_t noise_seed,
                       const std::string& source_id) {
  return normalize_snippet(extract_window(render_patch(factors, f_start, noise_seed), 0, source_id));
}

std::vector<RawEvalClass> build_raw_eval_set(std::size_t n_classes, std::size_t per_class, const EvalRanges& ranges,
                                             std::uint64_t seed) {
  if (n_classes < 2) throw Error(ErrorCode::InvalidConfig, "need at least two classes");
  if (per_class < 2) throw Error(ErrorCode::InvalidConfig, "need at least two snippets per class");
  ranges.validate();
  std::mt19937_64 rng(seed);
  const double sub = ranges.class_band_fraction * ranges.band_width;
  std::vector<RawEvalClass> out(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& cls = out[c];
    cls.class_id = static_cast<int>(c);
    const auto base = sample_factors(ranges, rng);
    cls.params.snr = base[kFactorSnr];
    cls.params.drift_rate = base[kFactorDrift];
    cls.params.width = base[kFactorWidth];
    const double sub_start = ranges.band_start + std::uniform_real_distribution<double>(0.0, ranges.band_width - sub)(rng);
    std::uniform_real_distribution<double> start_dist(sub_start, sub_start + sub - kSnippetWidthHz);
    for (std::size_t i = 0; i < per_class; ++i) {
      auto f = base;
      f[kFactorPosition] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const double f_start = start_dist(rng);
      const std::uint64_t noise_seed = rng();
      cls.patches.push_back(render_patch(f, f_start, noise_seed));
      cls.factors.push_back(f);
      cls.ids.push_back("class" + std::to_string(c) + "_" + std::to_string(i));
    }
  }
  return out;
}

std::vector<EvalClass> build_eval_set(std::size_t n_classes, std::size_t per_class, const EvalRanges& ranges,
                                      std::uint64_t seed) {
  const auto raw = build_raw_eval_set(n_classes, per_class, ranges, seed);
  std::vector<EvalClass> out(raw.size());
  for (std::size_t c = 0; c < raw.size(); ++c) {
    out[c].class_id = raw[c].class_id;
    out[c].params = raw[c].params;
    for (std::size_t i = 0; i < raw[c].patches.size(); ++i) {
      out[c].snippets.push_back(normalize_snippet(extract_window(raw[c].patches[i], 0, raw[c].ids[i])));
    }
  }
  return out;
}

LabeledSnippets flatten(const std::vector<EvalClass>& classes) {
  LabeledSnippets out;
  for (const auto& c : classes) {
    for (const auto& s : c.snippets) {
      out.snippets.push_back(s);
      out.labels.push_back(c.class_id);
    }
  }
  return out;
}

double silhouette_score(const Matrix& features, std::span<const int> labels, std::size_t threads) {
  const auto clusters = group_labels(features, labels, 2);
  check_finite(features);
  const std::size_t n = labels.size();
  const std::size_t k = clusters.members.size();
  // sums(i, c): total distance from point i to cluster c
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  parallel_for(n, threads, [&](std::size_t i) {
    const auto xi = features.row(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (xi - features.row(static_cast<Eigen::Index>(j))).norm();
      sums(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(clusters.of_point[j])) += d;
    }
  });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t own = clusters.of_point[i];
    const double a = sums(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(own)) /
                     static_cast<double>(clusters.members[own].size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c == own) continue;
      b = std::min(b, sums(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) /
                          static_cast<double>(clusters.members[c].size()));
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

double modified_silhouette(const Matrix& features, std::span<const int> labels) {
  const auto clusters = group_labels(features, labels, 2);
  check_finite(features);
  const std::size_t k = clusters.members.size();
  const auto d = features.cols();
  std::vector<Eigen::RowVectorXd> centers;
  double intra = 0.0;
  for (const auto& m : clusters.members) {
    centers.push_back(centroid(features, m));
    double dim_std = 0.0;
    std::vector<double> col(m.size());
    for (Eigen::Index j = 0; j < d; ++j) {
      for (std::size_t r = 0; r < m.size(); ++r) col[r] = features(static_cast<Eigen::Index>(m[r]), j);
      dim_std += population_std(col, centers.back()(j));
    }
    intra += dim_std / static_cast<double>(d);
  }
  intra /= static_cast<double>(k);
  double inter = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) inter += (centers[a] - centers[b]).norm();
  inter /= static_cast<double>(k * (k - 1) / 2);
  const double m = std::max(inter, intra);
  return m > 0.0 ? (inter - intra) / m : 0.0;
}

double clustering_metric(const Matrix& features, std::span<const int> labels) {
  const auto clusters = group_labels(features, labels, 2, 1);
  check_finite(features);
  double total = 0.0;
  for (const auto& m : clusters.members) {
    const auto c = centroid(features, m);
    double max_d = 0.0;
    double sum_d = 0.0;
    for (auto i : m) {
      const double d = (features.row(static_cast<Eigen::Index>(i)) - c).norm();
      max_d = std::max(max_d, d);
      sum_d += d;
    }
    const double mean_d = sum_d / static_cast<double>(m.size());
    if (!(mean_d > 0.0)) throw Error(ErrorCode::DegenerateCluster, "cluster has identical members");
    total += max_d / mean_d;
  }
  return total / static_cast<double>(clusters.members.size());
}

void standardize(Matrix& train, Matrix& test) {
  if (train.rows() == 0) throw Error(ErrorCode::EmptyDataset, "no training rows to standardize with");
  if (test.cols() != train.cols()) throw Error(ErrorCode::ShapeError, "train and test widths differ");
  for (Eigen::Index j = 0; j < train.cols(); ++j) {
    const double mean = train.col(j).mean();
    const double var = (train.col(j).array() - mean).square().mean();
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    train.col(j) = (train.col(j).array() - mean) * scale;
    test.col(j) = (test.col(j).array() - mean) * scale;
  }
}

std::vector<int> LinearClassifier::predict(const Matrix& x) const {
  const Matrix logits = (x * weight).rowwise() + bias;
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

LinearClassifier fit_logistic(const Matrix& x, std::span<const int> labels, std::size_t n_classes,
                              std::size_t iterations, double learning_rate) {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw Error(ErrorCode::ShapeError, "classifier inputs and labels disagree");
  }
  const auto n = x.rows();
  const auto d = static_cast<std::size_t>(x.cols());
  NamedTensors<double> params;
  params.add("weight", {d, n_classes});
  params.add("bias", {n_classes});
  auto adam = adam_init(params);
  Matrix onehot = Matrix::Zero(n, static_cast<Eigen::Index>(n_classes));
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  using MapM = Eigen::Map<Matrix>;
  using MapV = Eigen::Map<Eigen::RowVectorXd>;
  const auto kc = static_cast<Eigen::Index>(n_classes);
  for (std::size_t it = 1; it <= iterations; ++it) {
    const MapM w(params.at("weight").data.data(), x.cols(), kc);
    const MapV b(params.at("bias").data.data(), kc);
    Matrix p = (x * w).rowwise() + b;
    for (Eigen::Index i = 0; i < n; ++i) {
      p.row(i).array() -= p.row(i).maxCoeff();
      p.row(i) = p.row(i).array().exp().matrix();
      p.row(i) /= p.row(i).sum();
    }
    const Matrix delta = (p - onehot) / static_cast<double>(n);
    auto grads = params.like();
    MapM(grads.at("weight").data.data(), x.cols(), kc) = x.transpose() * delta;
    MapV(grads.at("bias").data.data(), kc) = delta.colwise().sum();
    adam_step(params, grads, adam, learning_rate, it);
  }
  LinearClassifier out;
  out.weight = MapM(params.at("weight").data.data(), x.cols(), kc);
  out.bias = MapV(params.at("bias").data.data(), kc);
  return out;
}

double disentanglement_score(const FactorEncoder& encoder, const DisentanglementConfig& cfg, std::uint64_t seed) {
  cfg.ranges.validate();
  if (cfg.pairs_per_vote < 1) throw Error(ErrorCode::InvalidConfig, "need at least one pair per vote");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "train fraction must be in (0, 1)");
  }
  std::vector<std::size_t> factors = cfg.factors;
  for (auto f : factors) {
    if (f >= kNumFactors) throw Error(ErrorCode::InvalidConfig, "unknown generative factor");
  }
  std::sort(factors.begin(), factors.end());
  factors.erase(std::unique(factors.begin(), factors.end()), factors.end());
  if (factors.size() < 2 || cfg.n_votes < 2) {
    throw Error(ErrorCode::InvalidConfig, "need at least two fixed-factor classes");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> band(cfg.ranges.band_start,
                                              cfg.ranges.band_start + cfg.ranges.band_width - kSnippetWidthHz);
  std::vector<std::vector<double>> votes;
  std::vector<int> labels;
  std::vector<FactorPoint> points(2 * cfg.pairs_per_vote);
  for (std::size_t v = 0; v < cfg.n_votes; ++v) {
    const std::size_t label = v % factors.size();
    const std::size_t fixed = factors[label];
    for (std::size_t p = 0; p < cfg.pairs_per_vote; ++p) {
      auto& a = points[2 * p];
      auto& b = points[2 * p + 1];
      a.factors = sample_factors(cfg.ranges, rng);
      b.factors = sample_factors(cfg.ranges, rng);
      b.factors[fixed] = a.factors[fixed];
      for (auto* pt : {&a, &b}) {
        const double f_start = band(rng);
        const std::uint64_t noise_seed = rng();
        if (cfg.render) pt->snippet = render_snippet(pt->factors, f_start, noise_seed);
      }
    }
    const auto z = encoder(points);
    if (z.size() != points.size()) throw Error(ErrorCode::ShapeError, "encoder returned the wrong number of latents");
    std::vector<double> feature(z.front().size(), 0.0);
    for (std::size_t p = 0; p < cfg.pairs_per_vote; ++p) {
      const auto& z1 = z[2 * p];
      const auto& z2 = z[2 * p + 1];
      if (z1.size() != feature.size() || z2.size() != feature.size()) throw Error(ErrorCode::ShapeError, "ragged latents");
      for (std::size_t j = 0; j < feature.size(); ++j) feature[j] += std::abs(z1[j] - z2[j]);
    }
    for (auto& x : feature) x /= static_cast<double>(cfg.pairs_per_vote);
    votes.push_back(std::move(feature));
    labels.push_back(static_cast<int>(label));
  }

  std::vector<std::size_t> order(votes.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(votes.size()))), 1,
      votes.size() - 1);
  std::vector<std::vector<double>> train_rows, test_rows;
  std::vector<int> train_labels, test_labels;
  for (std::size_t r = 0; r < order.size(); ++r) {
    auto& rows = r < n_train ? train_rows : test_rows;
    auto& lab = r < n_train ? train_labels : test_labels;
    rows.push_back(votes[order[r]]);
    lab.push_back(labels[order[r]]);
  }
  Matrix train = to_matrix(train_rows);
  Matrix test = to_matrix(test_rows);
  check_finite(train);
  check_finite(test);
  standardize(train, test);
  const auto clf = fit_logistic(train, train_labels, factors.size(), cfg.classifier_iterations,
                                cfg.classifier_learning_rate);
  const auto pred = clf.predict(test);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<double> naive_features(const Snippet& snippet) {
  if (snippet.data.size() != kSnippetSize) throw Error(ErrorCode::InvalidShape, "snippet must be 16x256");
  return std::vector<double>(snippet.data.begin(), snippet.data.end());
}

const BenchmarkRow& BenchmarkReport::row(const std::string& extractor, const std::string& metric) const {
  for (const auto& r : rows) {
    if (r.extractor == extractor && r.metric == metric) return r;
  }
  throw Error(ErrorCode::IndexError, "no benchmark row for " + extractor + "/" + metric);
}

BenchmarkReport run_benchmark(std::span<const NamedExtractor> extractors, const BenchmarkConfig& cfg) {
  if (extractors.empty()) throw Error(ErrorCode::InvalidConfig, "need at least one extractor");
  if (cfg.n_trials < 1) throw Error(ErrorCode::InvalidConfig, "need at least one trial");
  cfg.ranges.validate();

  BenchmarkReport report;
  for (const auto& e : extractors) {
    report.rows.push_back({e.name, "silhouette", std::vector<double>(cfg.n_trials), 0.0, 0.0});
    report.rows.push_back({e.name, "clustering", std::vector<double>(cfg.n_trials), 0.0, 0.0});
    if (e.trainable) report.rows.push_back({e.name, "disentanglement", std::vector<double>(cfg.n_trials), 0.0, 0.0});
  }

  parallel_for(cfg.n_trials, cfg.threads, [&](std::size_t t) {
    const std::uint64_t trial_seed = splitmix64(cfg.seed ^ splitmix64(t));
    const auto set = flatten(build_eval_set(cfg.n_classes, cfg.per_class, cfg.ranges, trial_seed));
    auto dis = cfg.disentanglement;
    dis.ranges = cfg.ranges;
    std::size_t row = 0;
    for (const auto& e : extractors) {
      const Matrix f = to_matrix(e.extract(set.snippets));
      report.rows[row++].values[t] = silhouette_score(f, set.labels);
      report.rows[row++].values[t] = clustering_metric(f, set.labels);
      if (e.trainable) {
        const FactorEncoder enc = [&](std::span<const FactorPoint> pts) {
          std::vector<Snippet> s;
          s.reserve(pts.size());
          for (const auto& p : pts) s.push_back(p.snippet);
          return e.extract(s);
        };
        report.rows[row++].values[t] = disentanglement_score(enc, dis, splitmix64(trial_seed));
      }
    }
  });

  for (auto& r : report.rows) {
    const double n = static_cast<double>(r.values.size());
    r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / n;
    r.std = population_std(r.values, r.mean);
  }
  return report;
}

void write_benchmark_csv(std::ostream& os, const BenchmarkReport& report) {
  os << "extractor,metric,mean,std,n_trials\n";
  const auto old = os.precision(10);
  for (const auto& r : report.rows) {
    os << r.extractor << ',' << r.metric << ',' << r.mean << ',' << r.std << ',' << r.values.size() << '\n';
  }
  os.precision(old);
}

void print_benchmark_table(std::ostream& os, const BenchmarkReport& report) {
  const auto flags = os.flags();
  const auto old = os.precision();
  os << std::left << std::setw(12) << "extractor" << std::setw(18) << "metric" << std::right << std::setw(12) << "mean"
     << std::setw(12) << "std" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : report.rows) {
    os << std::left << std::setw(12) << r.extractor << std::setw(18) << r.metric << std::right << std::setw(12) << r.mean
       << std::setw(12) << r.std << '\n';
  }
  os.flags(flags);
  os.precision(old);
}

}  // namespace lookalike
