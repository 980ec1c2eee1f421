#include "lookalike/energy_detection.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "lookalike/error.hpp"

namespace lookalike {

namespace {

// Uniform cubic B-spline basis weights for local coordinate u in [0, 1).
std::array<double, 4> bspline_weights(double u) {
  const double u2 = u * u;
  const double u3 = u2 * u;
  return {(1.0 - u) * (1.0 - u) * (1.0 - u) / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
          (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0};
}

// Least-squares cubic spline with `intervals` uniform spans over
// profile[0..m); returns the fitted values.
std::vector<double> fit_spline(std::span<const double> profile, std::size_t intervals) {
  const std::size_t m = profile.size();
  const std::size_t n_basis = intervals + 3;
  std::vector<std::size_t> first(m);
  std::vector<std::array<double, 4>> weights(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(m) * static_cast<double>(intervals);
    const std::size_t span = std::min(static_cast<std::size_t>(x), intervals - 1);
    first[j] = span;
    weights[j] = bspline_weights(x - static_cast<double>(span));
  }

  Eigen::SparseMatrix<double> normal(static_cast<Eigen::Index>(n_basis), static_cast<Eigen::Index>(n_basis));
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(m * 16);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_basis));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t a = 0; a < 4; ++a) {
      const auto ia = static_cast<Eigen::Index>(first[j] + a);
      rhs[ia] += weights[j][a] * profile[j];
      for (std::size_t b = 0; b < 4; ++b) {
        triplets.emplace_back(ia, static_cast<Eigen::Index>(first[j] + b), weights[j][a] * weights[j][b]);
      }
    }
  }
  normal.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::NumericalError, "spline normal equations singular");
  const Eigen::VectorXd coef = solver.solve(rhs);

  std::vector<double> fit(m);
  for (std::size_t j = 0; j < m; ++j) {
    double v = 0.0;
    for (std::size_t a = 0; a < 4; ++a) v += weights[j][a] * coef[static_cast<Eigen::Index>(first[j] + a)];
    fit[j] = v;
  }
  return fit;
}

template <typename T>
NormalityStatistic normality_impl(std::span<const T> x) {
  const std::size_t count = x.size();
  if (count < 8) throw Error(ErrorCode::DegenerateWindow, "normality test needs at least 8 samples");
  const double n = static_cast<double>(count);
  double mean = 0.0;
  for (T v : x) mean += static_cast<double>(v);
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (T v : x) {
    const double d = static_cast<double>(v) - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0) || m2 <= 1e-24 * mean * mean) throw Error(ErrorCode::DegenerateWindow, "window has zero variance");

  NormalityStatistic out;

  // Skewness test.
  const double b1 = m3 / std::pow(m2, 1.5);
  const double y = b1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
  const double beta2 =
      3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
  const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
  const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
  const double alpha = std::sqrt(2.0 / (w2 - 1.0));
  out.z_skew = delta * std::asinh(y / alpha);

  // Kurtosis test (Anscombe-Glynn).
  const double b2 = m4 / (m2 * m2);
  const double expected = 3.0 * (n - 1.0) / (n + 1.0);
  const double var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
  const double xk = (b2 - expected) / std::sqrt(var_b2);
  const double sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                            std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
  const double a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + std::sqrt(1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)));
  const double term1 = 1.0 - 2.0 / (9.0 * a);
  const double denom = 1.0 + xk * std::sqrt(2.0 / (a - 4.0));
  if (denom == 0.0) throw Error(ErrorCode::NumericalError, "kurtosis transform undefined");
  const double term2 = std::copysign(std::cbrt((1.0 - 2.0 / a) / std::abs(denom)), denom);
  out.z_kurt = (term1 - term2) / std::sqrt(2.0 / (9.0 * a));

  out.k2 = out.z_skew * out.z_skew + out.z_kurt * out.z_kurt;
  return out;
}

}  // namespace

Spectrogram bandpass_correct(const Spectrogram& spec, const BandpassConfig& cfg) {
  spec.validate();
  if (cfg.knot_spacing == 0) throw Error(ErrorCode::InvalidConfig, "knot spacing must be >= 1");
  if (cfg.coarse_width_hz < static_cast<double>(kSnippetCols) * spec.df) {
    throw Error(ErrorCode::InvalidConfig, "coarse channel must span at least 256 bins");
  }
  const auto coarse_bins = static_cast<std::size_t>(std::llround(cfg.coarse_width_hz / spec.df));
  if (coarse_bins < cfg.knot_spacing) throw Error(ErrorCode::InvalidConfig, "coarse channel narrower than knot spacing");
  if (spec.n_freq < 4) throw Error(ErrorCode::InvalidShape, "bandpass fit needs at least 4 bins");

  std::vector<double> profile(spec.n_freq, 0.0);
  for (std::size_t t = 0; t < spec.n_time; ++t) {
    for (std::size_t f = 0; f < spec.n_freq; ++f) profile[f] += spec.at(t, f);
  }
  for (auto& v : profile) v /= static_cast<double>(spec.n_time);

  // Channel boundaries; a short tail is merged into the preceding channel.
  std::vector<std::size_t> edges{0};
  while (edges.back() + coarse_bins < spec.n_freq) edges.push_back(edges.back() + coarse_bins);
  edges.push_back(spec.n_freq);
  if (edges.size() > 2 && edges[edges.size() - 1] - edges[edges.size() - 2] < cfg.knot_spacing) {
    edges.erase(edges.end() - 2);
  }

  std::vector<double> fit(spec.n_freq);
  for (std::size_t c = 0; c + 1 < edges.size(); ++c) {
    const std::size_t lo = edges[c];
    const std::size_t m = edges[c + 1] - lo;
    std::size_t intervals = std::max<std::size_t>(1, (m + cfg.knot_spacing - 1) / cfg.knot_spacing);
    while (intervals > 1 && m < intervals + 3) --intervals;
    if (m < 4) throw Error(ErrorCode::InvalidShape, "coarse channel too narrow for a cubic fit");
    const auto part = fit_spline(std::span<const double>(profile).subspan(lo, m), intervals);
    std::copy(part.begin(), part.end(), fit.begin() + static_cast<std::ptrdiff_t>(lo));
  }

  Spectrogram out = spec;
  for (std::size_t t = 0; t < spec.n_time; ++t) {
    for (std::size_t f = 0; f < spec.n_freq; ++f) {
      out.at(t, f) = static_cast<float>(static_cast<double>(spec.at(t, f)) - fit[f]);
    }
  }
  return out;
}

NormalityStatistic normality_test(std::span<const float> samples) { return normality_impl(samples); }
NormalityStatistic normality_test(std::span<const double> samples) { return normality_impl(samples); }

double window_statistic(std::span<const float> window) {
  if (window.size() != kSnippetSize) throw Error(ErrorCode::InvalidShape, "window must be 16x256");
  return normality_test(window).k2;
}

DetectionResult detect(const Spectrogram& corrected, double threshold, bool invert) {
  if (corrected.n_time < kSnippetRows || corrected.n_freq < kSnippetCols) {
    throw Error(ErrorCode::InvalidShape, "spectrogram smaller than one window");
  }
  DetectionResult result;
  for (std::size_t start = 0; start + kSnippetCols <= corrected.n_freq; start += kSnippetCols) {
    const Window w = extract_window(corrected, start);
    ++result.windows_scanned;
    double s = 0.0;
    try {
      s = window_statistic(w.data);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateWindow) throw;
      ++result.windows_degenerate;
      continue;
    }
    const bool signal = s > threshold;
    if (signal != invert) {
      result.hits.push_back({w.start_bin, w.center_freq, s, signal});
    }
  }
  return result;
}

std::vector<Snippet> balance_dataset(std::span<const Snippet> signals, std::span<const Snippet> noise,
                                     std::uint64_t seed) {
  if (signals.empty() || noise.empty()) throw Error(ErrorCode::EmptyDataset, "balance_dataset needs both classes");
  const std::size_t n = std::min(signals.size(), noise.size());
  std::mt19937_64 rng(seed);
  auto pick = [&](std::span<const Snippet> from, std::vector<Snippet>& into) {
    std::vector<std::size_t> idx(from.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
      std::swap(idx[i], idx[d(rng)]);
      into.push_back(from[idx[i]]);
    }
  };
  std::vector<Snippet> out;
  out.reserve(2 * n);
  pick(signals, out);
  pick(noise, out);
  for (std::size_t i = out.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(out[i - 1], out[d(rng)]);
  }
  return out;
}

double calibrate_threshold(std::size_t n_trials, double quantile, std::uint64_t seed) {
  if (n_trials == 0 || !(quantile > 0.0 && quantile < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "calibration needs trials and a quantile in (0, 1)");
  }
  std::vector<double> stats(n_trials);
  std::mt19937_64 seeder(seed);
  for (auto& s : stats) s = window_statistic(gen_noise(kSnippetRows, kSnippetCols, seeder()).data);
  std::sort(stats.begin(), stats.end());
  const auto idx = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(n_trials))) - 1;
  return stats[std::min(idx, n_trials - 1)];
}

void write_detections_csv(std::ostream& os, const std::string& source_id, std::span<const DetectionHit> hits,
                          bool header) {
  if (header) os << "source_id,start_bin,center_freq_hz,s_score,is_signal\n";
  const auto old_prec = os.precision(10);
  for (const auto& h : hits) {
    os << source_id << ',' << h.start_bin << ',' << h.center_freq << ',' << h.s_score << ','
       << (h.is_signal ? 1 : 0) << '\n';
  }
  os.precision(old_prec);
}

}  // namespace lookalike
