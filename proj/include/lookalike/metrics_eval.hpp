#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lookalike/spectrogram.hpp"

namespace lookalike {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows must share one length; throws ShapeError otherwise.
Matrix to_matrix(const std::vector<std::vector<double>>& rows);

struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;

  double sample(std::mt19937_64& rng) const;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct EvalRanges {
  ParamRange snr{20.0, 70.0};
  ParamRange drift_rate{-2.0, 2.0};  // Hz/s
  ParamRange width{20.0, 70.0};      // Hz
  // Absolute band the snippets are placed in.
  double band_start = 1.0e9;
  double band_width = 3.0e6;
  // Each class draws a sub-band of this fraction of the band and keeps all of
  // its snippets inside it; 1 spreads every class over the whole band.
  double class_band_fraction = 1.0;

  // Throws InvalidConfig.
  void validate() const;
};

// The four generative factors, in disentanglement label order.
enum Factor : std::size_t { kFactorSnr = 0, kFactorDrift = 1, kFactorWidth = 2, kFactorPosition = 3 };
inline constexpr std::size_t kNumFactors = 4;

// position is in [0, 1] across the offsets that keep the whole track inside
// the snippet (centered when none does).
using FactorVector = std::array<double, kNumFactors>;

FactorVector sample_factors(const EvalRanges& ranges, std::mt19937_64& rng);

// Track center at the first row, in Hz above the snippet's lower edge.
double track_offset(const FactorVector& factors, double df = kDefaultDf, double dt = kDefaultDt);

// One 16x256 noise patch starting at f_start with the track injected.
Spectrogram render_patch(const FactorVector& factors, double f_start, std::uint64_t noise_seed);

// render_patch cut and normalized.
Snippet render_snippet(const FactorVector& factors, double f_start, std::uint64_t noise_seed,
                       const std::string& source_id = {});

struct EvalClass {
  int class_id = 0;
  SignalParams params;  // f_center unused; position varies per snippet
  std::vector<Snippet> snippets;
};

std::vector<EvalClass> build_eval_set(std::size_t n_classes, std::size_t per_class, const EvalRanges& ranges,
                                      std::uint64_t seed);

// The same draws as build_eval_set, before normalization.
struct RawEvalClass {
  int class_id = 0;
  SignalParams params;
  std::vector<Spectrogram> patches;
  std::vector<FactorVector> factors;
  std::vector<std::string> ids;
};

std::vector<RawEvalClass> build_raw_eval_set(std::size_t n_classes, std::size_t per_class, const EvalRanges& ranges,
                                             std::uint64_t seed);

struct LabeledSnippets {
  std::vector<Snippet> snippets;
  std::vector<int> labels;
};

LabeledSnippets flatten(const std::vector<EvalClass>& classes);

// Mean silhouette with Euclidean distances.
double silhouette_score(const Matrix& features, std::span<const int> labels, std::size_t threads = 1);

// Silhouette-style combination of mean within-cluster per-dimension standard
// deviation (intra) and mean pairwise centroid distance (inter):
// (inter - intra) / max(inter, intra).
double modified_silhouette(const Matrix& features, std::span<const int> labels);

// Mean over clusters of max / mean distance to the cluster centroid.
double clustering_metric(const Matrix& features, std::span<const int> labels);

struct FactorPoint {
  FactorVector factors{};
  Snippet snippet;
};

// Maps points to one latent vector each.
using FactorEncoder = std::function<std::vector<std::vector<double>>(std::span<const FactorPoint>)>;

struct DisentanglementConfig {
  std::size_t n_votes = 200;
  std::size_t pairs_per_vote = 16;
  EvalRanges ranges;
  // Fixed factors cycled through votes.
  std::vector<std::size_t> factors{kFactorSnr, kFactorDrift, kFactorWidth, kFactorPosition};
  // Skip rendering snippets (for encoders that read only the factors).
  bool render = true;
  std::size_t classifier_iterations = 200;
  double classifier_learning_rate = 0.05;
  double train_fraction = 0.7;
};

// Held-out accuracy of a linear classifier predicting the fixed factor from
// mean |z1 - z2| over pairs that share it.
double disentanglement_score(const FactorEncoder& encoder, const DisentanglementConfig& cfg, std::uint64_t seed);

// Z-scores columns of both matrices with the train matrix's mean and
// population standard deviation (zero deviation leaves the column centered).
void standardize(Matrix& train, Matrix& test);

struct LinearClassifier {
  Matrix weight;  // d x classes
  Eigen::RowVectorXd bias;

  std::vector<int> predict(const Matrix& x) const;
};

// Multinomial logistic regression, full-batch Adam.
LinearClassifier fit_logistic(const Matrix& x, std::span<const int> labels, std::size_t n_classes,
                              std::size_t iterations, double learning_rate);

std::vector<double> naive_features(const Snippet& snippet);

using SnippetExtractor = std::function<std::vector<std::vector<double>>(std::span<const Snippet>)>;

struct NamedExtractor {
  std::string name;
  SnippetExtractor extract;
  bool trainable = false;  // also scored for disentanglement
};

struct BenchmarkConfig {
  std::size_t n_classes = 10;
  std::size_t per_class = 100;
  EvalRanges ranges;
  std::size_t n_trials = 10;
  std::uint64_t seed = 0;
  DisentanglementConfig disentanglement;
  std::size_t threads = 1;
};

struct BenchmarkRow {
  std::string extractor;
  std::string metric;  // silhouette, clustering, disentanglement
  std::vector<double> values;  // one per trial
  double mean = 0.0;
  double std = 0.0;  // population
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;

  const BenchmarkRow& row(const std::string& extractor, const std::string& metric) const;
};

// Trial t uses an eval set and disentanglement draws seeded from (seed, t);
// trials run in parallel.
BenchmarkReport run_benchmark(std::span<const NamedExtractor> extractors, const BenchmarkConfig& cfg);

// CSV: extractor,metric,mean,std,n_trials
void write_benchmark_csv(std::ostream& os, const BenchmarkReport& report);
void print_benchmark_table(std::ostream& os, const BenchmarkReport& report);

}  // namespace lookalike
