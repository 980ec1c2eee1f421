#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lookalike/spectrogram.hpp"

namespace lookalike {

// Threshold on the omnibus normality statistic used to flag windows.
inline constexpr double kDefaultSThreshold = 512.0;

struct BandpassConfig {
  double coarse_width_hz = 3.0e6;  // ~3 MHz coarse channels
  std::size_t knot_spacing = 64;   // bins between spline knots
};

// Collapses along time, fits a least-squares cubic B-spline per coarse
// channel to the mean profile and subtracts the fit from every row.
Spectrogram bandpass_correct(const Spectrogram& spec, const BandpassConfig& cfg = {});

// Components of the D'Agostino-Pearson omnibus test.
struct NormalityStatistic {
  double z_skew = 0.0;
  double z_kurt = 0.0;
  double k2 = 0.0;  // z_skew^2 + z_kurt^2
};

// Computed over every sample of the window; throws DegenerateWindow when the
// window has fewer than 8 samples or zero variance.
NormalityStatistic normality_test(std::span<const float> samples);
NormalityStatistic normality_test(std::span<const double> samples);

// S-score of a 16x256 window (the K^2 statistic).
double window_statistic(std::span<const float> window);

struct DetectionHit {
  std::int64_t start_bin = 0;
  double center_freq = 0.0;
  double s_score = 0.0;
  bool is_signal = false;
};

struct DetectionResult {
  std::vector<DetectionHit> hits;  // sorted by start_bin
  std::size_t windows_scanned = 0;
  std::size_t windows_degenerate = 0;
};

// Scans non-overlapping 256-bin windows over the first 16 rows. A window is a
// hit when s_score > threshold, or s_score <= threshold with `invert`.
DetectionResult detect(const Spectrogram& corrected, double threshold = kDefaultSThreshold, bool invert = false);

// Equal-count shuffled mix of signal and noise snippets; the larger list is
// down-sampled uniformly.
std::vector<Snippet> balance_dataset(std::span<const Snippet> signals, std::span<const Snippet> noise,
                                     std::uint64_t seed);

// Empirical `quantile` of the window statistic over pure-noise windows.
double calibrate_threshold(std::size_t n_trials, double quantile, std::uint64_t seed);

// CSV: source_id,start_bin,center_freq_hz,s_score,is_signal
void write_detections_csv(std::ostream& os, const std::string& source_id, std::span<const DetectionHit> hits,
                          bool header = true);

}  // namespace lookalike
