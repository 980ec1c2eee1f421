#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lookalike {

// Shape of every model input window: 16 time rows by 256 frequency bins.
inline constexpr std::size_t kSnippetRows = 16;
inline constexpr std::size_t kSnippetCols = 256;
inline constexpr std::size_t kSnippetSize = kSnippetRows * kSnippetCols;

// Defaults of the high-resolution filterbank product.
inline constexpr double kDefaultDf = 2.79;   // Hz per bin
inline constexpr double kDefaultDt = 18.25;  // s per row

// Background produced by gen_noise; injected amplitudes are quoted in units
// of kNoiseStd.
inline constexpr double kNoiseMean = 10.0;
inline constexpr double kNoiseStd = 1.0;

// Time x frequency power matrix, row-major (time-major).
struct Spectrogram {
  std::size_t n_time = 0;
  std::size_t n_freq = 0;
  double f_start = 0.0;  // Hz, lower edge of bin 0
  double df = kDefaultDf;
  double dt = kDefaultDt;
  std::vector<float> data;

  float at(std::size_t t, std::size_t f) const { return data[t * n_freq + f]; }
  float& at(std::size_t t, std::size_t f) { return data[t * n_freq + f]; }
  double bin_freq(double bin) const { return f_start + bin * df; }
  double band_end() const { return f_start + static_cast<double>(n_freq) * df; }

  // Throws InvalidShape / InvalidConfig / NumericalError on a broken invariant.
  void validate() const;
};

// Raw 16x256 window cut from a spectrogram.
struct Window {
  std::vector<float> data;  // kSnippetSize, row-major
  std::string source_id;
  std::int64_t start_bin = 0;
  double center_freq = 0.0;
};

// Normalized model input.
struct Snippet {
  std::vector<float> data;  // kSnippetSize, values in [0, 1]
  std::string source_id;
  std::int64_t start_bin = 0;
  double center_freq = 0.0;
  bool degenerate = false;  // constant input mapped to all zeros

  float at(std::size_t t, std::size_t f) const { return data[t * kSnippetCols + f]; }
};

struct SignalParams {
  double snr = 50.0;        // peak amplitude over kNoiseStd
  double drift_rate = 0.0;  // Hz/s
  double width = 30.0;      // Hz, FWHM of the Gaussian profile
  double f_center = 0.0;    // Hz at the first time row
};

Spectrogram gen_noise(std::size_t n_time, std::size_t n_freq, std::uint64_t seed,
                      double f_start = 0.0, double df = kDefaultDf, double dt = kDefaultDt);

// Adds a linearly drifting narrowband track and returns a new spectrogram.
// The track is clipped where it leaves the band.
Spectrogram inject_signal(const Spectrogram& spec, const SignalParams& p);

// In-place variant used by the synthesizers.
void inject_signal_inplace(Spectrogram& spec, const SignalParams& p);

std::vector<Window> extract_snippets(const Spectrogram& spec, std::size_t stride_bins,
                                     const std::string& source_id = {});

// Cuts the single window starting at start_bin (first 16 rows).
Window extract_window(const Spectrogram& spec, std::size_t start_bin,
                      const std::string& source_id = {});

// Per-snippet log min-max normalization into [0, 1]. Constant input yields
// an all-zero snippet with `degenerate` set.
Snippet normalize_snippet(std::span<const float> raw);
Snippet normalize_snippet(const Window& raw);

// RSSG container.
void write_spectrogram(std::ostream& os, const Spectrogram& spec);
Spectrogram read_spectrogram(std::istream& is);
void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram load_spectrogram(const std::filesystem::path& path);

}  // namespace lookalike
