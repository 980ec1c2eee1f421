#include "lookalike/spectrogram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "lookalike/binary_io.hpp"
#include "lookalike/error.hpp"

namespace lookalike {

namespace {

constexpr char kSpectrogramMagic[5] = "RSSG";
constexpr std::uint16_t kSpectrogramVersion = 1;

// FWHM = 2 sqrt(2 ln 2) sigma
const double kFwhmToSigma = 1.0 / (2.0 * std::sqrt(2.0 * std::log(2.0)));

}  // namespace

void Spectrogram::validate() const {
  if (n_time < 1 || n_freq < 1) throw Error(ErrorCode::InvalidShape, "spectrogram needs n_time, n_freq >= 1");
  if (data.size() != n_time * n_freq) throw Error(ErrorCode::InvalidShape, "data size does not match n_time * n_freq");
  if (!(df > 0.0) || !(dt > 0.0)) throw Error(ErrorCode::InvalidConfig, "df and dt must be positive");
  for (float v : data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NumericalError, "non-finite power value");
  }
}

Spectrogram gen_noise(std::size_t n_time, std::size_t n_freq, std::uint64_t seed, double f_start, double df,
                      double dt) {
  if (n_time == 0 || n_freq == 0) throw Error(ErrorCode::InvalidShape, "gen_noise needs non-zero dimensions");
  Spectrogram spec;
  spec.n_time = n_time;
  spec.n_freq = n_freq;
  spec.f_start = f_start;
  spec.df = df;
  spec.dt = dt;
  spec.data.resize(n_time * n_freq);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(kNoiseMean, kNoiseStd);
  for (auto& v : spec.data) v = static_cast<float>(normal(rng));
  return spec;
}

void inject_signal_inplace(Spectrogram& spec, const SignalParams& p) {
  if (!(p.width > 0.0) || !(p.snr > 0.0)) throw Error(ErrorCode::InvalidConfig, "signal width and snr must be positive");
  if (!(p.f_center >= spec.f_start && p.f_center < spec.band_end())) {
    throw Error(ErrorCode::OutOfBand, "f_center outside the spectrogram band");
  }
  const double sigma_bins = p.width * kFwhmToSigma / spec.df;
  const double amplitude = p.snr * kNoiseStd;
  const double reach = 6.0 * sigma_bins + 1.0;
  for (std::size_t t = 0; t < spec.n_time; ++t) {
    const double fc = p.f_center + p.drift_rate * static_cast<double>(t) * spec.dt;
    // bin j is centered at f_start + (j + 0.5) df
    const double center_bin = (fc - spec.f_start) / spec.df - 0.5;
    const double lo = std::max(0.0, std::ceil(center_bin - reach));
    const double hi = std::min(static_cast<double>(spec.n_freq) - 1.0, std::floor(center_bin + reach));
    if (hi < lo) continue;
    for (auto j = static_cast<std::size_t>(lo); j <= static_cast<std::size_t>(hi); ++j) {
      const double u = (static_cast<double>(j) - center_bin) / sigma_bins;
      spec.at(t, j) += static_cast<float>(amplitude * std::exp(-0.5 * u * u));
    }
  }
}

Spectrogram inject_signal(const Spectrogram& spec, const SignalParams& p) {
  Spectrogram out = spec;
  inject_signal_inplace(out, p);
  return out;
}

Window extract_window(const Spectrogram& spec, std::size_t start_bin, const std::string& source_id) {
  if (spec.n_time < kSnippetRows || start_bin + kSnippetCols > spec.n_freq) {
    throw Error(ErrorCode::InvalidShape, "window does not fit inside the spectrogram");
  }
  Window w;
  w.data.resize(kSnippetSize);
  for (std::size_t t = 0; t < kSnippetRows; ++t) {
    std::copy_n(spec.data.begin() + static_cast<std::ptrdiff_t>(t * spec.n_freq + start_bin), kSnippetCols,
                w.data.begin() + static_cast<std::ptrdiff_t>(t * kSnippetCols));
  }
  w.source_id = source_id;
  w.start_bin = static_cast<std::int64_t>(start_bin);
  w.center_freq = spec.bin_freq(static_cast<double>(start_bin + kSnippetCols / 2));
  return w;
}

std::vector<Window> extract_snippets(const Spectrogram& spec, std::size_t stride_bins, const std::string& source_id) {
  if (stride_bins == 0) throw Error(ErrorCode::InvalidConfig, "stride must be >= 1");
  if (spec.n_freq < kSnippetCols || spec.n_time < kSnippetRows) {
    throw Error(ErrorCode::InvalidShape, "spectrogram smaller than one 16x256 window");
  }
  std::vector<Window> out;
  out.reserve((spec.n_freq - kSnippetCols) / stride_bins + 1);
  for (std::size_t start = 0; start + kSnippetCols <= spec.n_freq; start += stride_bins) {
    out.push_back(extract_window(spec, start, source_id));
  }
  return out;
}

Snippet normalize_snippet(std::span<const float> raw) {
  if (raw.size() != kSnippetSize) throw Error(ErrorCode::InvalidShape, "snippet must be 16x256");
  std::vector<double> y(raw.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double x = raw[i];
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw Error(ErrorCode::NumericalError, "normalize_snippet needs finite positive values");
    }
    y[i] = std::log(x);
    lo = std::min(lo, y[i]);
    hi = std::max(hi, y[i]);
  }
  Snippet s;
  s.data.assign(raw.size(), 0.0f);
  const double range = hi - lo;
  if (!(range > 0.0)) {
    s.degenerate = true;
    return s;
  }
  for (std::size_t i = 0; i < y.size(); ++i) s.data[i] = static_cast<float>((y[i] - lo) / range);
  return s;
}

Snippet normalize_snippet(const Window& raw) {
  Snippet s = normalize_snippet(std::span<const float>(raw.data));
  s.source_id = raw.source_id;
  s.start_bin = raw.start_bin;
  s.center_freq = raw.center_freq;
  return s;
}

void write_spectrogram(std::ostream& os, const Spectrogram& spec) {
  spec.validate();
  binio::write_magic(os, kSpectrogramMagic);
  binio::write_le<std::uint16_t>(os, kSpectrogramVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.n_time));
  binio::write_le<std::uint64_t>(os, spec.n_freq);
  binio::write_le<double>(os, spec.f_start);
  binio::write_le<double>(os, spec.df);
  binio::write_le<double>(os, spec.dt);
  for (float v : spec.data) binio::write_le<float>(os, v);
  if (!os) throw Error(ErrorCode::IOError, "failed writing spectrogram");
}

Spectrogram read_spectrogram(std::istream& is) {
  binio::expect_magic(is, kSpectrogramMagic);
  const auto version = binio::read_le<std::uint16_t>(is);
  if (version != kSpectrogramVersion) throw Error(ErrorCode::FormatError, "unsupported RSSG version");
  Spectrogram spec;
  spec.n_time = binio::read_le<std::uint32_t>(is);
  spec.n_freq = binio::read_le<std::uint64_t>(is);
  spec.f_start = binio::read_le<double>(is);
  spec.df = binio::read_le<double>(is);
  spec.dt = binio::read_le<double>(is);
  if (spec.n_time == 0 || spec.n_freq == 0 || spec.n_freq > (std::uint64_t{1} << 34) / spec.n_time) {
    throw Error(ErrorCode::FormatError, "implausible RSSG dimensions");
  }
  spec.data.resize(spec.n_time * spec.n_freq);
  for (auto& v : spec.data) v = binio::read_le<float>(is);
  spec.validate();
  return spec;
}

void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IOError, "cannot open " + path.string() + " for writing");
  write_spectrogram(os, spec);
}

Spectrogram load_spectrogram(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IOError, "cannot open " + path.string());
  try {
    return read_spectrogram(is);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace lookalike
