#include "lookalike/datasets.hpp"

#include <algorithm>
#include <random>

#include "lookalike/error.hpp"

namespace lookalike {

SynthSpectrogram synth_spectrogram(std::size_t n_time, std::size_t n_freq, std::size_t n_signals,
                                   const EvalRanges& ranges, double f_start, std::uint64_t seed) {
  ranges.validate();
  std::mt19937_64 rng(seed);
  SynthSpectrogram out;
  out.spec = gen_noise(n_time, n_freq, rng(), f_start);
  if (n_signals == 0) return out;
  const double slice = static_cast<double>(n_freq) * out.spec.df / static_cast<double>(n_signals);
  for (std::size_t i = 0; i < n_signals; ++i) {
    const auto f = sample_factors(ranges, rng);
    SignalParams p;
    p.snr = f[kFactorSnr];
    p.drift_rate = f[kFactorDrift];
    p.width = f[kFactorWidth];
    const double lo = f_start + static_cast<double>(i) * slice;
    p.f_center = std::uniform_real_distribution<double>(lo, lo + slice)(rng);
    p.f_center = std::min(p.f_center, std::nextafter(out.spec.band_end(), f_start));
    inject_signal_inplace(out.spec, p);
    out.signals.push_back(p);
  }
  return out;
}

DetectedSnippets snippets_from_detection(const Spectrogram& raw, const std::string& source_id, double threshold,
                                         const BandpassConfig& bandpass) {
  const Spectrogram corrected = bandpass_correct(raw, bandpass);
  const auto scan = detect(corrected, threshold, false);
  DetectedSnippets out;
  out.degenerate = scan.windows_degenerate;
  std::vector<bool> flagged(raw.n_freq / kSnippetCols, false);
  for (const auto& h : scan.hits) flagged[static_cast<std::size_t>(h.start_bin) / kSnippetCols] = true;
  for (std::size_t w = 0; w < flagged.size(); ++w) {
    Snippet s = normalize_snippet(extract_window(raw, w * kSnippetCols, source_id));
    if (s.degenerate) {
      ++out.degenerate;
      continue;
    }
    (flagged[w] ? out.signals : out.noise).push_back(std::move(s));
  }
  return out;
}

std::vector<Snippet> synth_training_set(const TrainingSetConfig& cfg, std::uint64_t seed) {
  if (cfg.n_spectrograms == 0) throw Error(ErrorCode::EmptyDataset, "no spectrograms requested");
  std::mt19937_64 rng(seed);
  std::vector<Snippet> signals, noise;
  for (std::size_t i = 0; i < cfg.n_spectrograms; ++i) {
    const double f_start = cfg.ranges.band_start +
                           std::uniform_real_distribution<double>(
                               0.0, std::max(0.0, cfg.ranges.band_width - static_cast<double>(cfg.n_freq) * kDefaultDf))(rng);
    const auto synth = synth_spectrogram(kSnippetRows, cfg.n_freq, cfg.signals_per_spectrogram, cfg.ranges, f_start, rng());
    auto found = snippets_from_detection(synth.spec, "train" + std::to_string(i), cfg.threshold);
    std::move(found.signals.begin(), found.signals.end(), std::back_inserter(signals));
    std::move(found.noise.begin(), found.noise.end(), std::back_inserter(noise));
  }
  return balance_dataset(signals, noise, rng());
}

}  // namespace lookalike
