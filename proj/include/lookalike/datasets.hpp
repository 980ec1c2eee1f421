#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lookalike/energy_detection.hpp"
#include "lookalike/metrics_eval.hpp"
#include "lookalike/spectrogram.hpp"

namespace lookalike {

struct SynthSpectrogram {
  Spectrogram spec;
  std::vector<SignalParams> signals;  // ground truth, injection order
};

// Noise plus n_signals tracks with parameters drawn from ranges. Each track
// starts in its own equal slice of the band so tracks never share a window.
SynthSpectrogram synth_spectrogram(std::size_t n_time, std::size_t n_freq, std::size_t n_signals,
                                   const EvalRanges& ranges, double f_start, std::uint64_t seed);

struct DetectedSnippets {
  std::vector<Snippet> signals;
  std::vector<Snippet> noise;
  std::size_t degenerate = 0;  // windows skipped by detection or normalization
};

// Bandpass-corrects, scans, and normalizes the raw windows of both the
// flagged and the unflagged regions.
DetectedSnippets snippets_from_detection(const Spectrogram& raw, const std::string& source_id, double threshold,
                                         const BandpassConfig& bandpass = {});

struct TrainingSetConfig {
  std::size_t n_spectrograms = 8;
  std::size_t n_freq = 16384;
  std::size_t signals_per_spectrogram = 32;
  EvalRanges ranges;
  double threshold = kDefaultSThreshold;
};

// Synthesizes spectrograms, runs detection, and balances signal and noise
// windows.
std::vector<Snippet> synth_training_set(const TrainingSetConfig& cfg, std::uint64_t seed);

}  // namespace lookalike
