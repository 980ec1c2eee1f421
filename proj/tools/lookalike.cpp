#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lookalike/checkpoint.hpp"
#include "lookalike/datasets.hpp"
#include "lookalike/embedding.hpp"
#include "lookalike/energy_detection.hpp"
#include "lookalike/metrics_eval.hpp"
#include "lookalike/parallel.hpp"
#include "lookalike/search_index.hpp"
#include "lookalike/spectrogram.hpp"
#include "lookalike/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lookalike;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "lo:hi" with lo <= hi.
std::optional<ParamRange> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) return std::nullopt;
  ParamRange r;
  const char* b = text.data();
  const char* e = b + text.size();
  auto first = std::from_chars(b, b + colon, r.lo);
  auto second = std::from_chars(b + colon + 1, e, r.hi);
  if (first.ec != std::errc{} || first.ptr != b + colon || second.ec != std::errc{} || second.ptr != e) {
    return std::nullopt;
  }
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) return std::nullopt;
  return r;
}

const CLI::Validator kRange(
    [](std::string& s) { return parse_range(s) ? std::string{} : "expected LO:HI with LO <= HI, got " + s; }, "LO:HI",
    "range");

struct RangeFlags {
  std::string snr = "20:70";
  std::string drift = "-2:2";
  std::string width = "20:70";
  double band_start = 1.0e9;
  double band_width = 3.0e6;
  double class_band_fraction = 1.0;

  void add(CLI::App* app) {
    app->add_option("--snr", snr, "SNR range")->check(kRange)->capture_default_str();
    app->add_option("--drift", drift, "Drift rate range (Hz/s)")->check(kRange)->capture_default_str();
    app->add_option("--width", width, "Signal width range (Hz)")->check(kRange)->capture_default_str();
    app->add_option("--band-start", band_start, "Band lower edge (Hz)")->capture_default_str();
    app->add_option("--band-width", band_width, "Band width (Hz)")->capture_default_str();
    app->add_option("--class-band-fraction", class_band_fraction, "Sub-band fraction per class")
        ->capture_default_str();
  }

  EvalRanges resolve() const {
    EvalRanges r;
    r.snr = *parse_range(snr);
    r.drift_rate = *parse_range(drift);
    r.width = *parse_range(width);
    r.band_start = band_start;
    r.band_width = band_width;
    r.class_band_fraction = class_band_fraction;
    try {
      r.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return r;
  }
};

struct ModelFlags {
  ModelConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--beta", cfg.beta, "KL weight (0 trains a plain autoencoder)")->capture_default_str();
    app->add_option("--latent-dim", cfg.latent_dim, "Latent dimension")->capture_default_str();
    app->add_option("--filters", cfg.conv_filters, "Conv filters per stage")->delimiter(',')->capture_default_str();
    app->add_option("--dense", cfg.dense_sizes, "Dense layer sizes")->delimiter(',')->capture_default_str();
    app->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size, "Mini-batch size")->capture_default_str();
    app->add_option("--max-epochs", cfg.max_epochs, "Epoch limit")->capture_default_str();
    app->add_option("--patience", cfg.patience, "Early-stopping patience")->capture_default_str();
  }
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IOError, "cannot write " + path.string());
  return os;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IOError, "cannot create " + dir.string() + ": " + ec.message());
}

// Resolved options of a parsed subcommand, replayable as an argument list.
json resolved_options(const CLI::App& app) {
  json options = json::object();
  json argv = json::array({app.get_name()});
  std::vector<std::string> positional;
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty() && opt->get_positional() == false) continue;
    if (opt->get_single_name() == "help") continue;
    const std::string flag = "--" + (opt->get_lnames().empty() ? opt->get_single_name() : opt->get_lnames().front());
    if (opt->get_type_size() == 0) {
      const bool on = opt->count() > 0;
      options[opt->get_single_name()] = on;
      if (on) argv.push_back(flag);
      continue;
    }
    std::vector<std::string> values = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
    if (values.empty()) {
      const auto d = opt->get_default_str();
      if (d.empty()) continue;
      values = {d};
    }
    if (opt->get_positional() && opt->get_lnames().empty()) {
      options[opt->get_single_name()] = values;
      positional.insert(positional.end(), values.begin(), values.end());
      continue;
    }
    std::string joined;
    for (const auto& v : values) joined += (joined.empty() ? "" : ",") + v;
    options[opt->get_single_name()] = joined;
    argv.push_back(flag);
    argv.push_back(joined);
  }
  if (!positional.empty()) {
    argv.push_back("--");
    for (const auto& p : positional) argv.push_back(p);
  }
  return json{{"command", app.get_name()}, {"options", options}, {"argv", argv}};
}

void write_run_json(const fs::path& dir, const json& run) {
  auto os = open_out(dir / "run.json");
  os << run.dump(2) << "\n";
}

std::vector<fs::path> rssg_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".rssg") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw Error(ErrorCode::IOError, "no such file or directory: " + in);
    }
  }
  if (out.empty()) throw Error(ErrorCode::EmptyDataset, "no .rssg inputs");
  return out;
}

bool is_patch(const Spectrogram& s) { return s.n_time == kSnippetRows && s.n_freq == kSnippetCols; }

// Patch files contribute their single window; wider files are scanned and
// contribute flagged (signals) and unflagged (noise) windows.
DetectedSnippets gather_snippets(const std::vector<fs::path>& files, double threshold) {
  DetectedSnippets all;
  for (const auto& f : files) {
    const auto spec = load_spectrogram(f);
    const std::string id = f.stem().string();
    if (is_patch(spec)) {
      auto s = normalize_snippet(extract_window(spec, 0, id));
      if (s.degenerate) {
        ++all.degenerate;
      } else {
        all.signals.push_back(std::move(s));
      }
      continue;
    }
    auto d = snippets_from_detection(spec, id, threshold);
    std::move(d.signals.begin(), d.signals.end(), std::back_inserter(all.signals));
    std::move(d.noise.begin(), d.noise.end(), std::back_inserter(all.noise));
    all.degenerate += d.degenerate;
  }
  return all;
}

void write_pgm(const fs::path& path, const Snippet& s) {
  auto os = open_out(path);
  os << "P5\n" << kSnippetCols << " " << kSnippetRows << "\n255\n";
  for (float v : s.data) {
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  }
}

std::size_t resolve_threads(std::size_t t) { return t == 0 ? default_threads() : t; }

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t classes = 0;
  std::size_t per_class = 0;
  std::size_t spectrograms = 0;
  std::size_t n_freq = 16384;
  std::size_t signals = 32;
  RangeFlags ranges;
};

std::size_t run_synth(const SynthArgs& a) {
  const auto ranges = a.ranges.resolve();
  const fs::path out(a.out);
  make_dir(out);
  auto manifest = open_out(out / "manifest.csv");
  manifest << std::setprecision(17);
  std::size_t files = 0;
  if (a.classes > 0) {
    if (a.spectrograms > 0) throw UsageError("--classes and --spectrograms are exclusive");
    manifest << "file,class_id,snr,drift_rate_hz_s,width_hz,f_center_hz\n";
    for (const auto& cls : build_raw_eval_set(a.classes, a.per_class, ranges, a.seed)) {
      for (std::size_t i = 0; i < cls.patches.size(); ++i) {
        const std::string name = cls.ids[i] + ".rssg";
        save_spectrogram(out / name, cls.patches[i]);
        manifest << name << "," << cls.class_id << "," << cls.params.snr << "," << cls.params.drift_rate << ","
                 << cls.params.width << "," << cls.patches[i].f_start + track_offset(cls.factors[i]) << "\n";
        ++files;
      }
    }
    return files;
  }
  if (a.spectrograms == 0) throw UsageError("one of --classes or --spectrograms is required");
  manifest << "file,signal,snr,drift_rate_hz_s,width_hz,f_center_hz\n";
  std::mt19937_64 rng(a.seed);
  for (std::size_t i = 0; i < a.spectrograms; ++i) {
    const double f_start = ranges.band_start + static_cast<double>(i * a.n_freq) * kDefaultDf;
    const auto synth = synth_spectrogram(kSnippetRows, a.n_freq, a.signals, ranges, f_start, rng());
    const std::string name = "spec_" + std::to_string(i) + ".rssg";
    save_spectrogram(out / name, synth.spec);
    for (std::size_t s = 0; s < synth.signals.size(); ++s) {
      const auto& p = synth.signals[s];
      manifest << name << "," << s << "," << p.snr << "," << p.drift_rate << "," << p.width << "," << p.f_center
               << "\n";
    }
    ++files;
  }
  return files;
}

// ---------------------------------------------------------------- detect

struct DetectArgs {
  std::vector<std::string> inputs;
  std::string out;
  double threshold = kDefaultSThreshold;
  bool invert = false;
  double coarse_width = BandpassConfig{}.coarse_width_hz;
  std::size_t knot_spacing = BandpassConfig{}.knot_spacing;
};

std::size_t run_detect(const DetectArgs& a) {
  const fs::path out(a.out);
  make_dir(out);
  auto csv = open_out(out / "detections.csv");
  const BandpassConfig bp{a.coarse_width, a.knot_spacing};
  std::size_t hits = 0, scanned = 0;
  bool header = true;
  for (const auto& f : rssg_files(a.inputs)) {
    const auto spec = load_spectrogram(f);
    const auto result = detect(bandpass_correct(spec, bp), a.threshold, a.invert);
    write_detections_csv(csv, f.stem().string(), result.hits, header);
    header = false;
    hits += result.hits.size();
    scanned += result.windows_scanned;
  }
  std::cerr << hits << " of " << scanned << " windows " << (a.invert ? "below" : "above") << " threshold "
            << a.threshold << "\n";
  return hits;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::uint64_t seed = 0;
  double threshold = kDefaultSThreshold;
  double val_fraction = 0.1;
  ModelFlags model;
};

struct Split {
  std::vector<Snippet> train;
  std::vector<Snippet> val;
};

Split training_split(const std::vector<std::string>& inputs, double threshold, double val_fraction,
                     std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw UsageError("--val-fraction must be in [0, 1)");
  auto found = gather_snippets(rssg_files(inputs), threshold);
  std::vector<Snippet> all;
  if (!found.noise.empty()) {
    if (found.signals.empty()) throw Error(ErrorCode::EmptyDataset, "no signal windows detected");
    all = balance_dataset(found.signals, found.noise, seed);
  } else {
    all = std::move(found.signals);
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
  }
  if (all.empty()) throw Error(ErrorCode::EmptyDataset, "no training snippets");
  std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(all.size())));
  if (val_fraction > 0.0 && all.size() >= 2) n_val = std::max<std::size_t>(n_val, 1);
  Split s;
  s.val.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  all.resize(all.size() - n_val);
  s.train = std::move(all);
  if (s.val.empty()) s.val = s.train;
  return s;
}

TrainResult run_train(const TrainArgs& a) {
  ModelConfig cfg = a.model.cfg;
  cfg.seed = a.seed;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto split = training_split(a.inputs, a.threshold, a.val_fraction, a.seed);
  const fs::path out(a.out);
  make_dir(out);
  std::cerr << "training " << cfg.model_kind() << " on " << split.train.size() << " snippets ("
            << split.val.size() << " validation)\n";
  TrainOptions opts;
  opts.on_epoch = [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " train " << e.train_total << " (recon " << e.train_recon << ", kl "
              << e.train_kl << ") val " << e.val_total << "\n";
  };
  auto result = train(split.train, split.val, cfg, opts);
  save_checkpoint(out / "model.rssm", result.params);
  auto log = open_out(out / "training_log.csv");
  write_training_log_csv(log, result.log);
  std::cerr << "best epoch " << result.best_epoch << " of " << result.log.size() << "\n";
  return result;
}

// ---------------------------------------------------------------- index

struct IndexArgs {
  std::vector<std::string> inputs;
  std::string model;
  std::string out;
  double threshold = kDefaultSThreshold;
  bool all_windows = false;
  bool embed = false;
  double band_start = 1.0e9;
  double band_width = 3.0e6;
  double embed_weight = 1.0;
  double embed_n = 10000.0;
  std::size_t threads = 0;
};

std::optional<EmbeddingConfig> embedding_from(const IndexArgs& a, std::size_t latent_dim) {
  if (!a.embed) return std::nullopt;
  EmbeddingConfig e;
  e.d = latent_dim;
  e.n = a.embed_n;
  e.band_start = a.band_start;
  e.band_width = a.band_width;
  e.weight = a.embed_weight;
  try {
    e.validate();
  } catch (const Error& err) {
    throw UsageError(err.what());
  }
  return e;
}

Index run_index(const IndexArgs& a) {
  const auto model = load_checkpoint(a.model);
  const auto ecfg = embedding_from(a, model.config.latent_dim);
  std::vector<Snippet> snippets;
  for (const auto& f : rssg_files(a.inputs)) {
    const auto spec = load_spectrogram(f);
    const std::string id = f.stem().string();
    std::vector<Window> windows;
    if (is_patch(spec) || a.all_windows) {
      windows = extract_snippets(spec, kSnippetCols, id);
    } else {
      for (const auto& h : detect(bandpass_correct(spec), a.threshold).hits) {
        windows.push_back(extract_window(spec, static_cast<std::size_t>(h.start_bin), id));
      }
    }
    for (const auto& w : windows) {
      auto s = normalize_snippet(w);
      if (!s.degenerate) snippets.push_back(std::move(s));
    }
  }
  if (snippets.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to index");
  const auto index = build_index(snippets, model, ecfg, resolve_threads(a.threads));
  const fs::path out(a.out);
  make_dir(out);
  index.save(out / "index.rssi");
  save_checkpoint(out / "index.rssm", model);
  std::cerr << "indexed " << index.size() << " snippets (" << index.dropped() << " dropped)"
            << (index.embedded() ? " with frequency embedding" : "") << "\n";
  return index;
}

// ---------------------------------------------------------------- search

struct SearchArgs {
  std::string index;
  std::string model;
  std::string soi;
  std::size_t soi_bin = 0;
  std::optional<double> soi_freq;
  std::size_t k = 10;
  bool exclude_self = false;
  double hist_bin = 1000.0;
  std::vector<std::string> data;
  std::string out;
  std::size_t threads = 0;
};

std::optional<fs::path> find_source(const std::vector<std::string>& dirs, const std::string& id) {
  for (const auto& d : dirs) {
    const fs::path p = fs::path(d) / (id + ".rssg");
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::vector<SearchResult> run_search(const SearchArgs& a) {
  if (a.k == 0) throw UsageError("--k must be at least 1");
  const auto index = Index::load(a.index);
  if (index.embedded() && !a.soi_freq) throw UsageError("index carries frequency embedding; pass --soi-freq");
  const fs::path model_path = a.model.empty() ? fs::path(a.index).replace_extension(".rssm") : fs::path(a.model);
  const auto model = load_checkpoint(model_path);
  const auto spec = load_spectrogram(a.soi);
  const auto soi = normalize_snippet(extract_window(spec, a.soi_bin, fs::path(a.soi).stem().string()));
  if (soi.degenerate) throw Error(ErrorCode::DegenerateSnippet, "signal of interest is constant");

  QueryOptions q;
  q.k = a.k;
  q.exclude_self = a.exclude_self;
  q.threads = resolve_threads(a.threads);
  const auto results = query(index, model, soi, a.soi_freq, q);

  const fs::path out(a.out);
  make_dir(out);
  {
    auto csv = open_out(out / "results.csv");
    write_results_csv(csv, results, index);
    auto hist = open_out(out / "histogram.csv");
    write_histogram_csv(hist, frequency_histogram(results, index, a.hist_bin));
  }
  write_pgm(out / "soi.pgm", soi);
  std::size_t missing = 0;
  for (std::size_t r = 0; r < results.size(); ++r) {
    const std::size_t row = results[r].record;
    const auto src = find_source(a.data, index.source_id(row));
    if (!src) {
      ++missing;
      continue;
    }
    const auto s = normalize_snippet(
        extract_window(load_spectrogram(*src), static_cast<std::size_t>(index.start_bin(row)), index.source_id(row)));
    char name[32];
    std::snprintf(name, sizeof(name), "rank_%03zu.pgm", r + 1);
    write_pgm(out / name, s);
  }
  if (missing > 0 && !a.data.empty()) std::cerr << missing << " result sources not found under --data\n";
  std::cout << "rank score source_id start_bin center_freq_hz\n" << std::setprecision(10);
  for (std::size_t r = 0; r < results.size(); ++r) {
    const auto row = results[r].record;
    std::cout << r + 1 << " " << results[r].score << " " << index.source_id(row) << " " << index.start_bin(row) << " "
              << index.center_freq(row) << "\n";
  }
  return results;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string extractors = "naive,ae,bvae";
  std::string ae_model;
  std::string bvae_model;
  std::size_t trials = 10;
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t votes = 200;
  std::size_t pairs = 16;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 0;
  RangeFlags ranges;
};

NamedExtractor model_extractor(const std::string& name, const std::string& path) {
  if (path.empty()) throw UsageError("extractor " + name + " needs --" + name + "-model");
  auto model = std::make_shared<ModelParams<float>>(load_checkpoint(path));
  return {name, [model](std::span<const Snippet> s) { return encode_snippets(*model, s, 1); }, true};
}

BenchmarkReport run_eval(const EvalArgs& a) {
  std::vector<NamedExtractor> extractors;
  std::stringstream names(a.extractors);
  for (std::string name; std::getline(names, name, ',');) {
    if (name == "naive") {
      extractors.push_back({"naive",
                            [](std::span<const Snippet> s) {
                              std::vector<std::vector<double>> out;
                              out.reserve(s.size());
                              for (const auto& x : s) out.push_back(naive_features(x));
                              return out;
                            },
                            false});
    } else if (name == "ae") {
      extractors.push_back(model_extractor("ae", a.ae_model));
    } else if (name == "bvae") {
      extractors.push_back(model_extractor("bvae", a.bvae_model));
    } else {
      throw UsageError("unknown extractor " + name);
    }
  }
  if (extractors.empty()) throw UsageError("no extractors");
  BenchmarkConfig cfg;
  cfg.n_classes = a.classes;
  cfg.per_class = a.per_class;
  cfg.ranges = a.ranges.resolve();
  cfg.n_trials = a.trials;
  cfg.seed = a.seed;
  cfg.disentanglement.n_votes = a.votes;
  cfg.disentanglement.pairs_per_vote = a.pairs;
  cfg.threads = resolve_threads(a.threads);
  const auto report = run_benchmark(extractors, cfg);
  const fs::path out(a.out);
  make_dir(out);
  auto csv = open_out(out / "benchmark.csv");
  write_benchmark_csv(csv, report);
  print_benchmark_table(std::cout, report);
  return report;
}

// ---------------------------------------------------------------- tune

struct TuneArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t budget = 8;
  std::size_t eval_classes = 5;
  std::size_t eval_per_class = 20;
  double threshold = kDefaultSThreshold;
  double val_fraction = 0.1;
  std::size_t threads = 0;
  ModelFlags model;
  RangeFlags ranges;
};

TuneResult run_tune(const TuneArgs& a) {
  if (a.budget == 0) throw UsageError("--budget must be at least 1");
  const auto split = training_split(a.inputs, a.threshold, a.val_fraction, a.seed);
  const auto eval = flatten(build_eval_set(a.eval_classes, a.eval_per_class, a.ranges.resolve(), a.seed + 1));
  ModelConfig base = a.model.cfg;
  base.seed = a.seed;
  const auto candidates = ParamGrid{}.expand(base);
  const TuneData data{split.train, split.val, eval.snippets, eval.labels};
  const auto result = tune(candidates, a.budget, data, a.seed, resolve_threads(a.threads));
  const fs::path out(a.out);
  make_dir(out);
  {
    auto os = open_out(out / "best_config.json");
    os << result.best.to_json() << "\n";
    auto csv = open_out(out / "tune_trials.csv");
    csv << "trial,latent_dim,filters,dense,learning_rate,score\n" << std::setprecision(10);
    for (std::size_t i = 0; i < result.trials.size(); ++i) {
      const auto& c = result.trials[i].config;
      auto join = [](const std::vector<std::size_t>& v) {
        std::string s;
        for (auto x : v) s += (s.empty() ? "" : ";") + std::to_string(x);
        return s;
      };
      csv << i << "," << c.latent_dim << "," << join(c.conv_filters) << "," << join(c.dense_sizes) << ","
          << c.learning_rate << "," << result.trials[i].score << "\n";
    }
  }
  std::cout << "best: " << result.best.to_json() << "\n";
  return result;
}

// ---------------------------------------------------------------- pipeline

struct PipelineArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t spectrograms = 4;
  std::size_t n_freq = 8192;
  std::size_t signals = 16;
  std::size_t k = 10;
  bool embed = false;
  std::size_t threads = 0;
  ModelFlags model;
  RangeFlags ranges;
};

void run_pipeline(const PipelineArgs& a) {
  const fs::path out(a.out);
  const std::string data = (out / "data").string();

  SynthArgs s;
  s.out = data;
  s.seed = a.seed;
  s.spectrograms = a.spectrograms;
  s.n_freq = a.n_freq;
  s.signals = a.signals;
  s.ranges = a.ranges;
  run_synth(s);

  DetectArgs d;
  d.inputs = {data};
  d.out = (out / "detect").string();
  run_detect(d);

  TrainArgs t;
  t.inputs = {data};
  t.out = (out / "train").string();
  t.seed = a.seed;
  t.model = a.model;
  run_train(t);

  IndexArgs ix;
  ix.inputs = {data};
  ix.model = (out / "train" / "model.rssm").string();
  ix.out = (out / "index").string();
  ix.embed = a.embed;
  ix.band_start = a.ranges.band_start;
  ix.band_width = a.ranges.band_width;
  ix.threads = a.threads;
  const auto index = run_index(ix);

  SearchArgs q;
  q.index = (out / "index" / "index.rssi").string();
  q.soi = (fs::path(data) / (index.source_id(0) + ".rssg")).string();
  q.soi_bin = static_cast<std::size_t>(index.start_bin(0));
  if (a.embed) q.soi_freq = index.center_freq(0);
  q.k = a.k;
  q.data = {data};
  q.out = (out / "search").string();
  q.threads = a.threads;
  run_search(q);
}

// ---------------------------------------------------------------- main

int run(int argc, const char* const* argv);

int run_replay(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IOError, "cannot read " + path);
  json run_cfg;
  try {
    run_cfg = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path + ": " + e.what());
  }
  std::vector<std::string> args{"lookalike"};
  for (const auto& v : run_cfg.at("argv")) args.push_back(v.get<std::string>());
  std::vector<const char*> ptrs;
  for (const auto& s : args) ptrs.push_back(s.c_str());
  return run(static_cast<int>(ptrs.size()), ptrs.data());
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Reverse search for lookalike signals in radio spectrograms"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SynthArgs synth_a;
  auto* synth = app.add_subcommand("synth", "Write synthetic spectrograms and a ground-truth manifest");
  synth->add_option("--out", synth_a.out, "Output directory")->required();
  synth->add_option("--seed", synth_a.seed, "Random seed")->required();
  synth->add_option("--classes", synth_a.classes, "Labeled classes of 16x256 patches");
  synth->add_option("--per-class", synth_a.per_class, "Patches per class")->capture_default_str();
  synth->add_option("--spectrograms", synth_a.spectrograms, "Wide spectrograms with injected tracks");
  synth->add_option("--n-freq", synth_a.n_freq, "Channels per wide spectrogram")->capture_default_str();
  synth->add_option("--signals", synth_a.signals, "Tracks per wide spectrogram")->capture_default_str();
  synth_a.ranges.add(synth);

  DetectArgs detect_a;
  auto* det = app.add_subcommand("detect", "Bandpass-correct and flag non-Gaussian windows");
  det->add_option("inputs", detect_a.inputs, "RSSG files or directories")->required();
  det->add_option("--out", detect_a.out, "Output directory")->required();
  det->add_option("--threshold", detect_a.threshold, "Normality statistic threshold")->capture_default_str();
  det->add_flag("--invert", detect_a.invert, "Report windows at or below the threshold");
  det->add_option("--coarse-width", detect_a.coarse_width, "Coarse channel width (Hz)")->capture_default_str();
  det->add_option("--knot-spacing", detect_a.knot_spacing, "Bins between spline knots")->capture_default_str();

  TrainArgs train_a;
  auto* tr = app.add_subcommand("train", "Train a beta-VAE (or plain autoencoder with --beta 0)");
  tr->add_option("inputs", train_a.inputs, "RSSG files or directories")->required();
  tr->add_option("--out", train_a.out, "Output directory")->required();
  tr->add_option("--seed", train_a.seed, "Random seed")->required();
  tr->add_option("--threshold", train_a.threshold, "Detection threshold for wide inputs")->capture_default_str();
  tr->add_option("--val-fraction", train_a.val_fraction, "Held-out fraction")->capture_default_str();
  train_a.model.add(tr);

  IndexArgs index_a;
  auto* ix = app.add_subcommand("index", "Encode snippets into a searchable index");
  ix->add_option("inputs", index_a.inputs, "RSSG files or directories")->required();
  ix->add_option("--model", index_a.model, "RSSM checkpoint")->required();
  ix->add_option("--out", index_a.out, "Output directory")->required();
  ix->add_option("--threshold", index_a.threshold, "Detection threshold for wide inputs")->capture_default_str();
  ix->add_flag("--all-windows", index_a.all_windows, "Index every window of wide inputs");
  ix->add_flag("--embed", index_a.embed, "Add the sinusoidal frequency embedding");
  ix->add_option("--band-start", index_a.band_start, "Embedding band lower edge (Hz)")->capture_default_str();
  ix->add_option("--band-width", index_a.band_width, "Embedding band width (Hz)")->capture_default_str();
  ix->add_option("--embed-weight", index_a.embed_weight, "Embedding weight")->capture_default_str();
  ix->add_option("--embed-n", index_a.embed_n, "Embedding wavelength base")->capture_default_str();
  ix->add_option("--threads", index_a.threads, "Worker threads (0 = all cores)")->capture_default_str();

  SearchArgs search_a;
  auto* se = app.add_subcommand("search", "Top-k lookalikes of a signal of interest");
  se->add_option("--index", search_a.index, "RSSI index")->required();
  se->add_option("--model", search_a.model, "RSSM checkpoint (default: the index path with .rssm)");
  se->add_option("--soi", search_a.soi, "RSSG file holding the signal of interest")->required();
  se->add_option("--soi-bin", search_a.soi_bin, "First channel of the window")->capture_default_str();
  se->add_option("--soi-freq", search_a.soi_freq, "Query frequency (Hz), required for embedded indexes");
  se->add_option("--k", search_a.k, "Results")->capture_default_str();
  se->add_flag("--exclude-self", search_a.exclude_self, "Drop the record matching the query's source and bin");
  se->add_option("--hist-bin", search_a.hist_bin, "Histogram bin width (Hz)")->capture_default_str();
  se->add_option("--data", search_a.data, "Directories holding the indexed RSSG files, for PGM dumps");
  se->add_option("--out", search_a.out, "Output directory")->required();
  se->add_option("--threads", search_a.threads, "Worker threads (0 = all cores)")->capture_default_str();

  EvalArgs eval_a;
  auto* ev = app.add_subcommand("eval", "Benchmark extractors on synthetic labeled classes");
  ev->add_option("--extractors", eval_a.extractors, "Comma-separated: naive, ae, bvae")->capture_default_str();
  ev->add_option("--ae-model", eval_a.ae_model, "Plain autoencoder checkpoint");
  ev->add_option("--bvae-model", eval_a.bvae_model, "beta-VAE checkpoint");
  ev->add_option("--trials", eval_a.trials, "Trials")->capture_default_str();
  ev->add_option("--classes", eval_a.classes, "Classes per trial")->capture_default_str();
  ev->add_option("--per-class", eval_a.per_class, "Snippets per class")->capture_default_str();
  ev->add_option("--votes", eval_a.votes, "Disentanglement votes")->capture_default_str();
  ev->add_option("--pairs", eval_a.pairs, "Pairs per vote")->capture_default_str();
  ev->add_option("--seed", eval_a.seed, "Random seed")->required();
  ev->add_option("--out", eval_a.out, "Output directory")->required();
  ev->add_option("--threads", eval_a.threads, "Worker threads (0 = all cores)")->capture_default_str();
  eval_a.ranges.add(ev);

  TuneArgs tune_a;
  auto* tu = app.add_subcommand("tune", "Random search over the architecture grid");
  tu->add_option("inputs", tune_a.inputs, "RSSG files or directories")->required();
  tu->add_option("--out", tune_a.out, "Output directory")->required();
  tu->add_option("--seed", tune_a.seed, "Random seed")->required();
  tu->add_option("--budget", tune_a.budget, "Configurations to train")->capture_default_str();
  tu->add_option("--eval-classes", tune_a.eval_classes, "Classes in the scoring set")->capture_default_str();
  tu->add_option("--eval-per-class", tune_a.eval_per_class, "Snippets per scoring class")->capture_default_str();
  tu->add_option("--threshold", tune_a.threshold, "Detection threshold for wide inputs")->capture_default_str();
  tu->add_option("--val-fraction", tune_a.val_fraction, "Held-out fraction")->capture_default_str();
  tu->add_option("--threads", tune_a.threads, "Worker threads (0 = all cores)")->capture_default_str();
  tune_a.model.cfg.max_epochs = 5;
  tune_a.model.add(tu);
  tune_a.ranges.add(tu);

  PipelineArgs pipe_a;
  auto* pi = app.add_subcommand("pipeline", "synth, detect, train, index and search in one run");
  pi->add_option("--out", pipe_a.out, "Output directory")->required();
  pi->add_option("--seed", pipe_a.seed, "Random seed")->required();
  pi->add_option("--spectrograms", pipe_a.spectrograms, "Wide spectrograms")->capture_default_str();
  pi->add_option("--n-freq", pipe_a.n_freq, "Channels per spectrogram")->capture_default_str();
  pi->add_option("--signals", pipe_a.signals, "Tracks per spectrogram")->capture_default_str();
  pi->add_option("--k", pipe_a.k, "Results")->capture_default_str();
  pi->add_flag("--embed", pipe_a.embed, "Add the sinusoidal frequency embedding");
  pi->add_option("--threads", pipe_a.threads, "Worker threads (0 = all cores)")->capture_default_str();
  pipe_a.model.cfg.max_epochs = 5;
  pipe_a.model.add(pi);
  pipe_a.ranges.add(pi);

  std::string replay_path;
  auto* re = app.add_subcommand("replay", "Re-run a command from its run.json");
  re->add_option("run_json", replay_path, "run.json written by an earlier command")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  auto record = [](CLI::App* sub, const std::string& out) { write_run_json(out, resolved_options(*sub)); };

  if (synth->parsed()) {
    const auto n = run_synth(synth_a);
    record(synth, synth_a.out);
    std::cerr << "wrote " << n << " spectrogram files\n";
  } else if (det->parsed()) {
    run_detect(detect_a);
    record(det, detect_a.out);
  } else if (tr->parsed()) {
    run_train(train_a);
    record(tr, train_a.out);
  } else if (ix->parsed()) {
    run_index(index_a);
    record(ix, index_a.out);
  } else if (se->parsed()) {
    run_search(search_a);
    record(se, search_a.out);
  } else if (ev->parsed()) {
    run_eval(eval_a);
    record(ev, eval_a.out);
  } else if (tu->parsed()) {
    run_tune(tune_a);
    record(tu, tune_a.out);
  } else if (pi->parsed()) {
    run_pipeline(pipe_a);
    record(pi, pipe_a.out);
  } else if (re->parsed()) {
    return run_replay(replay_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::MissingFrequency ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
