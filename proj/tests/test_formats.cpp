#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lookalike/checkpoint.hpp"
#include "lookalike/search_index.hpp"
#include "lookalike/spectrogram.hpp"
#include "test_support.hpp"

using namespace lookalike;
using test_support::code_of;

namespace {

template <typename Writer>
std::string bytes_of(Writer&& w) {
  std::ostringstream os(std::ios::binary);
  w(os);
  return os.str();
}

std::string corrupt_magic(std::string bytes) {
  bytes[1] ^= 0x20;
  return bytes;
}

Index sample_index(bool embedded) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::optional<EmbeddingConfig> ecfg;
  if (embedded) {
    ecfg = EmbeddingConfig{};
    ecfg->band_start = 1.4e9;
    ecfg->band_width = 2.5e6;
    ecfg->weight = 0.75;
  }
  std::vector<FeatureRecord> recs(37);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].feature.resize(5);
    for (auto& v : recs[i].feature) v = nd(rng);
    recs[i].source_id = i % 2 ? "blc_" + std::to_string(i) : "";
    recs[i].start_bin = static_cast<std::int64_t>(i) * 256 - 4;
    recs[i].center_freq = 1.4e9 + 31.7 * i;
    recs[i].embedded = embedded;
  }
  return Index::from_records(recs, ecfg);
}

}  // namespace

TEST_CASE("RSSG round trip is bit-exact", "[formats]") {
  auto spec = gen_noise(16, 700, 3, 1.1e9, 2.5, 17.0);
  spec.data[5] = 1e-30f;
  spec.data[6] = 3.4e38f;
  const auto bytes = bytes_of([&](std::ostream& os) { write_spectrogram(os, spec); });
  std::istringstream is(bytes);
  const auto back = read_spectrogram(is);
  CHECK(back.n_time == spec.n_time);
  CHECK(back.n_freq == spec.n_freq);
  CHECK(back.f_start == spec.f_start);
  CHECK(back.df == spec.df);
  CHECK(back.dt == spec.dt);
  CHECK(std::memcmp(back.data.data(), spec.data.data(), spec.data.size() * sizeof(float)) == 0);
  CHECK(bytes_of([&](std::ostream& os) { write_spectrogram(os, back); }) == bytes);
  CHECK(bytes.rfind("RSSG", 0) == 0);

  std::istringstream bad(corrupt_magic(bytes));
  CHECK(code_of([&] { read_spectrogram(bad); }) == ErrorCode::FormatError);
}

TEST_CASE("RSSM round trip is bit-exact", "[formats]") {
  ModelConfig cfg;
  cfg.latent_dim = 3;
  cfg.conv_filters = {2, 3, 2, 3, 2};
  cfg.dense_sizes = {6, 4};
  cfg.beta = 0.0;
  cfg.learning_rate = 3.3e-4;
  auto params = init_params<float>(cfg, 17);
  params.tensors.at("enc.bn.running_var").data[0] = 0.123f;

  const auto bytes = bytes_of([&](std::ostream& os) { write_checkpoint(os, params); });
  std::istringstream is(bytes);
  const auto back = read_checkpoint(is);
  CHECK(back.config == cfg);
  CHECK(back.config.model_kind() == "autoencoder");
  REQUIRE(back.tensors.size() == params.tensors.size());
  for (const auto& [name, t] : params.tensors.entries()) {
    const auto& u = back.tensors.at(name);
    CHECK(u.shape == t.shape);
    CHECK(std::memcmp(u.data.data(), t.data.data(), t.data.size() * sizeof(float)) == 0);
  }
  CHECK(bytes_of([&](std::ostream& os) { write_checkpoint(os, back); }) == bytes);

  std::istringstream bad(corrupt_magic(bytes));
  CHECK(code_of([&] { read_checkpoint(bad); }) == ErrorCode::FormatError);
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK(code_of([&] { read_checkpoint(truncated); }) == ErrorCode::FormatError);
}

TEST_CASE("RSSI round trip is bit-exact", "[formats]") {
  for (bool embedded : {false, true}) {
    const auto idx = sample_index(embedded);
    const auto bytes = bytes_of([&](std::ostream& os) { idx.write(os); });
    std::istringstream is(bytes);
    const auto back = Index::read(is);
    REQUIRE(back.size() == idx.size());
    CHECK(back.dim() == idx.dim());
    CHECK(back.embedding() == idx.embedding());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      CHECK(std::ranges::equal(back.feature(i), idx.feature(i)));
      CHECK(back.source_id(i) == idx.source_id(i));
      CHECK(back.start_bin(i) == idx.start_bin(i));
      CHECK(back.center_freq(i) == idx.center_freq(i));
    }
    CHECK(bytes_of([&](std::ostream& os) { back.write(os); }) == bytes);

    std::istringstream bad(corrupt_magic(bytes));
    CHECK(code_of([&] { Index::read(bad); }) == ErrorCode::FormatError);
    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK(code_of([&] { Index::read(truncated); }) == ErrorCode::FormatError);
  }
}

TEST_CASE("files on disk", "[formats]") {
  const auto dir = std::filesystem::temp_directory_path() / "lookalike_formats_test";
  std::filesystem::create_directories(dir);
  const auto spec = gen_noise(16, 300, 8);
  save_spectrogram(dir / "a.rssg", spec);
  CHECK(load_spectrogram(dir / "a.rssg").data == spec.data);

  const auto idx = sample_index(true);
  idx.save(dir / "a.rssi");
  CHECK(Index::load(dir / "a.rssi").size() == idx.size());

  CHECK(code_of([&] { load_spectrogram(dir / "missing.rssg"); }) == ErrorCode::IOError);
  CHECK(code_of([&] { load_checkpoint(dir / "a.rssg"); }) == ErrorCode::FormatError);
  CHECK(code_of([&] { Index::load(dir / "a.rssg"); }) == ErrorCode::FormatError);
  std::filesystem::remove_all(dir);
}
