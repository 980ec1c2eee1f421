#include "lookalike/checkpoint.hpp"

#include <fstream>

#include "lookalike/binary_io.hpp"

namespace lookalike {

namespace {
constexpr char kCheckpointMagic[5] = "RSSM";
constexpr std::uint16_t kCheckpointVersion = 1;
}  // namespace

void write_checkpoint(std::ostream& os, const ModelParams<float>& params) {
  validate_params(params);
  binio::write_magic(os, kCheckpointMagic);
  binio::write_le<std::uint16_t>(os, kCheckpointVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, t] : params.tensors.entries()) {
    binio::write_string(os, name, 2);
    binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) binio::write_le<std::uint64_t>(os, d);
    for (float v : t.data) binio::write_le<float>(os, v);
  }
  binio::write_string(os, params.config.to_json(), 4);
  if (!os) throw Error(ErrorCode::IOError, "failed writing checkpoint");
}

ModelParams<float> read_checkpoint(std::istream& is) {
  binio::expect_magic(is, kCheckpointMagic);
  if (binio::read_le<std::uint16_t>(is) != kCheckpointVersion) {
    throw Error(ErrorCode::FormatError, "unsupported RSSM version");
  }
  const auto count = binio::read_le<std::uint32_t>(is);
  if (count > 4096) throw Error(ErrorCode::FormatError, "implausible tensor count");
  ModelParams<float> p;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = binio::read_string(is, 2);
    const auto rank = binio::read_le<std::uint8_t>(is);
    std::vector<std::size_t> shape(rank);
    std::uint64_t elements = 1;
    for (auto& d : shape) {
      d = binio::read_le<std::uint64_t>(is);
      elements *= d;
      if (elements > (std::uint64_t{1} << 32)) throw Error(ErrorCode::FormatError, "implausible tensor size");
    }
    auto& t = p.tensors.add(std::move(name), shape);
    for (auto& v : t.data) v = binio::read_le<float>(is);
  }
  p.config = ModelConfig::from_json(binio::read_string(is, 4));
  validate_params(p);
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IOError, "cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IOError, "cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace lookalike
