#pragma once

#include <filesystem>
#include <iosfwd>

#include "lookalike/bvae.hpp"

namespace lookalike {

// RSSM checkpoint: magic, u16 version, u32 tensor count, then per tensor
// (u16 name length, name, u8 rank, u64 dims, float32 data), then the model
// config as a u32 length-prefixed UTF-8 JSON blob.
void write_checkpoint(std::ostream& os, const ModelParams<float>& params);
ModelParams<float> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace lookalike
