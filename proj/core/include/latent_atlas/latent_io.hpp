#pragma once

#include <filesystem>

#include "latent_atlas/spaces.hpp"

namespace latent_atlas {

/// ".lat" file: an 8-byte magic ("LATCODE\n"), a little-endian u64 manifest
/// length, the JSON manifest (space tag, d, N, M, shapes), then all code
/// tensors as one little-endian float32 blob (entries in order, base last).
void save_latent(const std::filesystem::path& path, const LatentCode<float>& code,
                 const CodeLayout& layout);

/// Loads a .lat file. When layout_out is non-null it receives the layout the
/// code was saved under so callers can check generator compatibility.
LatentCode<float> load_latent(const std::filesystem::path& path,
                              CodeLayout* layout_out = nullptr);

}  // namespace latent_atlas
