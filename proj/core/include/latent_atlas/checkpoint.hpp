#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latent_atlas/tensor.hpp"

namespace latent_atlas {

inline constexpr const char* kGeneratorCheckpointFormat = "latent-atlas/ckpt-v1";
inline constexpr const char* kEncoderCheckpointFormat = "latent-atlas/enc-v1";
inline constexpr const char* kWhitenerCheckpointFormat = "latent-atlas/pnw-v1";

/// A named-tensor bundle stored as a directory: manifest.json carries the
/// format tag, free-form meta and per-tensor name/shape/offset entries;
/// params.bin holds every tensor back to back as little-endian float32.
struct Checkpoint {
  std::string format;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  void add(std::string name, Tensor<float> t) {
    tensors.emplace_back(std::move(name), std::move(t));
  }
  bool has(const std::string& name) const;

  /// Throws IoError when the checkpoint lacks the tensor.
  const Tensor<float>& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);

/// Loads a checkpoint directory, verifying the format tag when
/// expected_format is non-empty.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const std::string& expected_format);

}  // namespace latent_atlas
