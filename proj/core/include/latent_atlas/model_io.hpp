#pragma once

#include <filesystem>

#include "latent_atlas/checkpoint.hpp"
#include "latent_atlas/generator.hpp"

namespace latent_atlas {

template <typename T>
void save_generator(const std::filesystem::path& dir, const Generator<T>& g,
                    nlohmann::json extra_meta = nlohmann::json::object()) {
  Checkpoint ck;
  ck.format = kGeneratorCheckpointFormat;
  ck.meta = std::move(extra_meta);
  ck.meta["generator_config"] = g.config();
  g.visit_parameters([&](const std::string& name, const Tensor<T>& t) {
    ck.add(name, t.template cast<float>());
  });
  save_checkpoint(dir, ck);
}

template <typename T>
Generator<T> load_generator(const std::filesystem::path& dir, nlohmann::json* meta_out = nullptr) {
  Checkpoint ck = load_checkpoint(dir, kGeneratorCheckpointFormat);
  GeneratorConfig cfg = ck.meta.at("generator_config").get<GeneratorConfig>();
  Generator<T> g = Generator<T>::random_init(cfg, 0);
  g.visit_parameters([&](const std::string& name, Tensor<T>& t) {
    const Tensor<float>& src = ck.tensor(name);
    if (src.shape() != t.shape()) {
      throw IoError("generator checkpoint tensor " + name + " has shape " +
                    Tensor<float>::shape_string(src.shape()) + ", expected " +
                    Tensor<float>::shape_string(t.shape()));
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(src[i]);
  });
  g.invalidate_mean_w();
  if (meta_out) *meta_out = ck.meta;
  return g;
}

}  // namespace latent_atlas
