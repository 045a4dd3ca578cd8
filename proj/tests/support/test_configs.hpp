#pragma once

#include "latent_atlas/generator.hpp"

namespace test_support {

/// Smallest config exercising every structural feature (two blocks, an
/// upsample, a hybrid split on an odd layer). Used for double-precision
/// gradient oracles.
inline latent_atlas::GeneratorConfig micro_config() {
  latent_atlas::GeneratorConfig cfg;
  cfg.latent_dim = 8;
  cfg.mapping_depth = 2;
  cfg.base_resolution = 4;
  cfg.output_resolution = 8;
  cfg.split_layer = 3;
  cfg.channels = {6, 4};
  return cfg;
}

/// Mid-size config for behavioral unit tests (16x16, untrained weights).
inline latent_atlas::GeneratorConfig small_config() {
  latent_atlas::GeneratorConfig cfg;
  cfg.latent_dim = 16;
  cfg.mapping_depth = 3;
  cfg.base_resolution = 4;
  cfg.output_resolution = 16;
  cfg.split_layer = 3;
  cfg.channels = {16, 12, 8};
  return cfg;
}

/// Default production architecture.
inline latent_atlas::GeneratorConfig desk_config() {
  return latent_atlas::GeneratorConfig{};
}

}  // namespace test_support
