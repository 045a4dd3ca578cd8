#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latent_atlas/generator.hpp"
#include "latent_atlas/spaces.hpp"

namespace latent_atlas {

/// Which code flavor a direction applies to: Z directions edit codes that
/// live on the sphere, W directions edit mapped codes.
enum class DirectionSpace { kZ, kW };

inline const char* direction_space_name(DirectionSpace s) {
  return s == DirectionSpace::kZ ? "z" : "w";
}

inline DirectionSpace parse_direction_space(const std::string& name) {
  if (name == "z") return DirectionSpace::kZ;
  if (name == "w") return DirectionSpace::kW;
  throw UsageError("unknown direction space '" + name + "' (expected z or w)");
}

/// A unit-norm semantic direction plus provenance.
struct Direction {
  std::string name;
  std::string method;  // "ganspace" | "interfacegan" | "random"
  DirectionSpace space = DirectionSpace::kZ;
  std::vector<double> vec;
  nlohmann::json metadata = nlohmann::json::object();

  int dim() const { return static_cast<int>(vec.size()); }
};

/// Normalizes `raw` into a unit Direction, recording the raw norm.
Direction make_direction(std::string name, std::string method, DirectionSpace space,
                         std::vector<double> raw);

struct DirectionBank {
  int latent_dim = 0;
  std::vector<Direction> directions;
  nlohmann::json provenance = nlohmann::json::object();
};

/// JSON persistence, format tag "latent-atlas/dir-v1".
void save_direction_bank(const std::filesystem::path& path, const DirectionBank& bank);
DirectionBank load_direction_bank(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Editing
// ---------------------------------------------------------------------------

/// Adds intensity * direction to every detail-layer entry of the code (the
/// single entry for standalone and FZ codes, all N for plus layouts, layers
/// M..N for hybrids). Z-flavored entries are retracted back to the sphere
/// afterwards; the base feature map is never touched.
template <typename T>
LatentCode<T> apply_edit(const LatentCode<T>& code, const Direction& dir, double intensity) {
  const bool z_code = is_z_flavored(code.space);
  if (z_code != (dir.space == DirectionSpace::kZ)) {
    throw UsageError(std::string("apply_edit: ") + direction_space_name(dir.space) +
                     "-space direction cannot edit a " + space_name(code.space) + " code");
  }
  LatentCode<T> out = code;
  for (auto& e : out.entries) {
    if (e.numel() != dir.dim()) {
      throw UsageError("apply_edit: direction dimension " + std::to_string(dir.dim()) +
                       " does not match code dimension " + std::to_string(e.numel()));
    }
    for (std::int64_t i = 0; i < e.numel(); ++i) {
      e[i] = static_cast<T>(static_cast<double>(e[i]) + intensity * dir.vec[static_cast<std::size_t>(i)]);
    }
    if (z_code) retract_inplace(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Direction discovery
// ---------------------------------------------------------------------------

struct GanspaceBanks {
  DirectionBank z;  // regression of samples onto PCA coordinates
  DirectionBank w;  // the PCA components themselves
};

/// Core GANSpace computation on explicit sample matrices (rows are samples).
/// PCA is fit on `ws`; each Z direction k solves the separable least squares
/// n_k = (sum_j x_j^k z_j) / (sum_j (x_j^k)^2) with x_j = V^T(w_j - mean).
/// Components with degenerate coordinate variance are skipped and recorded
/// in the provenance.
GanspaceBanks ganspace_from_samples(const Eigen::MatrixXd& zs, const Eigen::MatrixXd& ws,
                                    int num_components);

/// Samples the generator's prior and runs ganspace_from_samples.
template <typename T>
GanspaceBanks ganspace_directions(const Generator<T>& g, int num_samples,
                                  int num_components, std::uint64_t seed) {
  const int d = g.config().latent_dim;
  if (num_samples < 2 * d) {
    throw UsageError("ganspace_directions: need at least 2*latent_dim samples");
  }
  if (num_components < 1 || num_components > d) {
    throw UsageError("ganspace_directions: num_components must lie in [1, latent_dim]");
  }
  Rng rng(derive_seed(seed, "ganspace"));
  Eigen::MatrixXd zs(num_samples, d), ws(num_samples, d);
  const int chunk = 256;
  Tensor<T> zt({chunk, d});
  MappingTape<T> tape;
  int done = 0;
  while (done < num_samples) {
    const int take = std::min(chunk, num_samples - done);
    if (take != zt.dim(0)) zt = Tensor<T>({take, d});
    for (int b = 0; b < take; ++b) {
      Tensor<T> s = sphere_sample<T>(d, rng);
      std::copy(s.data(), s.data() + d, zt.data() + static_cast<std::int64_t>(b) * d);
    }
    const Tensor<T>& wt = tape.forward(g, zt);
    for (int b = 0; b < take; ++b) {
      for (int i = 0; i < d; ++i) {
        zs(done + b, i) = static_cast<double>(zt(b, i));
        ws(done + b, i) = static_cast<double>(wt(b, i));
      }
    }
    done += take;
  }
  GanspaceBanks banks = ganspace_from_samples(zs, ws, num_components);
  banks.z.provenance["seed"] = seed;
  banks.w.provenance["seed"] = seed;
  return banks;
}

struct InterfaceGanFit {
  Direction direction;
  double bias = 0.0;
  double train_accuracy = 0.0;
};

/// Fits a linear max-margin separator (hinge loss + L2 penalty, full-batch
/// Adam, deterministic) and returns its unit normal. `labels` entries are
/// +1/-1 (0/1 also accepted). Rows of `codes` are samples.
InterfaceGanFit interfacegan_direction(const Eigen::MatrixXd& codes,
                                       const std::vector<int>& labels,
                                       DirectionSpace space,
                                       const std::string& name = "attribute");

/// Seeded Gaussian direction with per-coordinate variance 0.04 (stddev 0.2);
/// the pre-normalization magnitude lands in metadata["raw_norm"].
Direction random_direction(int d, DirectionSpace space, std::uint64_t seed);

}  // namespace latent_atlas
