#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latent_atlas/nn.hpp"
#include "latent_atlas/tensor.hpp"

namespace latent_atlas {

/// Latent spaces supported by the inversion pipeline. Standalone spaces hold
/// style codes only; the F/* spaces pair a base feature map with detail codes
/// for the upper synthesis layers. FWPlusPn is FWPlus with an extra density
/// penalty during optimization.
enum class Space {
  kZ,
  kZPlus,
  kW,
  kWPlus,
  kFZ,
  kFZPlus,
  kFWPlus,
  kFWPlusPn,
};

inline bool is_hybrid(Space s) {
  return s == Space::kFZ || s == Space::kFZPlus || s == Space::kFWPlus ||
         s == Space::kFWPlusPn;
}

/// True when the (detail) codes live on the sphere and go through the mapping
/// network before style injection.
inline bool is_z_flavored(Space s) {
  return s == Space::kZ || s == Space::kZPlus || s == Space::kFZ || s == Space::kFZPlus;
}

inline bool has_pn_penalty(Space s) { return s == Space::kFWPlusPn; }

/// One independently optimized code per layer (vs. one broadcast code).
inline bool is_per_layer(Space s) {
  return s == Space::kZPlus || s == Space::kWPlus || s == Space::kFZPlus ||
         s == Space::kFWPlus || s == Space::kFWPlusPn;
}

inline const char* space_name(Space s) {
  switch (s) {
    case Space::kZ: return "z";
    case Space::kZPlus: return "z+";
    case Space::kW: return "w";
    case Space::kWPlus: return "w+";
    case Space::kFZ: return "f/z";
    case Space::kFZPlus: return "f/z+";
    case Space::kFWPlus: return "f/w+";
    case Space::kFWPlusPn: return "f/w+pn";
  }
  return "?";
}

inline std::vector<Space> all_spaces() {
  return {Space::kZ,  Space::kZPlus,  Space::kW,       Space::kWPlus,
          Space::kFZ, Space::kFZPlus, Space::kFWPlus,  Space::kFWPlusPn};
}

inline std::string space_list_string() {
  std::string out;
  for (Space s : all_spaces()) {
    if (!out.empty()) out += ", ";
    out += space_name(s);
  }
  return out;
}

inline Space parse_space(const std::string& name) {
  for (Space s : all_spaces()) {
    if (name == space_name(s)) return s;
  }
  throw UsageError("unknown latent space '" + name + "' (expected one of: " +
                   space_list_string() + ")");
}

/// Describes the code layout a generator configuration expects. Used to
/// validate latent codes without depending on the full generator type.
struct CodeLayout {
  int latent_dim = 0;            // d
  int num_style_layers = 0;      // N
  int split_layer = 0;           // M
  std::vector<int> tap_shape;    // (channels, h, w)

  int num_detail_layers() const { return num_style_layers - split_layer + 1; }
};

/// A latent code in any supported space.
///
/// entries: standalone Z/W hold one vector; Z+/W+ hold N vectors; hybrid
/// spaces hold the detail codes for layers M..N (a single broadcast vector
/// for F/Z). base: the feature map f, present only for hybrid spaces.
template <typename T>
struct LatentCode {
  Space space = Space::kZ;
  std::vector<Tensor<T>> entries;
  Tensor<T> base;

  int expected_entries(const CodeLayout& layout) const {
    if (!is_hybrid(space)) return is_per_layer(space) ? layout.num_style_layers : 1;
    return space == Space::kFZ ? 1 : layout.num_detail_layers();
  }
};

template <typename T>
void validate_code(const LatentCode<T>& code, const CodeLayout& layout) {
  const int want = code.expected_entries(layout);
  if (static_cast<int>(code.entries.size()) != want) {
    throw UsageError(std::string("latent code for space ") + space_name(code.space) +
                     ": expected " + std::to_string(want) + " code entries, got " +
                     std::to_string(code.entries.size()));
  }
  for (const auto& e : code.entries) {
    if (e.shape() != std::vector<int>{layout.latent_dim}) {
      throw UsageError("latent code entry has dimension " + std::to_string(e.numel()) +
                       ", expected " + std::to_string(layout.latent_dim));
    }
    if (!e.all_finite()) throw UsageError("latent code entry contains non-finite values");
  }
  if (is_hybrid(code.space)) {
    if (code.base.shape() != layout.tap_shape) {
      throw UsageError("hybrid code base shape " +
                       Tensor<T>::shape_string(code.base.shape()) +
                       " does not match generator tap " +
                       Tensor<T>::shape_string(layout.tap_shape));
    }
    if (!code.base.all_finite()) throw UsageError("hybrid code base contains non-finite values");
  } else if (!code.base.empty()) {
    throw UsageError("non-hybrid latent code must not carry a base feature map");
  }
}

// ---------------------------------------------------------------------------
// Hypersphere
// ---------------------------------------------------------------------------

/// Uniform sample on the sphere of radius sqrt(d): a Gaussian draw scaled to
/// the exact radius.
template <typename T>
Tensor<T> sphere_sample(int d, Rng& rng) {
  Tensor<T> z({d});
  double sq = 0.0;
  std::vector<double> tmp(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    tmp[static_cast<std::size_t>(i)] = rng.gaussian();
    sq += tmp[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(i)];
  }
  const double scale = std::sqrt(static_cast<double>(d) / sq);
  for (int i = 0; i < d; ++i) z(i) = static_cast<T>(tmp[static_cast<std::size_t>(i)] * scale);
  return z;
}

/// Projects a vector back onto the sphere of radius sqrt(d), preserving its
/// direction. The norm is accumulated in double so the result holds the
/// radius to within an ulp even for float tensors.
template <typename T>
void retract_inplace(Tensor<T>& z) {
  const double sq = z.squared_norm();
  if (sq <= 0.0 || !std::isfinite(sq)) {
    throw NumericError("retract: zero or non-finite code norm (optimizer collapse?)");
  }
  const double scale = std::sqrt(static_cast<double>(z.numel()) / sq);
  for (std::int64_t i = 0; i < z.numel(); ++i) {
    z[i] = static_cast<T>(static_cast<double>(z[i]) * scale);
  }
}

template <typename T>
Tensor<T> retract(const Tensor<T>& z) {
  Tensor<T> out = z;
  retract_inplace(out);
  return out;
}

/// Retracts every sphere-constrained entry of a code. No-op for W-flavored
/// codes and for the base feature map.
template <typename T>
void retract_code(LatentCode<T>& code) {
  if (!is_z_flavored(code.space)) return;
  for (auto& e : code.entries) retract_inplace(e);
}

// ---------------------------------------------------------------------------
// LeakyReLU deactivation (W -> P)
// ---------------------------------------------------------------------------

/// Inverse LeakyReLU with forward slope 0.2: negative entries scale by 5.
template <typename T>
Tensor<T> deactivate(const Tensor<T>& w) {
  Tensor<T> p(w.shape());
  const T inv_slope = static_cast<T>(1.0 / nn::kLeakySlope);
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    p[i] = w[i] >= T(0) ? w[i] : w[i] * inv_slope;
  }
  return p;
}

/// Forward LeakyReLU with slope 0.2 (the exact inverse of deactivate).
template <typename T>
Tensor<T> activate(const Tensor<T>& p) {
  Tensor<T> w(p.shape());
  const T slope = static_cast<T>(nn::kLeakySlope);
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    w[i] = p[i] >= T(0) ? p[i] : p[i] * slope;
  }
  return w;
}

}  // namespace latent_atlas
