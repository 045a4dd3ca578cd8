#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latent_atlas/tensor.hpp"

namespace latent_atlas {

/// Generative factors of one procedural face. All geometry is in fractions
/// of the image side so renders agree across resolutions.
struct ToyFaceFactors {
  double bg_top = 0.5, bg_bottom = 0.5;       // background luminance gradient
  double face_r = 0.8, face_g = 0.6, face_b = 0.5;
  double cx = 0.5, cy = 0.5;                  // face center
  double rx = 0.3, ry = 0.33;                 // face radii
  double eye_dx = 0.45, eye_dy = 0.25;        // offsets as fractions of rx/ry
  double eye_r = 0.07;
  double mouth_w = 0.5, mouth_y = 0.45;       // width as fraction of rx, y of ry
  double smile = 0.0;                         // [-1, 1], curvature
};

/// Renders the factors as a [3, R, R] image in [-1, 1] with soft edges.
Tensor<float> render_toy_face(const ToyFaceFactors& f, int resolution);

/// Endless procedural face dataset with deterministic random access:
/// factors(i) depends only on (seed, i).
class ToyFaceDataset {
public:
  ToyFaceDataset(int resolution, std::uint64_t seed);

  int resolution() const { return resolution_; }
  std::uint64_t seed() const { return seed_; }

  ToyFaceFactors factors(int index) const;
  Tensor<float> image(int index) const;

private:
  int resolution_;
  std::uint64_t seed_;
};

/// Scalar functionals on [3, H, W] images in [-1, 1]; used to pseudo-label
/// generated samples for supervised direction fitting.
double image_brightness(const Tensor<float>& img);
double image_redness(const Tensor<float>& img);
double image_top_heavy(const Tensor<float>& img);

std::vector<std::string> image_attribute_names();
double image_attribute(const std::string& name, const Tensor<float>& img);

}  // namespace latent_atlas
