#include "latent_atlas/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "latent_atlas/errors.hpp"
#include "latent_atlas/rng.hpp"

namespace latent_atlas {

namespace {

double smooth_edge(double signed_dist, double softness) {
  return 1.0 / (1.0 + std::exp(signed_dist / softness));
}

}  // namespace

Tensor<float> render_toy_face(const ToyFaceFactors& f, int resolution) {
  if (resolution < 4) throw UsageError("render_toy_face: resolution must be >= 4");
  const int r = resolution;
  Tensor<float> img({3, r, r});
  const double soft = 0.75 / r;

  for (int y = 0; y < r; ++y) {
    const double py = (y + 0.5) / r;
    for (int x = 0; x < r; ++x) {
      const double px = (x + 0.5) / r;

      const double bg = f.bg_top + (f.bg_bottom - f.bg_top) * py;
      double cr = bg, cg = bg, cb = bg * 1.05;

      // Face ellipse: signed distance approximated in normalized radius.
      const double qx = (px - f.cx) / f.rx;
      const double qy = (py - f.cy) / f.ry;
      const double q = std::sqrt(qx * qx + qy * qy);
      const double face_m = smooth_edge((q - 1.0) * std::min(f.rx, f.ry), soft);
      cr += face_m * (f.face_r - cr);
      cg += face_m * (f.face_g - cg);
      cb += face_m * (f.face_b - cb);

      // Eyes: two dark disks.
      const double ey = f.cy - f.eye_dy * f.ry;
      for (int side = -1; side <= 1; side += 2) {
        const double ex = f.cx + side * f.eye_dx * f.rx;
        const double d = std::sqrt((px - ex) * (px - ex) + (py - ey) * (py - ey));
        const double m = smooth_edge(d - f.eye_r, soft);
        cr += m * (0.08 - cr);
        cg += m * (0.08 - cg);
        cb += m * (0.10 - cb);
      }

      // Mouth: a parabolic stroke, curvature from `smile`.
      const double half_w = f.mouth_w * f.rx;
      const double t = (px - f.cx) / half_w;
      if (std::abs(t) < 1.4) {
        const double my = f.cy + f.mouth_y * f.ry + f.smile * 0.12 * (t * t - 0.5);
        const double d = std::abs(py - my);
        const double stroke = 0.014;
        const double along = smooth_edge(std::abs(t) - 1.0, 0.08);
        const double m = smooth_edge(d - stroke, soft) * along;
        cr += m * (0.55 - cr);
        cg += m * (0.15 - cg);
        cb += m * (0.18 - cb);
      }

      img(0, y, x) = static_cast<float>(std::clamp(cr, 0.0, 1.0) * 2.0 - 1.0);
      img(1, y, x) = static_cast<float>(std::clamp(cg, 0.0, 1.0) * 2.0 - 1.0);
      img(2, y, x) = static_cast<float>(std::clamp(cb, 0.0, 1.0) * 2.0 - 1.0);
    }
  }
  return img;
}

ToyFaceDataset::ToyFaceDataset(int resolution, std::uint64_t seed)
    : resolution_(resolution), seed_(seed) {
  if (resolution < 4) throw UsageError("ToyFaceDataset: resolution must be >= 4");
}

ToyFaceFactors ToyFaceDataset::factors(int index) const {
  if (index < 0) throw UsageError("ToyFaceDataset: index must be >= 0");
  Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(index)));
  ToyFaceFactors f;
  f.bg_top = rng.uniform(0.25, 0.9);
  f.bg_bottom = rng.uniform(0.25, 0.9);
  f.face_r = rng.uniform(0.5, 0.95);
  f.face_g = rng.uniform(0.3, 0.8);
  f.face_b = rng.uniform(0.2, 0.7);
  f.cx = rng.uniform(0.44, 0.56);
  f.cy = rng.uniform(0.44, 0.56);
  f.rx = rng.uniform(0.22, 0.36);
  f.ry = rng.uniform(0.24, 0.38);
  f.eye_dx = rng.uniform(0.35, 0.55);
  f.eye_dy = rng.uniform(0.15, 0.35);
  f.eye_r = rng.uniform(0.045, 0.08);
  f.mouth_w = rng.uniform(0.38, 0.62);
  f.mouth_y = rng.uniform(0.35, 0.55);
  f.smile = rng.uniform(-1.0, 1.0);
  return f;
}

Tensor<float> ToyFaceDataset::image(int index) const {
  return render_toy_face(factors(index), resolution_);
}

double image_brightness(const Tensor<float>& img) {
  const int hw = img.dim(1) * img.dim(2);
  double acc = 0.0;
  for (int i = 0; i < hw; ++i) {
    acc += 0.299 * img[i] + 0.587 * img[hw + i] + 0.114 * img[2 * hw + i];
  }
  return acc / hw;
}

double image_redness(const Tensor<float>& img) {
  const int hw = img.dim(1) * img.dim(2);
  double acc = 0.0;
  for (int i = 0; i < hw; ++i) {
    acc += img[i] - 0.5 * (img[hw + i] + img[2 * hw + i]);
  }
  return acc / hw;
}

double image_top_heavy(const Tensor<float>& img) {
  const int h = img.dim(1), w = img.dim(2);
  const int half = h / 2;
  double top = 0.0, bottom = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      double& acc = y < half ? top : bottom;
      for (int x = 0; x < w; ++x) acc += img(c, y, x);
    }
  }
  const double top_n = 3.0 * half * w;
  const double bot_n = 3.0 * (h - half) * w;
  return top / top_n - bottom / bot_n;
}

std::vector<std::string> image_attribute_names() {
  return {"brightness", "redness", "top_heavy"};
}

double image_attribute(const std::string& name, const Tensor<float>& img) {
  if (name == "brightness") return image_brightness(img);
  if (name == "redness") return image_redness(img);
  if (name == "top_heavy") return image_top_heavy(img);
  std::string known;
  for (const auto& n : image_attribute_names()) {
    if (!known.empty()) known += ", ";
    known += n;
  }
  throw UsageError("unknown image attribute '" + name + "' (expected one of: " + known + ")");
}

}  // namespace latent_atlas
