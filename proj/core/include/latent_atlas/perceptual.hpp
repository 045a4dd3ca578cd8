#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "latent_atlas/nn.hpp"
#include "latent_atlas/tensor.hpp"

namespace latent_atlas {

/// Seeds of the two frozen random extractors shipped with the artifact: the
/// perceptual feature net and the identity-embedding proxy. Changing either
/// invalidates recorded metric fixtures.
inline constexpr std::uint64_t kPerceptualSeed = 0x9e2b7c15;
inline constexpr std::uint64_t kIdentitySeed = 0x51d0a733;

/// Frozen random convolutional feature extractor: stride-2 conv + LeakyReLU
/// blocks. Weights are seeded at construction and never trained. Serves as
/// the perceptual feature map and (with a different seed plus pooling) as
/// the identity-embedding proxy.
template <typename T>
class FeatureExtractor {
public:
  FeatureExtractor() = default;

  static FeatureExtractor create(std::uint64_t seed, std::vector<int> widths = {32, 64, 128}) {
    FeatureExtractor fx;
    Rng rng(derive_seed(seed, "feature-extractor"));
    int in = 3;
    for (int w : widths) {
      fx.blocks_.push_back(nn::Conv2d<T>::he_init(in, w, 3, 2, 1, rng));
      in = w;
    }
    return fx;
  }

  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  const std::vector<nn::Conv2d<T>>& blocks() const { return blocks_; }

  /// Reusable forward record: inputs[b] feeds block b, acts[b] is its
  /// post-activation output.
  struct Tape {
    std::vector<Tensor<T>> inputs;
    std::vector<Tensor<T>> acts;
    std::vector<nn::ConvWorkspace<T>> ws;
    Tensor<T> pre;
  };

  /// x: [B, 3, H, W]. Fills tape.acts with every block's activations.
  void forward(const Tensor<T>& x, Tape& tape) const {
    const auto n = blocks_.size();
    tape.inputs.resize(n);
    tape.acts.resize(n);
    tape.ws.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
      tape.inputs[b] = b == 0 ? x : tape.acts[b - 1];
      nn::conv2d_forward(blocks_[b], tape.inputs[b], tape.pre, tape.ws[b]);
      nn::leaky_relu_forward(tape.pre, tape.acts[b]);
    }
  }

  /// d_acts[b] holds d(loss)/d(acts[b]) (empty tensors contribute nothing);
  /// the result is d(loss)/d(x).
  void backward(Tape& tape, const std::vector<Tensor<T>>& d_acts, Tensor<T>& dx) const {
    const auto n = blocks_.size();
    Tensor<T> dcur;
    for (std::size_t b = n; b-- > 0;) {
      if (dcur.empty()) {
        if (d_acts[b].empty()) continue;
        dcur = d_acts[b];
      } else if (!d_acts[b].empty()) {
        axpy(dcur, d_acts[b], T(1));
      }
      nn::leaky_relu_backward(tape.acts[b], dcur, dpre_);
      nn::conv2d_backward(blocks_[b], tape.inputs[b], dpre_, &dx,
                          static_cast<nn::Conv2d<T>*>(nullptr), tape.ws[b]);
      std::swap(dcur, dx);
    }
    std::swap(dcur, dx);
  }

private:
  std::vector<nn::Conv2d<T>> blocks_;
  mutable Tensor<T> dpre_;
};

/// Unit-normalized per-block features of one image, cached so repeated
/// distances against the same target cost one extractor pass.
template <typename T>
struct PerceptualTargets {
  std::vector<Tensor<T>> unit_feats;
};

template <typename T>
PerceptualTargets<T> perceptual_targets(const FeatureExtractor<T>& fx, const Tensor<T>& image) {
  if (image.rank() != 3) throw UsageError("perceptual features expect a [C, H, W] image");
  typename FeatureExtractor<T>::Tape tape;
  std::vector<int> shape = image.shape();
  shape.insert(shape.begin(), 1);
  fx.forward(image.reshaped(shape), tape);

  PerceptualTargets<T> out;
  out.unit_feats.reserve(tape.acts.size());
  for (const auto& act : tape.acts) {
    Tensor<T> u = act;
    const double norm = std::max(u.norm(), 1e-12);
    for (std::int64_t i = 0; i < u.numel(); ++i) {
      u[i] = static_cast<T>(static_cast<double>(u[i]) / norm);
    }
    out.unit_feats.push_back(std::move(u));
  }
  return out;
}

/// Squared distance between unit-normalized block features, averaged over
/// blocks. Symmetric by construction.
template <typename T>
double perceptual_distance(const FeatureExtractor<T>& fx, const Tensor<T>& a,
                           const Tensor<T>& b) {
  check_same_shape(a, b, "perceptual_distance");
  PerceptualTargets<T> fa = perceptual_targets(fx, a);
  PerceptualTargets<T> fb = perceptual_targets(fx, b);
  double total = 0.0;
  for (std::size_t k = 0; k < fa.unit_feats.size(); ++k) {
    const Tensor<T>& u = fa.unit_feats[k];
    const Tensor<T>& v = fb.unit_feats[k];
    double acc = 0.0;
    for (std::int64_t i = 0; i < u.numel(); ++i) {
      const double diff = static_cast<double>(u[i]) - static_cast<double>(v[i]);
      acc += diff * diff;
    }
    total += acc;
  }
  return total / static_cast<double>(fa.unit_feats.size());
}

/// Perceptual loss of an already-forwarded image tape against cached target
/// features. Writes d(loss)/d(acts[b]) into d_acts for a later
/// FeatureExtractor::backward call. Returns the loss value.
template <typename T>
double perceptual_loss_grad(const typename FeatureExtractor<T>::Tape& tape,
                            const PerceptualTargets<T>& targets,
                            std::vector<Tensor<T>>& d_acts) {
  const auto blocks = targets.unit_feats.size();
  d_acts.assign(blocks, Tensor<T>());
  double total = 0.0;
  for (std::size_t k = 0; k < blocks; ++k) {
    const Tensor<T>& f = tape.acts[k];
    const Tensor<T>& v = targets.unit_feats[k];
    const double nf = std::max(f.norm(), 1e-12);

    double dot_uv = 0.0;
    for (std::int64_t i = 0; i < f.numel(); ++i) {
      dot_uv += static_cast<double>(f[i]) / nf * static_cast<double>(v[i]);
    }
    // L_k = |f/nf - v|^2 = 2 - 2 u.v; dL/df = (2/nf) (u (u.v) - v).
    total += 2.0 - 2.0 * dot_uv;
    Tensor<T> g(f.shape());
    const double scale = 2.0 / (nf * static_cast<double>(blocks));
    for (std::int64_t i = 0; i < f.numel(); ++i) {
      const double u_i = static_cast<double>(f[i]) / nf;
      g[i] = static_cast<T>(scale * (u_i * dot_uv - static_cast<double>(v[i])));
    }
    d_acts[k] = std::move(g);
  }
  return total / static_cast<double>(blocks);
}

/// Global-average-pooled last-block features: the identity-proxy embedding.
template <typename T>
std::vector<double> identity_embedding(const FeatureExtractor<T>& fx, const Tensor<T>& image) {
  if (image.rank() != 3) throw UsageError("identity_embedding expects a [C, H, W] image");
  typename FeatureExtractor<T>::Tape tape;
  std::vector<int> shape = image.shape();
  shape.insert(shape.begin(), 1);
  fx.forward(image.reshaped(shape), tape);

  const Tensor<T>& act = tape.acts.back();
  const int c = act.dim(1);
  const int hw = act.dim(2) * act.dim(3);
  std::vector<double> emb(static_cast<std::size_t>(c), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    const T* p = &act(0, ch, 0, 0);
    for (int i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
    emb[static_cast<std::size_t>(ch)] = acc / hw;
  }
  return emb;
}

/// Embedding of the all-zero image: the network's constant bias response.
/// Subtracted from raw embeddings so similarities compare image content
/// rather than the shared offset every input produces.
template <typename T>
std::vector<double> identity_baseline(const FeatureExtractor<T>& fx,
                                      const std::vector<int>& image_shape) {
  return identity_embedding(fx, Tensor<T>::zeros(image_shape));
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw NumericError("identity_similarity: zero embedding norm (degenerate input)");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Cosine similarity of baseline-centered embeddings. Callers comparing many
/// images against one reference should use IdentityMetric to reuse the
/// baseline.
template <typename T>
double identity_similarity(const FeatureExtractor<T>& fx, const Tensor<T>& a,
                           const Tensor<T>& b) {
  check_same_shape(a, b, "identity_similarity");
  const std::vector<double> base = identity_baseline(fx, a.shape());
  std::vector<double> ea = identity_embedding(fx, a);
  std::vector<double> eb = identity_embedding(fx, b);
  for (std::size_t i = 0; i < base.size(); ++i) {
    ea[i] -= base[i];
    eb[i] -= base[i];
  }
  return cosine_similarity(ea, eb);
}

/// Identity-similarity metric with the baseline embedding cached once.
template <typename T>
class IdentityMetric {
public:
  IdentityMetric(FeatureExtractor<T> fx, const std::vector<int>& image_shape)
      : fx_(std::move(fx)), baseline_(identity_baseline(fx_, image_shape)) {}

  std::vector<double> embed(const Tensor<T>& image) const {
    std::vector<double> e = identity_embedding(fx_, image);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] -= baseline_[i];
    return e;
  }

  double similarity(const Tensor<T>& a, const Tensor<T>& b) const {
    check_same_shape(a, b, "identity_similarity");
    return cosine_similarity(embed(a), embed(b));
  }

private:
  FeatureExtractor<T> fx_;
  std::vector<double> baseline_;
};

}  // namespace latent_atlas
