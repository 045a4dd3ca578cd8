#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "latent_atlas/checkpoint.hpp"
#include "latent_atlas/generator.hpp"
#include "latent_atlas/perceptual.hpp"

namespace latent_atlas {

/// Exact area-average downsample by an integer factor. factor 1 copies.
template <typename T>
void area_downsample(const Tensor<T>& x, int factor, Tensor<T>& y) {
  if (x.rank() != 4) throw UsageError("area_downsample expects [B, C, H, W]");
  if (factor < 1 || x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw UsageError("area_downsample: factor must divide the spatial size");
  }
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2) / factor, w = x.dim(3) / factor;
  y = Tensor<T>({b, c, h, w});
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          double acc = 0.0;
          for (int di = 0; di < factor; ++di) {
            for (int dj = 0; dj < factor; ++dj) {
              acc += static_cast<double>(x(bi, ci, i * factor + di, j * factor + dj));
            }
          }
          y(bi, ci, i, j) = static_cast<T>(acc * inv);
        }
      }
    }
  }
}

/// Shape contract for the image -> base-feature encoder. The encoder eats
/// the target downsampled to min(generator output, 8 x tap resolution) and
/// emits a tensor of exactly the tap shape.
struct EncoderConfig {
  int source_resolution = 0;  // generator output resolution
  int input_resolution = 0;   // min(source, 8 * tap resolution)
  int tap_channels = 0;
  int tap_resolution = 0;
  int stem_width = 32;
  int max_width = 128;

  static EncoderConfig from_generator(const GeneratorConfig& g) {
    EncoderConfig c;
    c.source_resolution = g.output_resolution;
    const std::vector<int> tap = g.tap_shape();
    c.tap_channels = tap[0];
    c.tap_resolution = tap[1];
    c.input_resolution = std::min(g.output_resolution, 8 * c.tap_resolution);
    return c;
  }

  /// Stride-2 stages between the input and tap resolutions.
  int num_down_blocks() const {
    int blocks = 0, r = input_resolution;
    while (r > tap_resolution) {
      r /= 2;
      ++blocks;
    }
    return blocks;
  }

  void validate() const {
    if (source_resolution < 1 || input_resolution < 1 || tap_channels < 1 ||
        tap_resolution < 1 || stem_width < 1 || max_width < stem_width) {
      throw UsageError("encoder config: all sizes must be positive");
    }
    auto pow2_ratio = [](int a, int b) {
      while (a > b && a % 2 == 0) a /= 2;
      return a == b;
    };
    if (!pow2_ratio(source_resolution, input_resolution) ||
        !pow2_ratio(input_resolution, tap_resolution)) {
      throw UsageError("encoder config: resolutions must be power-of-two multiples");
    }
  }
};

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return nlohmann::json{{"source_resolution", c.source_resolution},
                        {"input_resolution", c.input_resolution},
                        {"tap_channels", c.tap_channels},
                        {"tap_resolution", c.tap_resolution},
                        {"stem_width", c.stem_width},
                        {"max_width", c.max_width}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.source_resolution = j.at("source_resolution").get<int>();
  c.input_resolution = j.at("input_resolution").get<int>();
  c.tap_channels = j.at("tap_channels").get<int>();
  c.tap_resolution = j.at("tap_resolution").get<int>();
  c.stem_width = j.value("stem_width", 32);
  c.max_width = j.value("max_width", 128);
  c.validate();
  return c;
}

/// Convolutional encoder E: image -> base feature map. Stem, one stride-2
/// block per factor-of-two between input and tap resolution (widths doubling
/// up to max_width), a stride-1 refinement block, and a linear 1x1 head.
template <typename T>
class Encoder {
public:
  Encoder() = default;

  static Encoder random_init(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Encoder e;
    e.cfg_ = cfg;
    Rng rng(derive_seed(seed, "encoder-init"));
    int width = cfg.stem_width;
    e.convs_.push_back(nn::Conv2d<T>::he_init(3, width, 3, 1, 1, rng));
    e.strides_.push_back(1);
    for (int k = 0; k < cfg.num_down_blocks(); ++k) {
      const int next = std::min(width * 2, cfg.max_width);
      e.convs_.push_back(nn::Conv2d<T>::he_init(width, next, 3, 2, 1, rng));
      e.strides_.push_back(2);
      width = next;
    }
    e.convs_.push_back(nn::Conv2d<T>::he_init(width, width, 3, 1, 1, rng));
    e.strides_.push_back(1);
    e.convs_.push_back(nn::Conv2d<T>::he_init(width, cfg.tap_channels, 1, 1, 0, rng));
    e.strides_.push_back(1);
    return e;
  }

  const EncoderConfig& config() const { return cfg_; }
  std::vector<nn::Conv2d<T>>& convs() { return convs_; }
  const std::vector<nn::Conv2d<T>>& convs() const { return convs_; }

  /// Forward record for training. inputs[k] feeds conv k; the head (last
  /// conv) is linear, every other conv is followed by a LeakyReLU.
  struct Tape {
    std::vector<Tensor<T>> inputs;
    std::vector<Tensor<T>> acts;
    std::vector<nn::ConvWorkspace<T>> ws;
    Tensor<T> out;
  };

  /// x: [B, 3, input_resolution, input_resolution] -> [B, C, th, tw].
  const Tensor<T>& forward(const Tensor<T>& x, Tape& tape) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.input_resolution ||
        x.dim(3) != cfg_.input_resolution) {
      throw UsageError("encoder forward: expected [B, 3, " +
                       std::to_string(cfg_.input_resolution) + ", " +
                       std::to_string(cfg_.input_resolution) + "], got " +
                       Tensor<T>::shape_string(x.shape()));
    }
    const std::size_t n = convs_.size();
    tape.inputs.resize(n);
    tape.acts.resize(n);
    tape.ws.resize(n);
    tape.inputs[0] = x;
    for (std::size_t k = 0; k < n; ++k) {
      const bool head = k + 1 == n;
      nn::conv2d_forward(convs_[k], tape.inputs[k], head ? tape.out : tape.acts[k], tape.ws[k]);
      if (!head) {
        nn::leaky_relu_forward(tape.acts[k], tape.acts[k]);
        tape.inputs[k + 1] = tape.acts[k];
      }
    }
    return tape.out;
  }

  /// Backpropagates d_out into parameter gradients (accumulated) and,
  /// optionally, the input image.
  void backward(Tape& tape, const Tensor<T>& d_out, std::vector<nn::Conv2d<T>>& d_params,
                Tensor<T>* dx = nullptr) const {
    const std::size_t n = convs_.size();
    dcur_ = d_out;
    for (std::size_t k = n; k-- > 0;) {
      const bool head = k + 1 == n;
      if (!head) {
        nn::leaky_relu_backward(tape.acts[k], dcur_, dpre_);
        std::swap(dcur_, dpre_);
      }
      const bool need_dx = k > 0 || dx != nullptr;
      nn::conv2d_backward(convs_[k], tape.inputs[k], dcur_, need_dx ? &dpre_ : nullptr,
                          &d_params[k], tape.ws[k]);
      std::swap(dcur_, dpre_);
    }
    if (dx) *dx = dcur_;
  }

  /// f0 for one image at generator output resolution: downsample, forward,
  /// strip the batch dim. Deterministic.
  Tensor<T> encode(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.source_resolution ||
        image.dim(2) != cfg_.source_resolution) {
      throw UsageError("encode: expected [3, " + std::to_string(cfg_.source_resolution) +
                       ", " + std::to_string(cfg_.source_resolution) + "], got " +
                       Tensor<T>::shape_string(image.shape()));
    }
    Tensor<T> batch = image.reshaped({1, 3, cfg_.source_resolution, cfg_.source_resolution});
    Tensor<T> down;
    area_downsample(batch, cfg_.source_resolution / cfg_.input_resolution, down);
    Tape tape;
    const Tensor<T>& out = forward(down, tape);
    return out.reshaped({cfg_.tap_channels, cfg_.tap_resolution, cfg_.tap_resolution});
  }

  std::vector<nn::Conv2d<T>> make_grads() const {
    std::vector<nn::Conv2d<T>> g;
    g.reserve(convs_.size());
    for (const auto& c : convs_) g.push_back(nn::Conv2d<T>::zeros_like(c));
    return g;
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    for (std::size_t k = 0; k < convs_.size(); ++k) {
      const std::string p = "enc." + std::to_string(k) + ".";
      fn(p + "weight", convs_[k].weight);
      fn(p + "bias", convs_[k].bias);
    }
  }

private:
  EncoderConfig cfg_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<int> strides_;
  mutable Tensor<T> dcur_, dpre_;
};

struct EncoderTrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double step_size = 1e-3;
  double lambda_enc = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 0 || batch_size < 1 || step_size <= 0.0 || lambda_enc < 0.0) {
      throw UsageError("encoder training config: steps >= 0, batch >= 1, "
                       "step size > 0, lambda_enc >= 0");
    }
  }
};

template <typename T>
struct EncoderTrainResult {
  Encoder<T> encoder;
  std::vector<double> loss_history;  // one total per step
};

/// Trains the encoder purely on generator-sampled pairs: each step draws
/// z ~ Z, renders x = G(z), and minimizes
///   mean((G(E(x_down), w) - x)^2) + lambda_enc * perceptual(G(E(x_down), w), x)
/// with the sampled w treated as known and the generator frozen.
template <typename T>
EncoderTrainResult<T> train_encoder(const Generator<T>& g, const FeatureExtractor<T>& fx,
                                    const EncoderTrainConfig& cfg) {
  cfg.validate();
  const GeneratorConfig& gcfg = g.config();
  EncoderTrainResult<T> result;
  result.encoder = Encoder<T>::random_init(EncoderConfig::from_generator(gcfg), cfg.seed);
  Encoder<T>& enc = result.encoder;
  const EncoderConfig& ecfg = enc.config();

  Rng rng(derive_seed(cfg.seed, "encoder-train"));
  const int b = cfg.batch_size;
  const int d = gcfg.latent_dim;
  const int n_layers = gcfg.num_style_layers();
  const int res = gcfg.output_resolution;
  const int factor = ecfg.source_resolution / ecfg.input_resolution;

  nn::AdamOptimizer<T> opt(nn::AdamConfig{cfg.step_size, 0.9, 0.999, 1e-8});
  for (auto& c : enc.convs()) {
    opt.register_param(&c.weight);
    opt.register_param(&c.bias);
  }
  std::vector<nn::Conv2d<T>> grads = enc.make_grads();
  std::vector<const Tensor<T>*> grad_ptrs;
  for (auto& c : grads) {
    grad_ptrs.push_back(&c.weight);
    grad_ptrs.push_back(&c.bias);
  }

  SynthesisTape<T> sample_tape(&g), recon_tape(&g);
  typename Encoder<T>::Tape enc_tape;
  typename FeatureExtractor<T>::Tape fx_tape;
  Tensor<T> z({b, d});
  std::vector<Tensor<T>> styles(static_cast<std::size_t>(n_layers) + 1);
  Tensor<T> x_down, d_image, d_fhat, dxb;
  std::vector<Tensor<T>> d_styles, d_acts;
  Tensor<T> xb({3, res, res}), xhat_b({1, 3, res, res});

  for (int step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      Tensor<T> s = sphere_sample<T>(d, rng);
      std::copy(s.data(), s.data() + d, z.data() + static_cast<std::int64_t>(i) * d);
    }
    Tensor<T> w = g.map_latent_batch(z);
    for (int layer = 1; layer <= n_layers; ++layer) {
      styles[static_cast<std::size_t>(layer)] = w;
    }
    const Tensor<T>& x = sample_tape.forward(styles);

    area_downsample(x, factor, x_down);
    const Tensor<T>& fhat = enc.forward(x_down, enc_tape);
    const Tensor<T>& xhat = recon_tape.forward_from_tap(fhat, styles);

    // MSE term over the whole batch.
    const std::int64_t numel = x.numel();
    if (!d_image.same_shape(x)) d_image = Tensor<T>(x.shape());
    double mse = 0.0;
    for (std::int64_t i = 0; i < numel; ++i) {
      const double diff = static_cast<double>(xhat[i]) - static_cast<double>(x[i]);
      mse += diff * diff;
      d_image[i] = static_cast<T>(2.0 * diff / static_cast<double>(numel));
    }
    mse /= static_cast<double>(numel);

    // Perceptual term, per sample (features are normalized per image).
    double per = 0.0;
    if (cfg.lambda_enc > 0.0) {
      const std::int64_t img_sz = static_cast<std::int64_t>(3) * res * res;
      for (int i = 0; i < b; ++i) {
        std::copy(x.data() + i * img_sz, x.data() + (i + 1) * img_sz, xb.data());
        PerceptualTargets<T> targets = perceptual_targets(fx, xb);
        std::copy(xhat.data() + i * img_sz, xhat.data() + (i + 1) * img_sz, xhat_b.data());
        fx.forward(xhat_b, fx_tape);
        per += perceptual_loss_grad<T>(fx_tape, targets, d_acts);
        fx.backward(fx_tape, d_acts, dxb);
        const double scale = cfg.lambda_enc / static_cast<double>(b);
        T* dst = d_image.data() + i * img_sz;
        for (std::int64_t j = 0; j < img_sz; ++j) {
          dst[j] += static_cast<T>(scale * static_cast<double>(dxb[j]));
        }
      }
      per /= static_cast<double>(b);
    }

    const double total = mse + cfg.lambda_enc * per;
    if (!std::isfinite(total)) {
      throw NumericError("encoder training diverged at step " + std::to_string(step) +
                         " (loss not finite); lower the step size");
    }
    result.loss_history.push_back(total);

    recon_tape.backward(d_image, d_styles, &d_fhat, nullptr);
    for (auto& c : grads) {
      c.weight.set_zero();
      c.bias.set_zero();
    }
    enc.backward(enc_tape, d_fhat, grads, nullptr);
    opt.step(grad_ptrs);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

template <typename T>
void save_encoder(const std::filesystem::path& dir, Encoder<T>& enc,
                  nlohmann::json extra_meta = nlohmann::json::object()) {
  Checkpoint ck;
  ck.format = kEncoderCheckpointFormat;
  ck.meta = std::move(extra_meta);
  ck.meta["encoder_config"] = encoder_config_to_json(enc.config());
  enc.visit_parameters([&](const std::string& name, Tensor<T>& t) {
    ck.add(name, t.template cast<float>());
  });
  save_checkpoint(dir, ck);
}

template <typename T>
Encoder<T> load_encoder(const std::filesystem::path& dir, nlohmann::json* meta_out = nullptr) {
  Checkpoint ck = load_checkpoint(dir, kEncoderCheckpointFormat);
  EncoderConfig cfg = encoder_config_from_json(ck.meta.at("encoder_config"));
  Encoder<T> enc = Encoder<T>::random_init(cfg, 0);
  enc.visit_parameters([&](const std::string& name, Tensor<T>& t) {
    const Tensor<float>& src = ck.tensor(name);
    if (src.shape() != t.shape()) {
      throw IoError("encoder checkpoint tensor " + name + " has shape " +
                    Tensor<float>::shape_string(src.shape()) + ", expected " +
                    Tensor<float>::shape_string(t.shape()));
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(src[i]);
  });
  if (meta_out) *meta_out = ck.meta;
  return enc;
}

}  // namespace latent_atlas
