#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "latent_atlas/dataset.hpp"
#include "latent_atlas/generator.hpp"

namespace latent_atlas {

/// Numerically stable softplus / sigmoid for the adversarial losses.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Mirror of the generator: a strided conv pyramid from the image back down
/// to the base resolution, then a linear head to one logit.
struct DiscriminatorConfig {
  int input_resolution = 32;
  int base_resolution = 4;
  std::vector<int> channels = {16, 32, 64, 64};  // stem width first

  static DiscriminatorConfig from_generator(const GeneratorConfig& g) {
    DiscriminatorConfig c;
    c.input_resolution = g.output_resolution;
    c.base_resolution = g.base_resolution;
    c.channels.assign(g.channels.rbegin(), g.channels.rend());
    return c;
  }

  int num_down_blocks() const { return static_cast<int>(channels.size()) - 1; }

  void validate() const {
    if (!is_power_of_two(input_resolution) || !is_power_of_two(base_resolution) ||
        base_resolution < 2 || input_resolution < base_resolution) {
      throw UsageError("discriminator config: resolutions must be powers of two with input >= base");
    }
    int downs = 0;
    for (int r = input_resolution; r > base_resolution; r /= 2) ++downs;
    if (num_down_blocks() != downs) {
      throw UsageError("discriminator config: need " + std::to_string(downs + 1) +
                       " channel counts for " + std::to_string(input_resolution) + "->" +
                       std::to_string(base_resolution) + ", got " +
                       std::to_string(channels.size()));
    }
    for (int c : channels) {
      if (c < 1) throw UsageError("discriminator config: channel counts must be positive");
    }
  }
};

template <typename T>
class Discriminator {
public:
  Discriminator() = default;

  static Discriminator random_init(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Discriminator d;
    d.cfg_ = cfg;
    Rng rng(derive_seed(seed, "discriminator-init"));
    d.convs_.push_back(nn::Conv2d<T>::he_init(3, cfg.channels[0], 3, 1, 1, rng));
    for (int k = 0; k < cfg.num_down_blocks(); ++k) {
      d.convs_.push_back(nn::Conv2d<T>::he_init(cfg.channels[static_cast<std::size_t>(k)],
                                                cfg.channels[static_cast<std::size_t>(k) + 1],
                                                3, 2, 1, rng));
    }
    const int flat = cfg.channels.back() * cfg.base_resolution * cfg.base_resolution;
    d.head_ = nn::Linear<T>::he_init(flat, 1, rng);
    return d;
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  std::vector<nn::Conv2d<T>>& convs() { return convs_; }
  nn::Linear<T>& head() { return head_; }

  struct Tape {
    std::vector<Tensor<T>> inputs;
    std::vector<Tensor<T>> acts;
    std::vector<nn::ConvWorkspace<T>> ws;
    Tensor<T> flat;
    Tensor<T> logits;  // [B, 1]
  };

  struct Grads {
    std::vector<nn::Conv2d<T>> convs;
    nn::Linear<T> head;

    void set_zero() {
      for (auto& c : convs) {
        c.weight.set_zero();
        c.bias.set_zero();
      }
      head.weight.set_zero();
      head.bias.set_zero();
    }
  };

  Grads make_grads() const {
    Grads g;
    for (const auto& c : convs_) g.convs.push_back(nn::Conv2d<T>::zeros_like(c));
    g.head = nn::Linear<T>::zeros_like(head_);
    return g;
  }

  /// x: [B, 3, R, R] -> logits [B, 1].
  const Tensor<T>& forward(const Tensor<T>& x, Tape& tape) const {
    const int r = cfg_.input_resolution;
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != r || x.dim(3) != r) {
      throw UsageError("discriminator: expected [B, 3, " + std::to_string(r) + ", " +
                       std::to_string(r) + "], got " + Tensor<T>::shape_string(x.shape()));
    }
    const std::size_t n = convs_.size();
    tape.inputs.resize(n);
    tape.acts.resize(n);
    tape.ws.resize(n);
    tape.inputs[0] = x;
    for (std::size_t k = 0; k < n; ++k) {
      nn::conv2d_forward(convs_[k], tape.inputs[k], tape.acts[k], tape.ws[k]);
      nn::leaky_relu_forward(tape.acts[k], tape.acts[k]);
      if (k + 1 < n) tape.inputs[k + 1] = tape.acts[k];
    }
    const Tensor<T>& last = tape.acts[n - 1];
    tape.flat = last.reshaped({last.dim(0), last.dim(1) * last.dim(2) * last.dim(3)});
    nn::linear_forward(head_, tape.flat, tape.logits);
    return tape.logits;
  }

  /// d_logits: [B, 1]. Accumulates into d_params (when given); dx receives
  /// the image gradient (when given).
  void backward(Tape& tape, const Tensor<T>& d_logits, Grads* d_params,
                Tensor<T>* dx = nullptr) const {
    const std::size_t n = convs_.size();
    nn::linear_backward(head_, tape.flat, d_logits, &dflat_,
                        d_params ? &d_params->head : nullptr);
    const Tensor<T>& last = tape.acts[n - 1];
    dcur_ = dflat_.reshaped(last.shape());
    for (std::size_t k = n; k-- > 0;) {
      nn::leaky_relu_backward(tape.acts[k], dcur_, dpre_);
      std::swap(dcur_, dpre_);
      const bool need_dx = k > 0 || dx != nullptr;
      nn::conv2d_backward(convs_[k], tape.inputs[k], dcur_, need_dx ? &dpre_ : nullptr,
                          d_params ? &d_params->convs[k] : nullptr, tape.ws[k]);
      std::swap(dcur_, dpre_);
    }
    if (dx) *dx = dcur_;
  }

private:
  DiscriminatorConfig cfg_;
  std::vector<nn::Conv2d<T>> convs_;
  nn::Linear<T> head_;
  mutable Tensor<T> dflat_, dcur_, dpre_;
};

// ---------------------------------------------------------------------------
// Adversarial training
// ---------------------------------------------------------------------------

struct GanTrainConfig {
  GeneratorConfig generator;
  int steps = 3000;
  int batch_size = 16;
  double lr_generator = 2e-3;
  double lr_discriminator = 2e-3;
  double beta1 = 0.0;   // momentum hurts adversarial dynamics at this scale
  double beta2 = 0.99;
  double drift = 1e-3;  // keeps real logits bounded without double backprop
  int dataset_size = 4096;
  std::uint64_t seed = 0;

  void validate() const {
    generator.validate();
    if (steps < 0) throw UsageError("gan training: steps must be >= 0");
    if (batch_size < 2) throw UsageError("gan training: batch size must be >= 2");
    if (lr_generator <= 0.0 || lr_discriminator <= 0.0) {
      throw UsageError("gan training: learning rates must be positive");
    }
    if (drift < 0.0) throw UsageError("gan training: drift must be >= 0");
    if (dataset_size < 1) throw UsageError("gan training: dataset size must be >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw UsageError("gan training: Adam betas must lie in [0, 1)");
    }
  }
};

inline nlohmann::json gan_train_config_to_json(const GanTrainConfig& c) {
  return nlohmann::json{{"generator", c.generator},
                        {"steps", c.steps},
                        {"batch_size", c.batch_size},
                        {"lr_generator", c.lr_generator},
                        {"lr_discriminator", c.lr_discriminator},
                        {"beta1", c.beta1},
                        {"beta2", c.beta2},
                        {"drift", c.drift},
                        {"dataset_size", c.dataset_size},
                        {"seed", c.seed}};
}

inline GanTrainConfig gan_train_config_from_json(const nlohmann::json& j) {
  GanTrainConfig c;
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_generator = j.value("lr_generator", c.lr_generator);
  c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.drift = j.value("drift", c.drift);
  c.dataset_size = j.value("dataset_size", c.dataset_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

struct GanStepRecord {
  int step = 0;  // 0-based
  double d_loss = 0.0;
  double g_loss = 0.0;
  double moment_gap = 0.0;  // |mean_fake - mean_real| + |std_fake - std_real|
};

template <typename T>
struct GanTrainResult {
  Generator<T> generator;
  Discriminator<T> discriminator;
  std::vector<GanStepRecord> curve;  // one record per step
};

namespace detail {

/// Pairs every generator parameter with its gradient buffer in one fixed
/// order for the optimizer.
template <typename T>
void collect_generator_params(Generator<T>& g, GeneratorGrads<T>& grads,
                              std::vector<Tensor<T>*>& params,
                              std::vector<const Tensor<T>*>& grad_ptrs) {
  params.clear();
  grad_ptrs.clear();
  auto pair = [&](Tensor<T>& p, const Tensor<T>& gr) {
    params.push_back(&p);
    grad_ptrs.push_back(&gr);
  };
  for (std::size_t i = 0; i < g.mapping().size(); ++i) {
    pair(g.mapping()[i].weight, grads.mapping[i].weight);
    pair(g.mapping()[i].bias, grads.mapping[i].bias);
  }
  pair(g.const_input(), grads.const_input);
  const int n = g.config().num_style_layers();
  for (int layer = 1; layer <= n; ++layer) {
    const auto li = static_cast<std::size_t>(layer);
    if (layer >= 2) {
      pair(g.convs()[li].weight, grads.convs[li].weight);
      pair(g.convs()[li].bias, grads.convs[li].bias);
    }
    pair(g.affines()[li].weight, grads.affines[li].weight);
    pair(g.affines()[li].bias, grads.affines[li].bias);
  }
  pair(g.to_rgb().weight, grads.to_rgb.weight);
  pair(g.to_rgb().bias, grads.to_rgb.bias);
}

template <typename T>
void tensor_moments(const Tensor<T>& x, double& mean, double& stddev) {
  double m = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) m += static_cast<double>(x[i]);
  m /= static_cast<double>(x.numel());
  double v = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - m;
    v += d * d;
  }
  mean = m;
  stddev = std::sqrt(v / static_cast<double>(x.numel()));
}

}  // namespace detail

/// Adversarial training of the style generator against the toy dataset:
/// non-saturating softplus losses, alternating per-step updates, a small
/// logit drift penalty on real scores as the stabilizer. Single-threaded
/// and fully seeded. Aborts with NumericError when a loss goes non-finite.
template <typename T>
GanTrainResult<T> train_generator(const ToyFaceDataset& data, const GanTrainConfig& cfg) {
  cfg.validate();
  if (data.resolution() != cfg.generator.output_resolution) {
    throw UsageError("gan training: dataset resolution " + std::to_string(data.resolution()) +
                     " does not match generator output " +
                     std::to_string(cfg.generator.output_resolution));
  }

  GanTrainResult<T> result;
  result.generator = Generator<T>::random_init(cfg.generator, cfg.seed);
  result.discriminator =
      Discriminator<T>::random_init(DiscriminatorConfig::from_generator(cfg.generator), cfg.seed);
  Generator<T>& g = result.generator;
  Discriminator<T>& d = result.discriminator;

  Rng rng(derive_seed(cfg.seed, "gan-train"));
  const int b = cfg.batch_size;
  const int dim = cfg.generator.latent_dim;
  const int res = cfg.generator.output_resolution;
  const int n_layers = cfg.generator.num_style_layers();

  GeneratorGrads<T> g_grads = g.make_grads();
  typename Discriminator<T>::Grads d_grads = d.make_grads();
  std::vector<Tensor<T>*> g_params;
  std::vector<const Tensor<T>*> g_grad_ptrs;
  detail::collect_generator_params(g, g_grads, g_params, g_grad_ptrs);

  nn::AdamOptimizer<T> opt_g(nn::AdamConfig{cfg.lr_generator, cfg.beta1, cfg.beta2, 1e-8});
  for (Tensor<T>* p : g_params) opt_g.register_param(p);
  nn::AdamOptimizer<T> opt_d(nn::AdamConfig{cfg.lr_discriminator, cfg.beta1, cfg.beta2, 1e-8});
  std::vector<const Tensor<T>*> d_grad_ptrs;
  for (std::size_t k = 0; k < d.convs().size(); ++k) {
    opt_d.register_param(&d.convs()[k].weight);
    opt_d.register_param(&d.convs()[k].bias);
    d_grad_ptrs.push_back(&d_grads.convs[k].weight);
    d_grad_ptrs.push_back(&d_grads.convs[k].bias);
  }
  opt_d.register_param(&d.head().weight);
  opt_d.register_param(&d.head().bias);
  d_grad_ptrs.push_back(&d_grads.head.weight);
  d_grad_ptrs.push_back(&d_grads.head.bias);

  MappingTape<T> map_tape;
  SynthesisTape<T> synth_tape(&g);
  typename Discriminator<T>::Tape tape_real, tape_fake;
  Tensor<T> z({b, dim});
  std::vector<Tensor<T>> styles(static_cast<std::size_t>(n_layers) + 1);
  Tensor<T> real({b, 3, res, res});
  Tensor<T> d_logits({b, 1});
  Tensor<T> d_image;
  std::vector<Tensor<T>> d_styles;
  Tensor<T> dw;

  result.curve.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    // Batches.
    for (int i = 0; i < b; ++i) {
      Tensor<T> s = sphere_sample<T>(dim, rng);
      std::copy(s.data(), s.data() + dim, z.data() + static_cast<std::int64_t>(i) * dim);
    }
    const Tensor<T>& w = map_tape.forward(g, z);
    for (int layer = 1; layer <= n_layers; ++layer) styles[static_cast<std::size_t>(layer)] = w;
    const Tensor<T>& fake = synth_tape.forward(styles);

    const std::int64_t img_sz = static_cast<std::int64_t>(3) * res * res;
    for (int i = 0; i < b; ++i) {
      const int idx = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cfg.dataset_size)));
      Tensor<float> img = data.image(idx);
      T* dst = real.data() + static_cast<std::int64_t>(i) * img_sz;
      for (std::int64_t j = 0; j < img_sz; ++j) dst[j] = static_cast<T>(img[j]);
    }

    GanStepRecord rec;
    rec.step = step;
    {
      double mf, sf, mr, sr;
      detail::tensor_moments(fake, mf, sf);
      detail::tensor_moments(real, mr, sr);
      rec.moment_gap = std::abs(mf - mr) + std::abs(sf - sr);
    }

    // Discriminator update (generator output treated as a constant).
    d.forward(real, tape_real);
    d.forward(fake, tape_fake);
    double d_loss = 0.0;
    d_grads.set_zero();
    for (int i = 0; i < b; ++i) {
      const double lr = static_cast<double>(tape_real.logits(i, 0));
      const double lf = static_cast<double>(tape_fake.logits(i, 0));
      d_loss += softplus(-lr) + softplus(lf) + cfg.drift * lr * lr;
      d_logits(i, 0) = static_cast<T>((-sigmoid(-lr) + 2.0 * cfg.drift * lr) /
                                      static_cast<double>(b));
    }
    d_loss /= static_cast<double>(b);
    d.backward(tape_real, d_logits, &d_grads, nullptr);
    for (int i = 0; i < b; ++i) {
      d_logits(i, 0) = static_cast<T>(sigmoid(static_cast<double>(tape_fake.logits(i, 0))) /
                                      static_cast<double>(b));
    }
    d.backward(tape_fake, d_logits, &d_grads, nullptr);
    opt_d.step(d_grad_ptrs);

    // Generator update against the refreshed discriminator.
    d.forward(fake, tape_fake);
    double g_loss = 0.0;
    for (int i = 0; i < b; ++i) {
      const double lf = static_cast<double>(tape_fake.logits(i, 0));
      g_loss += softplus(-lf);
      d_logits(i, 0) = static_cast<T>(-sigmoid(-lf) / static_cast<double>(b));
    }
    g_loss /= static_cast<double>(b);
    d.backward(tape_fake, d_logits, nullptr, &d_image);
    g_grads.set_zero();
    synth_tape.backward(d_image, d_styles, nullptr, &g_grads);
    if (!dw.same_shape(z)) dw = Tensor<T>(z.shape());
    dw.set_zero();
    for (int layer = 1; layer <= n_layers; ++layer) {
      axpy(dw, d_styles[static_cast<std::size_t>(layer)], T(1));
    }
    map_tape.backward(g, dw, nullptr, &g_grads.mapping);
    opt_g.step(g_grad_ptrs);

    rec.d_loss = d_loss;
    rec.g_loss = g_loss;
    if (!std::isfinite(d_loss) || !std::isfinite(g_loss)) {
      throw NumericError("gan training diverged at step " + std::to_string(step) +
                         " (loss not finite); lower the learning rates");
    }
    result.curve.push_back(rec);
  }
  g.invalidate_mean_w();
  return result;
}

/// Byte-stable training-curve CSV: step,d_loss,g_loss,moment_gap.
inline void write_gan_curve_csv(const std::filesystem::path& path,
                                const std::vector<GanStepRecord>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "step,d_loss,g_loss,moment_gap\n";
  char buf[128];
  for (const GanStepRecord& r : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", r.step, r.d_loss, r.g_loss,
                  r.moment_gap);
    out << buf;
  }
  if (!out.good()) throw IoError("failed writing " + path.string());
}

}  // namespace latent_atlas
