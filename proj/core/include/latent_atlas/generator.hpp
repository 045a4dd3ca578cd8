#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_atlas/nn.hpp"
#include "latent_atlas/spaces.hpp"
#include "latent_atlas/tensor.hpp"

namespace latent_atlas {

/// Architecture of the style-based generator. Resolutions double per block,
/// each block carries two style layers, so num_style_layers() == 2 * blocks.
/// split_layer is the layer whose conv input serves as the feature tap for
/// the hybrid latent spaces.
struct GeneratorConfig {
  int latent_dim = 64;
  int mapping_depth = 8;
  int base_resolution = 4;
  int output_resolution = 32;
  int split_layer = 3;
  std::vector<int> channels = {64, 64, 32, 16};

  int num_blocks() const { return static_cast<int>(channels.size()); }
  int num_style_layers() const { return 2 * num_blocks(); }

  /// Block index of a 1-based style layer.
  int block_of_layer(int layer) const { return (layer - 1) / 2; }
  int layer_channels(int layer) const { return channels[static_cast<std::size_t>(block_of_layer(layer))]; }
  int layer_resolution(int layer) const { return base_resolution << block_of_layer(layer); }

  /// Odd layers past the first open a new block and upsample their input.
  bool layer_upsamples(int layer) const { return layer >= 3 && (layer % 2) == 1; }

  int conv_in_channels(int layer) const {
    return layer_upsamples(layer) ? channels[static_cast<std::size_t>(block_of_layer(layer) - 1)]
                                  : layer_channels(layer);
  }

  /// Shape of the tensor entering split_layer's conv (the const input itself
  /// when split_layer == 1).
  std::vector<int> tap_shape() const {
    if (split_layer == 1) return {channels[0], base_resolution, base_resolution};
    return {conv_in_channels(split_layer), layer_resolution(split_layer),
            layer_resolution(split_layer)};
  }

  CodeLayout layout() const {
    return CodeLayout{latent_dim, num_style_layers(), split_layer, tap_shape()};
  }

  void validate() const;
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& cfg) {
  j = nlohmann::json{{"latent_dim", cfg.latent_dim},
                     {"mapping_depth", cfg.mapping_depth},
                     {"base_resolution", cfg.base_resolution},
                     {"output_resolution", cfg.output_resolution},
                     {"split_layer", cfg.split_layer},
                     {"channels", cfg.channels}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& cfg) {
  cfg = GeneratorConfig{};
  j.at("latent_dim").get_to(cfg.latent_dim);
  j.at("mapping_depth").get_to(cfg.mapping_depth);
  j.at("base_resolution").get_to(cfg.base_resolution);
  j.at("output_resolution").get_to(cfg.output_resolution);
  j.at("split_layer").get_to(cfg.split_layer);
  j.at("channels").get_to(cfg.channels);
}

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

inline void GeneratorConfig::validate() const {
  if (latent_dim < 2) throw UsageError("generator config: latent_dim must be >= 2");
  if (mapping_depth < 1) throw UsageError("generator config: mapping_depth must be >= 1");
  if (!is_power_of_two(base_resolution) || base_resolution < 2) {
    throw UsageError("generator config: base_resolution must be a power of two >= 2");
  }
  if (!is_power_of_two(output_resolution) || output_resolution < base_resolution) {
    throw UsageError("generator config: output_resolution must be a power of two >= base_resolution");
  }
  int blocks = 1;
  for (int r = base_resolution; r < output_resolution; r *= 2) ++blocks;
  if (static_cast<int>(channels.size()) != blocks) {
    throw UsageError("generator config: need " + std::to_string(blocks) +
                     " channel counts for " + std::to_string(base_resolution) + "->" +
                     std::to_string(output_resolution) + ", got " +
                     std::to_string(channels.size()));
  }
  for (int c : channels) {
    if (c < 1) throw UsageError("generator config: channel counts must be positive");
  }
  if (split_layer < 1 || split_layer > num_style_layers()) {
    throw UsageError("generator config: split_layer must lie in [1, " +
                     std::to_string(num_style_layers()) + "]");
  }
}

/// Gradient buffers mirroring the generator parameters.
template <typename T>
struct GeneratorGrads {
  std::vector<nn::Linear<T>> mapping;
  Tensor<T> const_input;
  std::vector<nn::Conv2d<T>> convs;    // index by layer, [0] and [1] unused
  std::vector<nn::Linear<T>> affines;  // index by layer, [0] unused
  nn::Conv2d<T> to_rgb;

  void set_zero() {
    for (auto& l : mapping) { l.weight.set_zero(); l.bias.set_zero(); }
    const_input.set_zero();
    for (auto& c : convs) {
      if (!c.weight.empty()) { c.weight.set_zero(); c.bias.set_zero(); }
    }
    for (auto& a : affines) {
      if (!a.weight.empty()) { a.weight.set_zero(); a.bias.set_zero(); }
    }
    to_rgb.weight.set_zero();
    to_rgb.bias.set_zero();
  }
};

template <typename T>
class SynthesisTape;

/// Style-based generator: an FC mapping network z -> w and a synthesis
/// network driven by per-layer style modulation. Layers are 1-based; each
/// layer is conv (layer 1: a learned const) -> bias -> LeakyReLU ->
/// instance norm -> style modulation, with nearest-neighbor upsampling at
/// the start of every block past the first and a tanh RGB head at the end.
template <typename T>
class Generator {
public:
  Generator() = default;

  static Generator random_init(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Generator g;
    g.cfg_ = cfg;
    Rng rng(derive_seed(seed, "generator-init"));
    const int n = cfg.num_style_layers();
    g.mapping_.reserve(static_cast<std::size_t>(cfg.mapping_depth));
    for (int i = 0; i < cfg.mapping_depth; ++i) {
      g.mapping_.push_back(nn::Linear<T>::he_init(cfg.latent_dim, cfg.latent_dim, rng));
    }
    g.const_input_ = Tensor<T>::full({cfg.channels[0], cfg.base_resolution, cfg.base_resolution}, T(1));
    g.convs_.resize(static_cast<std::size_t>(n) + 1);
    g.affines_.resize(static_cast<std::size_t>(n) + 1);
    for (int layer = 1; layer <= n; ++layer) {
      if (layer >= 2) {
        g.convs_[static_cast<std::size_t>(layer)] = nn::Conv2d<T>::he_init(
            cfg.conv_in_channels(layer), cfg.layer_channels(layer), 3, 1, 1, rng);
      }
      // Style affine: scale offsets start near zero so modulation is gentle
      // at init (weight std 0.25/sqrt(d) instead of the He default).
      nn::Linear<T> affine;
      affine.weight = Tensor<T>::gaussian({2 * cfg.layer_channels(layer), cfg.latent_dim},
                                          rng, 0.25 / std::sqrt(static_cast<double>(cfg.latent_dim)));
      affine.bias = Tensor<T>::zeros({2 * cfg.layer_channels(layer)});
      g.affines_[static_cast<std::size_t>(layer)] = std::move(affine);
    }
    g.to_rgb_ = nn::Conv2d<T>::he_init(cfg.channels.back(), 3, 1, 1, 0, rng);
    return g;
  }

  const GeneratorConfig& config() const { return cfg_; }

  /// Runs the mapping network on a batch of latents [B, d] -> [B, d].
  Tensor<T> map_latent_batch(const Tensor<T>& z) const;

  /// Maps a single latent [d] -> [d].
  Tensor<T> map_latent(const Tensor<T>& z) const;

  /// Expands a latent code into the N per-layer style vectors [1, d] the
  /// synthesis network consumes. Z-flavored entries go through the mapping
  /// network; broadcast codes repeat across their layer range. For hybrid
  /// codes only layers split_layer..N are populated.
  std::vector<Tensor<T>> expand_styles(const LatentCode<T>& code) const;

  /// Synthesizes the image for a latent code in any supported space.
  Tensor<T> synthesize(const LatentCode<T>& code) const;

  /// Feature map entering split_layer for a standalone code (the value a
  /// hybrid code's base is initialized from or compared against).
  Tensor<T> feature_tap(const LatentCode<T>& code) const;

  /// Mean mapped latent over a fixed bank of sphere samples. Computed once
  /// and cached; used to initialize W-flavored optimization.
  const Tensor<T>& mean_w() const;

  /// Calls fn(name, tensor) over every parameter in checkpoint order.
  template <typename F>
  void visit_parameters(F&& fn) { visit_impl(*this, fn); }
  template <typename F>
  void visit_parameters(F&& fn) const { visit_impl(*this, fn); }

  GeneratorGrads<T> make_grads() const {
    GeneratorGrads<T> g;
    g.mapping.resize(mapping_.size());
    for (std::size_t i = 0; i < mapping_.size(); ++i) g.mapping[i] = nn::Linear<T>::zeros_like(mapping_[i]);
    g.const_input = Tensor<T>::zeros(const_input_.shape());
    g.convs.resize(convs_.size());
    g.affines.resize(affines_.size());
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      if (!convs_[i].weight.empty()) g.convs[i] = nn::Conv2d<T>::zeros_like(convs_[i]);
    }
    for (std::size_t i = 0; i < affines_.size(); ++i) {
      if (!affines_[i].weight.empty()) g.affines[i] = nn::Linear<T>::zeros_like(affines_[i]);
    }
    g.to_rgb = nn::Conv2d<T>::zeros_like(to_rgb_);
    return g;
  }

  // Parameter access for tapes, training and tests.
  std::vector<nn::Linear<T>>& mapping() { return mapping_; }
  const std::vector<nn::Linear<T>>& mapping() const { return mapping_; }
  Tensor<T>& const_input() { return const_input_; }
  const Tensor<T>& const_input() const { return const_input_; }
  std::vector<nn::Conv2d<T>>& convs() { return convs_; }
  const std::vector<nn::Conv2d<T>>& convs() const { return convs_; }
  std::vector<nn::Linear<T>>& affines() { return affines_; }
  const std::vector<nn::Linear<T>>& affines() const { return affines_; }
  nn::Conv2d<T>& to_rgb() { return to_rgb_; }
  const nn::Conv2d<T>& to_rgb() const { return to_rgb_; }

  void set_config(const GeneratorConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
  }
  void invalidate_mean_w() { mean_w_ = Tensor<T>(); }

private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& fn) {
    for (std::size_t i = 0; i < self.mapping_.size(); ++i) {
      fn("mapping." + std::to_string(i) + ".weight", self.mapping_[i].weight);
      fn("mapping." + std::to_string(i) + ".bias", self.mapping_[i].bias);
    }
    fn(std::string("const_input"), self.const_input_);
    const int n = self.cfg_.num_style_layers();
    for (int layer = 1; layer <= n; ++layer) {
      const auto li = static_cast<std::size_t>(layer);
      if (layer >= 2) {
        fn("layer." + std::to_string(layer) + ".conv.weight", self.convs_[li].weight);
        fn("layer." + std::to_string(layer) + ".conv.bias", self.convs_[li].bias);
      }
      fn("layer." + std::to_string(layer) + ".affine.weight", self.affines_[li].weight);
      fn("layer." + std::to_string(layer) + ".affine.bias", self.affines_[li].bias);
    }
    fn(std::string("to_rgb.weight"), self.to_rgb_.weight);
    fn(std::string("to_rgb.bias"), self.to_rgb_.bias);
  }

  GeneratorConfig cfg_;
  std::vector<nn::Linear<T>> mapping_;
  Tensor<T> const_input_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::Linear<T>> affines_;
  nn::Conv2d<T> to_rgb_;
  mutable Tensor<T> mean_w_;
};

/// Records the activations of a mapping-network forward pass so the pass can
/// be differentiated. Reusable across calls; buffers are recycled.
template <typename T>
class MappingTape {
public:
  /// z: [B, d]. Returns w: [B, d] (owned by the tape).
  const Tensor<T>& forward(const Generator<T>& g, const Tensor<T>& z) {
    const auto& layers = g.mapping();
    acts_.resize(layers.size() + 1);
    acts_[0] = z;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      nn::linear_forward(layers[k], acts_[k], pre_);
      nn::leaky_relu_forward(pre_, acts_[k + 1]);
    }
    return acts_.back();
  }

  const Tensor<T>& output() const { return acts_.back(); }

  /// dw: [B, d]. dz (optional) receives the input gradient; dmapping
  /// (optional) accumulates parameter gradients.
  void backward(const Generator<T>& g, const Tensor<T>& dw, Tensor<T>* dz,
                std::vector<nn::Linear<T>>* dmapping) {
    const auto& layers = g.mapping();
    dcur_ = dw;
    for (std::size_t k = layers.size(); k-- > 0;) {
      nn::leaky_relu_backward(acts_[k + 1], dcur_, dpre_);
      nn::Linear<T>* dp = dmapping ? &(*dmapping)[k] : nullptr;
      const bool need_dx = k > 0 || dz != nullptr;
      nn::linear_backward(layers[k], acts_[k], dpre_, need_dx ? &dcur_ : nullptr, dp);
    }
    if (dz) *dz = dcur_;
  }

private:
  std::vector<Tensor<T>> acts_;
  Tensor<T> pre_, dcur_, dpre_;
};

/// Records one synthesis forward pass (from the const input or from an
/// injected tap feature) for exact reverse-mode differentiation. A tape is
/// bound to one generator and recycles all intermediate buffers, so repeated
/// forward/backward pairs do not allocate.
template <typename T>
class SynthesisTape {
public:
  explicit SynthesisTape(const Generator<T>* g) : g_(g) { resize_slots(); }

  /// Full synthesis. styles[i] is the [B, d] style for layer i (1-based);
  /// styles must have N+1 entries with [0] ignored.
  const Tensor<T>& forward(const std::vector<Tensor<T>>& styles) {
    return run(styles, 1, nullptr);
  }

  /// Synthesis starting at split_layer with the tap replaced by f [B,c,h,w].
  const Tensor<T>& forward_from_tap(const Tensor<T>& f, const std::vector<Tensor<T>>& styles) {
    return run(styles, g_->config().split_layer, &f);
  }

  const Tensor<T>& image() const { return image_; }

  /// Tensor that entered split_layer's conv. Only meaningful after a full
  /// forward().
  const Tensor<T>& tap() const { return conv_in_[static_cast<std::size_t>(g_->config().split_layer)]; }

  /// Backpropagates d_image through the recorded pass.
  /// d_styles: resized to N+1 entries; layers below the start layer are left
  /// empty. d_base: gradient w.r.t. the injected tap (from_tap passes only).
  /// d_params: optional accumulation of parameter gradients (const input
  /// gradient lands here on full passes).
  void backward(const Tensor<T>& d_image, std::vector<Tensor<T>>& d_styles,
                Tensor<T>* d_base, GeneratorGrads<T>* d_params) {
    const GeneratorConfig& cfg = g_->config();
    const int n = cfg.num_style_layers();
    d_styles.assign(static_cast<std::size_t>(n) + 1, Tensor<T>());

    nn::tanh_backward(image_, d_image, dcur_);
    nn::Conv2d<T>* d_rgb = d_params ? &d_params->to_rgb : nullptr;
    nn::conv2d_backward(g_->to_rgb(), layer_out_[static_cast<std::size_t>(n)], dcur_,
                        &dx_, d_rgb, rgb_ws_);
    std::swap(dcur_, dx_);

    for (int layer = n; layer >= start_layer_; --layer) {
      const auto li = static_cast<std::size_t>(layer);
      nn::Linear<T>* d_aff = d_params ? &d_params->affines[li] : nullptr;
      nn::style_mod_backward(g_->affines()[li], style_ctx_[li], dcur_, dx_,
                             &d_styles[li], d_aff);
      nn::instance_norm_backward(in_ctx_[li], dx_, dcur_);
      nn::leaky_relu_backward(lrelu_out_[li], dcur_, dx_);
      if (layer == start_layer_ && from_tap_) {
        if (layer == 1) {
          if (d_base) *d_base = dx_;
          return;
        }
        nn::Conv2d<T>* d_conv = d_params ? &d_params->convs[li] : nullptr;
        nn::conv2d_backward(g_->convs()[li], conv_in_[li], dx_,
                            d_base, d_conv, conv_ws_[li]);
        return;
      }
      if (layer == 1) {
        if (d_params) {
          // The const input is shared across the batch: sum item gradients.
          const std::int64_t sz = d_params->const_input.numel();
          for (int b = 0; b < batch_; ++b) {
            for (std::int64_t i = 0; i < sz; ++i) {
              d_params->const_input[i] += dx_[static_cast<std::int64_t>(b) * sz + i];
            }
          }
        }
        return;
      }
      nn::Conv2d<T>* d_conv = d_params ? &d_params->convs[li] : nullptr;
      nn::conv2d_backward(g_->convs()[li], conv_in_[li], dx_, &dcur_, d_conv, conv_ws_[li]);
      if (cfg.layer_upsamples(layer)) {
        nn::upsample2_backward(dcur_, dx_);
        std::swap(dcur_, dx_);
      }
    }
  }

private:
  void resize_slots() {
    const auto slots = static_cast<std::size_t>(g_->config().num_style_layers()) + 1;
    conv_in_.resize(slots);
    lrelu_out_.resize(slots);
    in_ctx_.resize(slots);
    style_ctx_.resize(slots);
    layer_out_.resize(slots);
    conv_ws_.resize(slots);
  }

  const Tensor<T>& run(const std::vector<Tensor<T>>& styles, int start, const Tensor<T>* base) {
    const GeneratorConfig& cfg = g_->config();
    const int n = cfg.num_style_layers();
    if (static_cast<int>(styles.size()) != n + 1) {
      throw UsageError("synthesis: styles must have num_style_layers + 1 entries");
    }
    start_layer_ = start;
    from_tap_ = base != nullptr;
    batch_ = styles[static_cast<std::size_t>(start)].dim(0);

    for (int layer = start; layer <= n; ++layer) {
      const auto li = static_cast<std::size_t>(layer);
      const Tensor<T>& style = styles[li];
      if (style.rank() != 2 || style.dim(0) != batch_ || style.dim(1) != cfg.latent_dim) {
        throw UsageError("synthesis: style for layer " + std::to_string(layer) +
                         " must be [batch, latent_dim]");
      }
      // Conv input.
      if (layer == start) {
        if (from_tap_) {
          const std::vector<int> want = cfg.tap_shape();
          if (base->rank() != 4 || base->dim(0) != batch_ || base->dim(1) != want[0] ||
              base->dim(2) != want[1] || base->dim(3) != want[2]) {
            throw UsageError("synthesis: tap feature shape mismatch, expected [batch, " +
                             Tensor<T>::shape_string(want) + "]");
          }
          conv_in_[li] = *base;
        } else {
          broadcast_const(conv_in_[1]);
        }
      } else if (cfg.layer_upsamples(layer)) {
        nn::upsample2_forward(layer_out_[li - 1], conv_in_[li]);
      } else {
        conv_in_[li] = layer_out_[li - 1];
      }
      // Layer body (layer 1 has no conv: the const / injected tap feeds the
      // epilogue directly).
      if (layer == 1) {
        nn::leaky_relu_forward(conv_in_[1], lrelu_out_[1]);
      } else {
        nn::conv2d_forward(g_->convs()[li], conv_in_[li], pre_, conv_ws_[li]);
        nn::leaky_relu_forward(pre_, lrelu_out_[li]);
      }
      nn::instance_norm_forward(lrelu_out_[li], normed_, in_ctx_[li]);
      nn::style_mod_forward(g_->affines()[li], style, normed_, layer_out_[li], style_ctx_[li]);
    }
    nn::conv2d_forward(g_->to_rgb(), layer_out_[static_cast<std::size_t>(n)], pre_, rgb_ws_);
    nn::tanh_forward(pre_, image_);
    return image_;
  }

  void broadcast_const(Tensor<T>& out) {
    const Tensor<T>& c = g_->const_input();
    const std::int64_t sz = c.numel();
    std::vector<int> shape = {batch_, c.dim(0), c.dim(1), c.dim(2)};
    if (out.shape() != shape) out = Tensor<T>(shape);
    for (int b = 0; b < batch_; ++b) {
      std::copy(c.data(), c.data() + sz, out.data() + static_cast<std::int64_t>(b) * sz);
    }
  }

  const Generator<T>* g_;
  int start_layer_ = 1;
  int batch_ = 1;
  bool from_tap_ = false;
  std::vector<Tensor<T>> conv_in_, lrelu_out_, layer_out_;
  std::vector<nn::InstanceNormCtx<T>> in_ctx_;
  std::vector<nn::StyleModCtx<T>> style_ctx_;
  std::vector<nn::ConvWorkspace<T>> conv_ws_;
  nn::ConvWorkspace<T> rgb_ws_;
  Tensor<T> pre_, normed_, image_, dcur_, dx_;
};

// ---------------------------------------------------------------------------
// Generator methods that need the tapes
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> Generator<T>::map_latent_batch(const Tensor<T>& z) const {
  if (z.rank() != 2 || z.dim(1) != cfg_.latent_dim) {
    throw UsageError("map_latent: expected [batch, latent_dim] input");
  }
  MappingTape<T> tape;
  return tape.forward(*this, z);
}

template <typename T>
Tensor<T> Generator<T>::map_latent(const Tensor<T>& z) const {
  if (z.rank() != 1 || z.dim(0) != cfg_.latent_dim) {
    throw UsageError("map_latent: expected a latent_dim vector");
  }
  Tensor<T> batched = z.reshaped({1, cfg_.latent_dim});
  Tensor<T> w = map_latent_batch(batched);
  return w.reshaped({cfg_.latent_dim});
}

template <typename T>
std::vector<Tensor<T>> Generator<T>::expand_styles(const LatentCode<T>& code) const {
  validate_code(code, cfg_.layout());
  const int n = cfg_.num_style_layers();
  const int m = cfg_.split_layer;
  const int first = is_hybrid(code.space) ? m : 1;
  std::vector<Tensor<T>> styles(static_cast<std::size_t>(n) + 1);

  auto to_style = [&](const Tensor<T>& entry) {
    Tensor<T> row = entry.reshaped({1, cfg_.latent_dim});
    if (is_z_flavored(code.space)) return map_latent_batch(row);
    return row;
  };

  if (code.entries.size() == 1) {
    Tensor<T> s = to_style(code.entries[0]);
    for (int layer = first; layer <= n; ++layer) styles[static_cast<std::size_t>(layer)] = s;
  } else {
    for (int layer = first; layer <= n; ++layer) {
      styles[static_cast<std::size_t>(layer)] =
          to_style(code.entries[static_cast<std::size_t>(layer - first)]);
    }
  }
  return styles;
}

template <typename T>
Tensor<T> Generator<T>::synthesize(const LatentCode<T>& code) const {
  std::vector<Tensor<T>> styles = expand_styles(code);
  SynthesisTape<T> tape(this);
  Tensor<T> img;
  if (is_hybrid(code.space)) {
    std::vector<int> shape = code.base.shape();
    shape.insert(shape.begin(), 1);
    img = tape.forward_from_tap(code.base.reshaped(shape), styles);
  } else {
    img = tape.forward(styles);
  }
  std::vector<int> squeezed(img.shape().begin() + 1, img.shape().end());
  return img.reshaped(squeezed);
}

template <typename T>
Tensor<T> Generator<T>::feature_tap(const LatentCode<T>& code) const {
  if (is_hybrid(code.space)) {
    throw UsageError("feature_tap: hybrid codes already carry their base feature");
  }
  std::vector<Tensor<T>> styles = expand_styles(code);
  SynthesisTape<T> tape(this);
  tape.forward(styles);
  const Tensor<T>& t = tape.tap();
  std::vector<int> squeezed(t.shape().begin() + 1, t.shape().end());
  Tensor<T> out = t;
  return out.reshaped(squeezed);
}

template <typename T>
const Tensor<T>& Generator<T>::mean_w() const {
  if (!mean_w_.empty()) return mean_w_;
  constexpr int kSamples = 8192;
  constexpr std::uint64_t kMeanWSeed = 0x5ca1ab1e;
  Rng rng(derive_seed(kMeanWSeed, "mean-w"));
  const int d = cfg_.latent_dim;
  const int chunk = 256;
  Tensor<T> z({chunk, d});
  std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
  MappingTape<T> tape;
  for (int done = 0; done < kSamples; done += chunk) {
    for (int b = 0; b < chunk; ++b) {
      Tensor<T> s = sphere_sample<T>(d, rng);
      std::copy(s.data(), s.data() + d, z.data() + static_cast<std::int64_t>(b) * d);
    }
    const Tensor<T>& w = tape.forward(*this, z);
    for (int b = 0; b < chunk; ++b) {
      for (int i = 0; i < d; ++i) {
        acc[static_cast<std::size_t>(i)] += static_cast<double>(w(b, i));
      }
    }
  }
  mean_w_ = Tensor<T>({d});
  for (int i = 0; i < d; ++i) {
    mean_w_(i) = static_cast<T>(acc[static_cast<std::size_t>(i)] / kSamples);
  }
  return mean_w_;
}

/// Draws a fresh code in a standalone space. W-flavored samples are mapped
/// sphere samples. Hybrid spaces cannot be sampled (their codes come from
/// inversion) and raise a usage error.
template <typename T>
LatentCode<T> sample_code(const Generator<T>& g, Space space, Rng& rng) {
  if (is_hybrid(space)) {
    throw UsageError(std::string("sample: hybrid space ") + space_name(space) +
                     " has no prior to sample from (hybrid codes come from inversion)");
  }
  const GeneratorConfig& cfg = g.config();
  const int d = cfg.latent_dim;
  LatentCode<T> code;
  code.space = space;
  const int count = is_per_layer(space) ? cfg.num_style_layers() : 1;
  for (int i = 0; i < count; ++i) {
    Tensor<T> z = sphere_sample<T>(d, rng);
    code.entries.push_back(is_z_flavored(space) ? std::move(z) : g.map_latent(z));
  }
  return code;
}

/// Test/demo helper: fabricates an on-manifold hybrid code by pairing the
/// tap of a fresh standalone sample with detail codes sharing its first
/// entry, so the result reproduces a real generator output.
template <typename T>
LatentCode<T> make_hybrid_sample(const Generator<T>& g, Space space, Rng& rng) {
  if (!is_hybrid(space)) throw UsageError("make_hybrid_sample: expected a hybrid space");
  const GeneratorConfig& cfg = g.config();
  const int d = cfg.latent_dim;
  LatentCode<T> code;
  code.space = space;

  Tensor<T> z0 = sphere_sample<T>(d, rng);
  LatentCode<T> seed_code;
  seed_code.space = Space::kZ;
  seed_code.entries.push_back(z0);
  code.base = g.feature_tap(seed_code);

  const int details = space == Space::kFZ ? 1 : cfg.layout().num_detail_layers();
  for (int i = 0; i < details; ++i) {
    Tensor<T> z = i == 0 ? z0 : sphere_sample<T>(d, rng);
    code.entries.push_back(is_z_flavored(space) ? std::move(z) : g.map_latent(z));
  }
  return code;
}

}  // namespace latent_atlas
