#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "latent_atlas/encoder.hpp"
#include "latent_atlas/generator.hpp"
#include "latent_atlas/perceptual.hpp"
#include "latent_atlas/spaces.hpp"
#include "latent_atlas/whitening.hpp"

namespace latent_atlas {

struct InversionConfig {
  Space space = Space::kFZPlus;
  int iterations = 1200;
  double step_size = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda_per = 10.0;
  double lambda_reg = 10.0;
  double lambda_pn = 1e-3;  // only consulted for f/w+pn
  int record_every = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) throw UsageError("inversion: iterations must be >= 1");
    if (step_size <= 0.0) throw UsageError("inversion: step size must be positive");
    if (lambda_per < 0.0 || lambda_reg < 0.0 || lambda_pn < 0.0) {
      throw UsageError("inversion: loss weights must be non-negative");
    }
    if (record_every < 1) throw UsageError("inversion: record_every must be >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw UsageError("inversion: Adam betas must lie in [0, 1)");
    }
  }
};

struct LossBreakdown {
  double mse = 0.0;
  double perceptual = 0.0;  // unweighted
  double reg = 0.0;         // unweighted
  double pn = 0.0;          // unweighted
  double total = 0.0;
};

struct LossRecord {
  int iteration = 0;  // 1-based
  LossBreakdown loss;
  // max over Z-flavored entries of | |e| - sqrt(d) |, measured after the
  // iteration's retraction; 0 for W-flavored codes.
  double norm_deviation = 0.0;
};

template <typename T>
struct InversionResult {
  LatentCode<T> code;
  Tensor<T> reconstruction;  // [3, R, R], fresh forward of `code`
  std::vector<LossRecord> curve;
  LossBreakdown final_loss;  // evaluated at `code` after the last step
  double wall_seconds = 0.0;
  bool diverged = false;
  std::string error;  // set when diverged
};

/// Gradients of the weighted total objective w.r.t. one code's tensors.
template <typename T>
struct CodeGrads {
  std::vector<Tensor<T>> entries;
  Tensor<T> base;  // hybrid spaces only
};

// ---------------------------------------------------------------------------
// Objective pieces
// ---------------------------------------------------------------------------

/// Mean squared pixel error over channels and pixels, images in [-1, 1].
template <typename T>
double mean_squared_error(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mean_squared_error");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return acc / static_cast<double>(a.numel());
}

/// Mean squared difference between a base feature map and its anchor f0.
template <typename T>
double base_regularizer(const Tensor<T>& f, const Tensor<T>& f0) {
  check_same_shape(f, f0, "base_regularizer");
  return mean_squared_error(f, f0);
}

/// {mse, perceptual, total = mse + lambda_per * perceptual} for a code.
template <typename T>
LossBreakdown reconstruction_loss(const Generator<T>& g, const FeatureExtractor<T>& fx,
                                  const LatentCode<T>& code, const Tensor<T>& target,
                                  double lambda_per) {
  LossBreakdown out;
  Tensor<T> image = g.synthesize(code);
  out.mse = mean_squared_error(image, target);
  out.perceptual = perceptual_distance(fx, image, target);
  out.total = out.mse + lambda_per * out.perceptual;
  return out;
}

namespace detail {

/// Layer -> entry wiring for one code layout.
struct StyleWiring {
  int first_layer = 1;        // lowest styled layer (split layer for hybrids)
  std::vector<int> entry_of;  // index: layer, value: entry index
};

inline StyleWiring style_wiring(Space space, const CodeLayout& layout) {
  StyleWiring w;
  const int n = layout.num_style_layers;
  w.first_layer = is_hybrid(space) ? layout.split_layer : 1;
  w.entry_of.assign(static_cast<std::size_t>(n) + 1, -1);
  for (int layer = w.first_layer; layer <= n; ++layer) {
    int entry = 0;
    if (is_per_layer(space)) {
      entry = is_hybrid(space) ? layer - layout.split_layer : layer - 1;
    }
    w.entry_of[static_cast<std::size_t>(layer)] = entry;
  }
  return w;
}

}  // namespace detail

/// Evaluates the full inversion objective for one fixed target, optionally
/// with analytic gradients w.r.t. every optimized tensor. One instance owns
/// the forward/backward tapes and the cached target features, so repeated
/// calls (the optimization loop) do not reallocate. The same evaluation path
/// serves the optimizer, the standalone objective helpers and the gradient
/// tests.
template <typename T>
class ObjectiveEvaluator {
public:
  /// f0 anchors the base regularizer (required for hybrid spaces); the
  /// whitener is required for f/w+pn.
  ObjectiveEvaluator(const Generator<T>* g, const FeatureExtractor<T>* fx,
                     const Tensor<T>& target, const InversionConfig& cfg,
                     const Tensor<T>* f0 = nullptr, const PnWhitener* whitener = nullptr)
      : g_(g), fx_(fx), cfg_(cfg), layout_(g->config().layout()), tape_(g) {
    cfg_.validate();
    const int res = g_->config().output_resolution;
    if (target.shape() != std::vector<int>{3, res, res}) {
      throw UsageError("objective: target must be [3, " + std::to_string(res) + ", " +
                       std::to_string(res) + "], got " +
                       Tensor<T>::shape_string(target.shape()));
    }
    if (is_hybrid(cfg_.space)) {
      if (!f0) throw UsageError("objective: hybrid space needs the anchor f0");
      if (f0->shape() != layout_.tap_shape) {
        throw UsageError("objective: f0 shape does not match the generator tap");
      }
      f0_ = *f0;
    } else if (f0) {
      throw UsageError("objective: f0 given for a non-hybrid space");
    }
    if (has_pn_penalty(cfg_.space)) {
      if (!whitener || !whitener->fitted()) {
        throw UsageError("objective: f/w+pn needs a fitted whitener");
      }
      whitener_ = whitener;
    }
    target4_ = target.reshaped({1, 3, res, res});
    targets_ = perceptual_targets(*fx_, target);
    wiring_ = detail::style_wiring(cfg_.space, layout_);
    styles_.resize(static_cast<std::size_t>(layout_.num_style_layers) + 1);
  }

  const InversionConfig& config() const { return cfg_; }
  const Tensor<T>& f0() const { return f0_; }

  /// Weighted total and its parts at `code`; when grads is non-null it
  /// receives d(total)/d(entry k) and, for hybrids, d(total)/d(base).
  LossBreakdown evaluate(const LatentCode<T>& code, CodeGrads<T>* grads) {
    if (code.space != cfg_.space) {
      throw UsageError("objective: code space does not match the configured space");
    }
    validate_code(code, layout_);
    const int d = layout_.latent_dim;
    const int n_layers = layout_.num_style_layers;
    const int num_entries = static_cast<int>(code.entries.size());
    const bool hybrid = is_hybrid(cfg_.space);
    const bool z_flavored = is_z_flavored(cfg_.space);

    // Entries -> per-layer styles.
    if (packed_.shape() != std::vector<int>{num_entries, d}) {
      packed_ = Tensor<T>({num_entries, d});
    }
    for (int k = 0; k < num_entries; ++k) {
      std::copy(code.entries[static_cast<std::size_t>(k)].data(),
                code.entries[static_cast<std::size_t>(k)].data() + d,
                packed_.data() + static_cast<std::int64_t>(k) * d);
    }
    const Tensor<T>* source = &packed_;
    if (z_flavored) source = &map_tape_.forward(*g_, packed_);
    for (int layer = wiring_.first_layer; layer <= n_layers; ++layer) {
      const int k = wiring_.entry_of[static_cast<std::size_t>(layer)];
      Tensor<T>& slot = styles_[static_cast<std::size_t>(layer)];
      if (slot.shape() != std::vector<int>{1, d}) slot = Tensor<T>({1, d});
      const T* src = source->data() + static_cast<std::int64_t>(k) * d;
      std::copy(src, src + d, slot.data());
    }

    const Tensor<T>* image = nullptr;
    if (hybrid) {
      base4_ = code.base.reshaped({1, layout_.tap_shape[0], layout_.tap_shape[1],
                                   layout_.tap_shape[2]});
      image = &tape_.forward_from_tap(base4_, styles_);
    } else {
      image = &tape_.forward(styles_);
    }

    // Loss parts and d(loss)/d(image).
    LossBreakdown loss;
    const std::int64_t numel = image->numel();
    if (!d_img_.same_shape(*image)) d_img_ = Tensor<T>(image->shape());
    double mse = 0.0;
    for (std::int64_t i = 0; i < numel; ++i) {
      const double diff = static_cast<double>((*image)[i]) - static_cast<double>(target4_[i]);
      mse += diff * diff;
      d_img_[i] = static_cast<T>(2.0 * diff / static_cast<double>(numel));
    }
    loss.mse = mse / static_cast<double>(numel);

    fx_->forward(*image, fx_tape_);
    loss.perceptual = perceptual_loss_grad<T>(fx_tape_, targets_, d_acts_);
    if (hybrid) loss.reg = base_regularizer(code.base, f0_);
    if (whitener_) {
      loss.pn = pn_density_penalty(code.entries, *whitener_, grads ? &pn_grads_ : nullptr);
    }
    loss.total = loss.mse + cfg_.lambda_per * loss.perceptual +
                 cfg_.lambda_reg * loss.reg + cfg_.lambda_pn * loss.pn;
    if (!grads) return loss;

    // Backward.
    fx_->backward(fx_tape_, d_acts_, dx_per_);
    axpy(d_img_, dx_per_, static_cast<T>(cfg_.lambda_per));
    tape_.backward(d_img_, d_styles_, hybrid ? &d_base4_ : nullptr, nullptr);

    if (!d_source_.same_shape(packed_)) d_source_ = Tensor<T>(packed_.shape());
    d_source_.set_zero();
    for (int layer = wiring_.first_layer; layer <= n_layers; ++layer) {
      const int k = wiring_.entry_of[static_cast<std::size_t>(layer)];
      const Tensor<T>& ds = d_styles_[static_cast<std::size_t>(layer)];
      T* dst = d_source_.data() + static_cast<std::int64_t>(k) * d;
      for (int i = 0; i < d; ++i) dst[i] += ds[i];
    }
    if (z_flavored) {
      map_tape_.backward(*g_, d_source_, &d_packed_, nullptr);
    } else {
      d_packed_ = d_source_;
    }

    grads->entries.resize(static_cast<std::size_t>(num_entries));
    for (int k = 0; k < num_entries; ++k) {
      Tensor<T>& eg = grads->entries[static_cast<std::size_t>(k)];
      if (eg.shape() != std::vector<int>{d}) eg = Tensor<T>({d});
      std::copy(d_packed_.data() + static_cast<std::int64_t>(k) * d,
                d_packed_.data() + static_cast<std::int64_t>(k + 1) * d, eg.data());
      if (whitener_) {
        axpy(eg, pn_grads_[static_cast<std::size_t>(k)], static_cast<T>(cfg_.lambda_pn));
      }
    }
    if (hybrid) {
      grads->base = d_base4_.reshaped(layout_.tap_shape);
      // d(lambda_reg * mean((f - f0)^2))/df = 2 lambda_reg (f - f0) / count.
      const double scale = 2.0 * cfg_.lambda_reg / static_cast<double>(code.base.numel());
      for (std::int64_t i = 0; i < code.base.numel(); ++i) {
        grads->base[i] += static_cast<T>(scale * (static_cast<double>(code.base[i]) -
                                                  static_cast<double>(f0_[i])));
      }
    }
    return loss;
  }

private:
  const Generator<T>* g_;
  const FeatureExtractor<T>* fx_;
  InversionConfig cfg_;
  CodeLayout layout_;
  detail::StyleWiring wiring_;
  const PnWhitener* whitener_ = nullptr;
  Tensor<T> f0_, target4_;
  PerceptualTargets<T> targets_;

  SynthesisTape<T> tape_;
  MappingTape<T> map_tape_;
  typename FeatureExtractor<T>::Tape fx_tape_;
  std::vector<Tensor<T>> styles_, d_styles_, d_acts_, pn_grads_;
  Tensor<T> packed_, d_img_, dx_per_, d_source_, d_packed_, base4_, d_base4_;
};

/// Full objective at one code: reconstruction + lambda_reg * base
/// regularizer (hybrid) + lambda_pn * whitened-density penalty (f/w+pn).
template <typename T>
LossBreakdown total_objective(const Generator<T>& g, const FeatureExtractor<T>& fx,
                              const LatentCode<T>& code, const Tensor<T>& target,
                              const Tensor<T>* f0, const PnWhitener* whitener,
                              const InversionConfig& cfg) {
  InversionConfig c = cfg;
  c.space = code.space;
  ObjectiveEvaluator<T> eval(&g, &fx, target, c, f0, whitener);
  return eval.evaluate(code, nullptr);
}

// ---------------------------------------------------------------------------
// Optimization loop
// ---------------------------------------------------------------------------

/// Inverts `target` into cfg.space by first-order optimization: Adam on all
/// code tensors, Z-flavored entries retracted to the sqrt(d) sphere after
/// every step. Hybrid bases start from encoder(target) when an encoder is
/// given, otherwise from zeros; detail entries start from fresh samples;
/// standalone W codes start from the generator's mean w. A non-finite loss
/// aborts with the partial curve and the last finite code.
template <typename T>
InversionResult<T> invert(const Generator<T>& g, const FeatureExtractor<T>& fx,
                          const Tensor<T>& target, const InversionConfig& cfg,
                          const Encoder<T>* encoder = nullptr,
                          const PnWhitener* whitener = nullptr) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const GeneratorConfig& gcfg = g.config();
  const CodeLayout layout = gcfg.layout();
  const int d = gcfg.latent_dim;

  Rng rng(derive_seed(cfg.seed, "invert"));
  const bool hybrid = is_hybrid(cfg.space);
  const bool z_flavored = is_z_flavored(cfg.space);

  // --- Initialization ------------------------------------------------------
  LatentCode<T> code;
  code.space = cfg.space;
  const int num_entries = code.expected_entries(layout);
  if (z_flavored) {
    for (int i = 0; i < num_entries; ++i) code.entries.push_back(sphere_sample<T>(d, rng));
  } else if (hybrid) {
    // Fresh mapped samples for W-flavored detail codes.
    for (int i = 0; i < num_entries; ++i) {
      code.entries.push_back(g.map_latent(sphere_sample<T>(d, rng)));
    }
  } else {
    // Standalone W / W+: start at the mapping network's mean output.
    for (int i = 0; i < num_entries; ++i) code.entries.push_back(g.mean_w());
  }
  Tensor<T> f0;
  if (hybrid) {
    f0 = encoder ? encoder->encode(target) : Tensor<T>::zeros(layout.tap_shape);
    code.base = f0;
  }
  validate_code(code, layout);

  ObjectiveEvaluator<T> objective(&g, &fx, target, cfg, hybrid ? &f0 : nullptr, whitener);

  nn::AdamOptimizer<T> opt(nn::AdamConfig{cfg.step_size, cfg.beta1, cfg.beta2, 1e-8});
  for (auto& e : code.entries) opt.register_param(&e);
  if (hybrid) opt.register_param(&code.base);

  const double sqrt_d = std::sqrt(static_cast<double>(d));
  CodeGrads<T> grads;
  std::vector<const Tensor<T>*> grad_ptrs;

  InversionResult<T> result;
  result.code = code;  // last finite snapshot

  for (int it = 1; it <= cfg.iterations; ++it) {
    const LossBreakdown loss = objective.evaluate(code, &grads);
    if (!std::isfinite(loss.total)) {
      result.diverged = true;
      result.error = "loss not finite at iteration " + std::to_string(it);
      break;
    }

    grad_ptrs.clear();
    for (auto& eg : grads.entries) grad_ptrs.push_back(&eg);
    if (hybrid) grad_ptrs.push_back(&grads.base);
    opt.step(grad_ptrs);

    // Projected-gradient retraction, after the update, every iteration.
    double deviation = 0.0;
    if (z_flavored) {
      for (auto& e : code.entries) {
        retract_inplace(e);
        deviation = std::max(deviation, std::abs(e.norm() - sqrt_d));
      }
    }

    result.code = code;
    if ((it - 1) % cfg.record_every == 0) {
      LossRecord rec;
      rec.iteration = it;
      rec.loss = loss;
      rec.norm_deviation = deviation;
      result.curve.push_back(rec);
    }
  }

  // Fresh forward at the final (or last finite) code.
  result.final_loss = objective.evaluate(result.code, nullptr);
  result.reconstruction = g.synthesize(result.code);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace latent_atlas
