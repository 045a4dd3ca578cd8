#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "latent_atlas/editing.hpp"
#include "latent_atlas/encoder.hpp"
#include "latent_atlas/inversion.hpp"
#include "latent_atlas/report.hpp"

namespace latent_atlas {

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace detail {

/// 7-tap Gaussian window, sigma 1.5, normalized to sum 1.
inline const std::array<double, 7>& ssim_window() {
  static const std::array<double, 7> win = [] {
    std::array<double, 7> k{};
    double sum = 0.0;
    for (int i = 0; i < 7; ++i) {
      const double x = static_cast<double>(i - 3);
      k[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
      sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
  }();
  return win;
}

/// Valid-region separable blur: h x w -> (h-6) x (w-6). `tmp` holds the
/// horizontal pass (h rows, w-6 columns).
inline void ssim_blur(const std::vector<double>& src, int h, int w,
                      std::vector<double>& tmp, std::vector<double>& dst) {
  const auto& win = ssim_window();
  const int wv = w - 6;
  const int hv = h - 6;
  tmp.assign(static_cast<std::size_t>(h) * wv, 0.0);
  dst.assign(static_cast<std::size_t>(hv) * wv, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wv; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 7; ++k) {
        acc += win[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y) * w + x + k];
      }
      tmp[static_cast<std::size_t>(y) * wv + x] = acc;
    }
  }
  for (int y = 0; y < hv; ++y) {
    for (int x = 0; x < wv; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 7; ++k) {
        acc += win[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * wv + x];
      }
      dst[static_cast<std::size_t>(y) * wv + x] = acc;
    }
  }
}

}  // namespace detail

/// Structural similarity between two [C, H, W] images in [-1, 1]. Images are
/// rescaled to [0, 1], local statistics use a 7x7 Gaussian window (sigma 1.5)
/// over the valid region, stabilizers K1 = 0.01 and K2 = 0.03. The per-pixel
/// map is averaged over the valid region and then over channels. All
/// arithmetic is double; ssim(a, a) == 1 and ssim(a, b) == ssim(b, a).
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "ssim");
  if (a.rank() != 3) throw UsageError("ssim expects [C, H, W] images");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h < 7 || w < 7) throw UsageError("ssim needs images of at least 7x7 pixels");

  constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1 after rescale
  constexpr double kC2 = 0.03 * 0.03;

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
  std::vector<double> tmp, mu_a, mu_b, m_aa, m_bb, m_ab;

  double total = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    const T* ra = &a(ch, 0, 0);
    const T* rb = &b(ch, 0, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      const double xa = (static_cast<double>(ra[i]) + 1.0) * 0.5;
      const double xb = (static_cast<double>(rb[i]) + 1.0) * 0.5;
      pa[i] = xa;
      pb[i] = xb;
      paa[i] = xa * xa;
      pbb[i] = xb * xb;
      pab[i] = xa * xb;
    }
    detail::ssim_blur(pa, h, w, tmp, mu_a);
    detail::ssim_blur(pb, h, w, tmp, mu_b);
    detail::ssim_blur(paa, h, w, tmp, m_aa);
    detail::ssim_blur(pbb, h, w, tmp, m_bb);
    detail::ssim_blur(pab, h, w, tmp, m_ab);

    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = m_aa[i] - ma * ma;
      const double vb = m_bb[i] - mb * mb;
      const double cov = m_ab[i] - ma * mb;
      // Products are grouped so the expression is bitwise symmetric in a, b.
      const double num = (2.0 * (ma * mb) + kC1) * (2.0 * cov + kC2);
      const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(c);
}

// ---------------------------------------------------------------------------
// Reconstruction benchmark
// ---------------------------------------------------------------------------

struct BenchmarkConfig {
  std::vector<Space> spaces = all_spaces();
  InversionConfig inversion;  // `space` and `seed` are overridden per cell
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const {
    if (spaces.empty()) throw UsageError("benchmark: need at least one space");
    if (jobs < 1) throw UsageError("benchmark: jobs must be >= 1");
    inversion.validate();
  }
};

/// Inverts every target into every configured space and measures the
/// reconstruction. Cells are independent: each derives its own inversion seed
/// from (cfg.seed, target index, space), so results do not depend on the
/// worker count. A cell that throws or diverges is recorded as failed with
/// its message and the run continues. Cell order is targets-major with spaces
/// in the configured order.
template <typename T>
EvalReport reconstruction_benchmark(const Generator<T>& g, const FeatureExtractor<T>& fx,
                                    const std::vector<Tensor<T>>& targets,
                                    const BenchmarkConfig& cfg,
                                    const Encoder<T>* encoder = nullptr,
                                    const PnWhitener* whitener = nullptr) {
  cfg.validate();
  if (targets.empty()) throw UsageError("benchmark: need at least one target");

  EvalReport report;
  report.config = {
      {"targets", targets.size()},
      {"seed", cfg.seed},
      {"iterations", cfg.inversion.iterations},
      {"step_size", cfg.inversion.step_size},
      {"lambda_per", cfg.inversion.lambda_per},
      {"lambda_reg", cfg.inversion.lambda_reg},
      {"lambda_pn", cfg.inversion.lambda_pn},
  };
  for (Space s : cfg.spaces) report.config["spaces"].push_back(space_name(s));

  const std::size_t n_cells = targets.size() * cfg.spaces.size();
  report.cells.resize(n_cells);

  auto run_cell = [&](std::size_t idx) {
    const std::size_t ti = idx / cfg.spaces.size();
    const Space space = cfg.spaces[idx % cfg.spaces.size()];
    ReconCell& cell = report.cells[idx];
    cell.target_id = static_cast<int>(ti);
    cell.space = space;
    try {
      InversionConfig icfg = cfg.inversion;
      icfg.space = space;
      icfg.seed = derive_seed(cfg.seed, "cell/" + std::to_string(ti) + "/" + space_name(space));
      InversionResult<T> res = invert(g, fx, targets[ti], icfg, encoder, whitener);
      if (res.diverged) {
        cell.failed = true;
        cell.error = res.error.empty() ? "inversion diverged" : res.error;
        return;
      }
      cell.mse = mean_squared_error(res.reconstruction, targets[ti]);
      cell.ssim = ssim(res.reconstruction, targets[ti]);
      cell.perceptual = perceptual_distance(fx, res.reconstruction, targets[ti]);
      cell.wall_s = res.wall_seconds;
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
    }
  };

  const int workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), n_cells));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_cells; ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n_cells; i = next.fetch_add(1)) {
          run_cell(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return report;
}

// ---------------------------------------------------------------------------
// Editing sweeps
// ---------------------------------------------------------------------------

/// Symmetric intensity grid over [-limit, limit]; `steps` must be odd so the
/// grid contains exactly 0.
std::vector<double> alpha_grid(double limit = 2.0, int steps = 11);

/// Applies each direction to `code` at every intensity and compares the
/// edited render against the unedited one: identity similarity (higher is
/// better) and perceptual distance (lower is better). At alpha == 0 the edit
/// is the identity, so id_sim is 1 and perceptual is 0 up to rounding.
template <typename T>
std::vector<SweepPoint> editing_sweep(const Generator<T>& g, const IdentityMetric<T>& id_metric,
                                      const FeatureExtractor<T>& fx, int target_id,
                                      const LatentCode<T>& code,
                                      const std::vector<Direction>& directions,
                                      const std::vector<double>& alphas) {
  if (directions.empty()) throw UsageError("editing sweep: need at least one direction");
  if (alphas.empty()) throw UsageError("editing sweep: need at least one intensity");

  const Tensor<T> reference = g.synthesize(code);
  const std::vector<double> ref_emb = id_metric.embed(reference);

  std::vector<SweepPoint> sweep;
  sweep.reserve(directions.size() * alphas.size());
  for (const Direction& dir : directions) {
    for (double alpha : alphas) {
      const LatentCode<T> edited = apply_edit(code, dir, alpha);
      const Tensor<T> image = g.synthesize(edited);
      SweepPoint p;
      p.target_id = target_id;
      p.space = code.space;
      p.direction = dir.name;
      p.alpha = alpha;
      p.id_sim = cosine_similarity(ref_emb, id_metric.embed(image));
      p.perceptual = perceptual_distance(fx, image, reference);
      sweep.push_back(std::move(p));
    }
  }
  return sweep;
}

}  // namespace latent_atlas
