#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "latent_atlas/generator.hpp"
#include "latent_atlas/spaces.hpp"

namespace latent_atlas {

/// PCA whitener over deactivated mapped latents (the P space). transform
/// maps p to coordinates with zero mean and identity covariance on the
/// fitting set; inverse_transform is exact. All math in double.
class PnWhitener {
public:
  PnWhitener() = default;

  /// Fits on samples given as rows. Requires rows >= 10 * cols; throws
  /// NumericError when the covariance is numerically rank-deficient.
  static PnWhitener fit(const Eigen::MatrixXd& samples);

  bool fitted() const { return mean_.size() > 0; }
  int dim() const { return static_cast<int>(mean_.size()); }
  std::int64_t fitted_count() const { return fitted_count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& basis() const { return basis_; }    // orthonormal columns
  const Eigen::VectorXd& scales() const { return scales_; }  // component stddevs

  Eigen::VectorXd transform(const Eigen::VectorXd& p) const;
  Eigen::VectorXd inverse_transform(const Eigen::VectorXd& q) const;

  /// Stored via the shared manifest+blob checkpoint plumbing.
  void save(const std::filesystem::path& dir) const;
  static PnWhitener load(const std::filesystem::path& dir);

private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd scales_;
  std::int64_t fitted_count_ = 0;
};

/// Mean over entries of the squared norm of the whitened, deactivated code.
/// When grads is non-null it receives d(penalty)/d(entry) per entry
/// (computed in double, cast to T).
template <typename T>
double pn_density_penalty(const std::vector<Tensor<T>>& entries, const PnWhitener& wh,
                          std::vector<Tensor<T>>* grads = nullptr) {
  if (!wh.fitted()) throw UsageError("pn_density_penalty: whitener is not fitted");
  if (entries.empty()) throw UsageError("pn_density_penalty: no code entries");
  const int d = wh.dim();
  const auto count = static_cast<double>(entries.size());
  if (grads) grads->assign(entries.size(), Tensor<T>());

  double total = 0.0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Tensor<T>& w = entries[k];
    if (w.numel() != d) {
      throw UsageError("pn_density_penalty: entry dimension " + std::to_string(w.numel()) +
                       " does not match whitener dimension " + std::to_string(d));
    }
    Eigen::VectorXd p(d);
    for (int i = 0; i < d; ++i) {
      const double wi = static_cast<double>(w[i]);
      p(i) = wi >= 0.0 ? wi : wi / nn::kLeakySlope;
    }
    const Eigen::VectorXd q = wh.transform(p);
    total += q.squaredNorm();
    if (grads) {
      // d|q|^2/dp = 2 V S^-1 q, then the deactivation slope per coordinate.
      Eigen::VectorXd dp = 2.0 * (wh.basis() * wh.scales().cwiseInverse().cwiseProduct(q));
      Tensor<T> gw({d});
      for (int i = 0; i < d; ++i) {
        const double slope = static_cast<double>(w[i]) >= 0.0 ? 1.0 : 1.0 / nn::kLeakySlope;
        gw(i) = static_cast<T>(dp(i) * slope / count);
      }
      (*grads)[k] = std::move(gw);
    }
  }
  return total / count;
}

/// Samples the sphere, maps through the generator, deactivates, and fits.
template <typename T>
PnWhitener fit_pn_whitener(const Generator<T>& g, int num_samples, std::uint64_t seed) {
  const int d = g.config().latent_dim;
  if (num_samples < 10 * d) {
    throw UsageError("fit_pn_whitener: need at least 10*latent_dim samples, got " +
                     std::to_string(num_samples));
  }
  Rng rng(derive_seed(seed, "pn-whitener"));
  Eigen::MatrixXd samples(num_samples, d);
  const int chunk = 256;
  Tensor<T> z({chunk, d});
  MappingTape<T> tape;
  int done = 0;
  while (done < num_samples) {
    const int take = std::min(chunk, num_samples - done);
    if (take != z.dim(0)) z = Tensor<T>({take, d});  // final partial chunk
    for (int b = 0; b < take; ++b) {
      Tensor<T> s = sphere_sample<T>(d, rng);
      std::copy(s.data(), s.data() + d, z.data() + static_cast<std::int64_t>(b) * d);
    }
    const Tensor<T>& w = tape.forward(g, z);
    for (int b = 0; b < take; ++b) {
      for (int i = 0; i < d; ++i) {
        const double wi = static_cast<double>(w(b, i));
        samples(done + b, i) = wi >= 0.0 ? wi : wi / nn::kLeakySlope;
      }
    }
    done += take;
  }
  return PnWhitener::fit(samples);
}

}  // namespace latent_atlas
