#include "latent_atlas/whitening.hpp"

#include "latent_atlas/checkpoint.hpp"
#include "latent_atlas/errors.hpp"

namespace latent_atlas {

PnWhitener PnWhitener::fit(const Eigen::MatrixXd& samples) {
  const auto n = samples.rows();
  const auto d = samples.cols();
  if (n < 10 * d) {
    throw UsageError("PnWhitener::fit: need at least 10*dim samples, got " +
                     std::to_string(n) + " for dim " + std::to_string(d));
  }

  PnWhitener wh;
  wh.mean_ = samples.colwise().mean();
  Eigen::MatrixXd centered = samples.rowwise() - wh.mean_.transpose();
  Eigen::MatrixXd cov = (centered.adjoint() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw NumericError("PnWhitener::fit: eigendecomposition failed");
  }
  // Eigen returns eigenvalues ascending; store components in descending
  // variance order with a canonical sign (largest-magnitude coordinate
  // positive) so fits are reproducible up to permutation of ties.
  Eigen::VectorXd evals = solver.eigenvalues().reverse();
  Eigen::MatrixXd basis(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::VectorXd col = solver.eigenvectors().col(d - 1 - k);
    Eigen::Index imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    if (col(imax) < 0.0) col = -col;
    basis.col(k) = col;
  }

  const double max_eval = evals(0);
  if (!(max_eval > 0.0)) {
    throw NumericError("PnWhitener::fit: covariance has no positive variance");
  }
  if (evals(d - 1) <= 1e-12 * max_eval) {
    throw NumericError(
        "PnWhitener::fit: rank-deficient covariance (smallest/largest eigenvalue ratio " +
        std::to_string(evals(d - 1) / max_eval) + ")");
  }

  wh.basis_ = std::move(basis);
  wh.scales_ = evals.cwiseSqrt();
  wh.fitted_count_ = n;
  return wh;
}

Eigen::VectorXd PnWhitener::transform(const Eigen::VectorXd& p) const {
  if (!fitted()) throw UsageError("PnWhitener::transform: whitener is not fitted");
  if (p.size() != mean_.size()) {
    throw UsageError("PnWhitener::transform: dimension mismatch");
  }
  return scales_.cwiseInverse().cwiseProduct(basis_.transpose() * (p - mean_));
}

Eigen::VectorXd PnWhitener::inverse_transform(const Eigen::VectorXd& q) const {
  if (!fitted()) throw UsageError("PnWhitener::inverse_transform: whitener is not fitted");
  if (q.size() != mean_.size()) {
    throw UsageError("PnWhitener::inverse_transform: dimension mismatch");
  }
  return basis_ * scales_.cwiseProduct(q) + mean_;
}

void PnWhitener::save(const std::filesystem::path& dir) const {
  if (!fitted()) throw UsageError("PnWhitener::save: whitener is not fitted");
  const int d = dim();
  Checkpoint ckpt;
  ckpt.format = kWhitenerCheckpointFormat;
  ckpt.meta = {{"dim", d}, {"fitted_count", fitted_count_}};

  Tensor<float> mean({d}), scales({d}), basis({d, d});
  for (int i = 0; i < d; ++i) {
    mean(i) = static_cast<float>(mean_(i));
    scales(i) = static_cast<float>(scales_(i));
    for (int j = 0; j < d; ++j) basis(i, j) = static_cast<float>(basis_(i, j));
  }
  ckpt.add("mean", std::move(mean));
  ckpt.add("basis", std::move(basis));
  ckpt.add("scales", std::move(scales));
  save_checkpoint(dir, ckpt);
}

PnWhitener PnWhitener::load(const std::filesystem::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir, kWhitenerCheckpointFormat);
  const Tensor<float>& mean = ckpt.tensor("mean");
  const Tensor<float>& basis = ckpt.tensor("basis");
  const Tensor<float>& scales = ckpt.tensor("scales");
  const int d = mean.dim(0);
  if (basis.shape() != std::vector<int>{d, d} || scales.shape() != std::vector<int>{d}) {
    throw IoError("whitener checkpoint " + dir.string() + " has inconsistent shapes");
  }

  PnWhitener wh;
  wh.mean_.resize(d);
  wh.scales_.resize(d);
  wh.basis_.resize(d, d);
  for (int i = 0; i < d; ++i) {
    wh.mean_(i) = mean(i);
    wh.scales_(i) = scales(i);
    if (!(wh.scales_(i) > 0.0)) {
      throw IoError("whitener checkpoint " + dir.string() + " has non-positive scales");
    }
    for (int j = 0; j < d; ++j) wh.basis_(i, j) = basis(i, j);
  }
  wh.fitted_count_ = ckpt.meta.value("fitted_count", std::int64_t{0});
  return wh;
}

}  // namespace latent_atlas
