#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "latent_atlas/tensor.hpp"

namespace test_support {

using latent_atlas::Tensor;

/// Central finite difference of loss() w.r.t. param[i].
inline double numeric_grad(Tensor<double>& param, std::int64_t i, double eps,
                           const std::function<double()>& loss) {
  const double v0 = param[i];
  param[i] = v0 + eps;
  const double lp = loss();
  param[i] = v0 - eps;
  const double lm = loss();
  param[i] = v0;
  return (lp - lm) / (2.0 * eps);
}

inline double grad_rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

/// Max relative error between `analytic` and central differences of loss()
/// over every element of `param`. loss() must recompute from param's
/// current contents.
inline double max_grad_error(Tensor<double>& param, const Tensor<double>& analytic,
                             const std::function<double()>& loss, double eps = 1e-5) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    const double num = numeric_grad(param, i, eps, loss);
    worst = std::max(worst, grad_rel_err(analytic[i], num));
  }
  return worst;
}

/// Fixed pseudo-random probe: loss(y) = sum(probe ⊙ y). Its gradient w.r.t.
/// y is the probe itself, which exercises every output element.
inline double probe_loss(const Tensor<double>& probe, const Tensor<double>& y) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) acc += probe[i] * y[i];
  return acc;
}

}  // namespace test_support
