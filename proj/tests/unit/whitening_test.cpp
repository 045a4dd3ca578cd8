#include <filesystem>
#include <random>

#include <doctest.h>

#include "latent_atlas/whitening.hpp"
#include "support/grad_check.hpp"
#include "support/test_configs.hpp"

using namespace latent_atlas;
using test_support::grad_rel_err;
using test_support::numeric_grad;

namespace {

// Correlated Gaussian sample matrix with a known mean.
Eigen::MatrixXd correlated_samples(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) mix(i, j) = 0.25 * rng.gaussian();
    mix(i, i) += 1.0;
  }
  Eigen::VectorXd mu(d);
  for (int i = 0; i < d; ++i) mu(i) = rng.uniform(-1.0, 1.0);
  Eigen::MatrixXd out(n, d);
  for (int r = 0; r < n; ++r) {
    Eigen::VectorXd g(d);
    for (int i = 0; i < d; ++i) g(i) = rng.gaussian();
    out.row(r) = (mix * g + mu).transpose();
  }
  return out;
}

}  // namespace

TEST_SUITE("pn whitener") {
  TEST_CASE("training-set statistics are exactly whitened") {
    const int d = 6, n = 400;
    Eigen::MatrixXd samples = correlated_samples(n, d, 21);
    PnWhitener wh = PnWhitener::fit(samples);
    CHECK(wh.fitted());
    CHECK(wh.dim() == d);
    CHECK(wh.fitted_count() == n);

    // The fitted mean maps to zero.
    Eigen::VectorXd mean = samples.colwise().mean();
    CHECK(wh.transform(mean).norm() < 1e-6);

    // Whitened training set: zero mean, identity covariance.
    Eigen::MatrixXd q(n, d);
    for (int r = 0; r < n; ++r) q.row(r) = wh.transform(samples.row(r)).transpose();
    Eigen::VectorXd qmean = q.colwise().mean();
    CHECK(qmean.lpNorm<Eigen::Infinity>() < 1e-9);
    Eigen::MatrixXd centered = q.rowwise() - qmean.transpose();
    Eigen::MatrixXd cov = centered.adjoint() * centered / static_cast<double>(n - 1);
    CHECK((cov - Eigen::MatrixXd::Identity(d, d)).norm() < 1e-9);

    // Components come out in descending variance order.
    for (int i = 1; i < d; ++i) CHECK(wh.scales()(i - 1) >= wh.scales()(i));
  }

  TEST_CASE("held-out samples from the same law are nearly white") {
    const int d = 6;
    Eigen::MatrixXd all = correlated_samples(12000, d, 22);
    PnWhitener wh = PnWhitener::fit(all.topRows(6000));
    Eigen::MatrixXd held = all.bottomRows(6000);
    Eigen::MatrixXd q(held.rows(), d);
    for (int r = 0; r < held.rows(); ++r) q.row(r) = wh.transform(held.row(r)).transpose();
    Eigen::VectorXd qmean = q.colwise().mean();
    CHECK(qmean.lpNorm<Eigen::Infinity>() < 1e-1);
    Eigen::MatrixXd centered = q.rowwise() - qmean.transpose();
    Eigen::MatrixXd cov = centered.adjoint() * centered / static_cast<double>(q.rows() - 1);
    CHECK((cov - Eigen::MatrixXd::Identity(d, d)).norm() / d < 5e-2);
  }

  TEST_CASE("transform and inverse_transform are mutually inverse") {
    const int d = 5;
    PnWhitener wh = PnWhitener::fit(correlated_samples(200, d, 23));
    Rng rng(24);
    for (int t = 0; t < 50; ++t) {
      Eigen::VectorXd p(d);
      for (int i = 0; i < d; ++i) p(i) = 3.0 * rng.gaussian();
      Eigen::VectorXd back = wh.inverse_transform(wh.transform(p));
      CHECK((back - p).lpNorm<Eigen::Infinity>() < 1e-5);
      Eigen::VectorXd q(d);
      for (int i = 0; i < d; ++i) q(i) = rng.gaussian();
      CHECK((wh.transform(wh.inverse_transform(q)) - q).lpNorm<Eigen::Infinity>() < 1e-5);
    }
  }

  TEST_CASE("degenerate data is rejected") {
    Eigen::MatrixXd collapsed = correlated_samples(100, 4, 25);
    collapsed.col(2) = collapsed.col(1);  // rank-deficient covariance
    CHECK_THROWS_AS(PnWhitener::fit(collapsed), NumericError);
    CHECK_THROWS_AS(PnWhitener::fit(correlated_samples(30, 4, 26)), UsageError);  // too few rows
  }

  TEST_CASE("fit is invariant to sample order") {
    const int d = 5, n = 300;
    Eigen::MatrixXd samples = correlated_samples(n, d, 27);
    PnWhitener a = PnWhitener::fit(samples);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::mt19937 shuffler(99);
    std::shuffle(perm.begin(), perm.end(), shuffler);
    Eigen::MatrixXd shuffled(n, d);
    for (int i = 0; i < n; ++i) shuffled.row(i) = samples.row(perm[i]);
    PnWhitener b = PnWhitener::fit(shuffled);
    CHECK((a.mean() - b.mean()).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((a.scales() - b.scales()).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((a.basis() - b.basis()).lpNorm<Eigen::Infinity>() < 1e-6);
  }

  TEST_CASE("save and load reproduce the transform") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "latent_atlas_whitener_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const int d = 5;
    PnWhitener wh = PnWhitener::fit(correlated_samples(200, d, 28));
    wh.save(dir / "w");
    PnWhitener back = PnWhitener::load(dir / "w");
    Rng rng(29);
    for (int t = 0; t < 10; ++t) {
      Eigen::VectorXd p(d);
      for (int i = 0; i < d; ++i) p(i) = rng.gaussian();
      // float32 storage: expect agreement at float precision, not double.
      CHECK((wh.transform(p) - back.transform(p)).lpNorm<Eigen::Infinity>() < 1e-4);
    }
    CHECK_THROWS_AS(PnWhitener::load(dir / "missing"), IoError);
  }
}

TEST_SUITE("pn density penalty") {
  TEST_CASE("is zero exactly at the activated mean") {
    const int d = 5;
    PnWhitener wh = PnWhitener::fit(correlated_samples(250, d, 41));
    Tensor<double> w({d});
    for (int i = 0; i < d; ++i) {
      // activate is the inverse of the deactivation applied inside the
      // penalty, so this entry lands exactly on the fitted mean.
      const double m = wh.mean()(i);
      w(i) = m >= 0.0 ? m : m * 0.2;
    }
    CHECK(pn_density_penalty<double>({w}, wh) < 1e-12);
  }

  TEST_CASE("matches a scalar-loop reimplementation and averages entries") {
    const int d = 4;
    PnWhitener wh = PnWhitener::fit(correlated_samples(200, d, 42));
    Rng rng(43);
    std::vector<Tensor<double>> entries;
    for (int k = 0; k < 3; ++k) {
      Tensor<double> w({d});
      for (int i = 0; i < d; ++i) w(i) = rng.gaussian();
      entries.push_back(std::move(w));
    }
    double expected = 0.0;
    for (const auto& w : entries) {
      Eigen::VectorXd p(d);
      for (int i = 0; i < d; ++i) p(i) = w[i] >= 0.0 ? w[i] : w[i] / 0.2;
      Eigen::VectorXd diff = p - wh.mean();
      for (int c = 0; c < d; ++c) {
        double coord = 0.0;
        for (int i = 0; i < d; ++i) coord += wh.basis()(i, c) * diff(i);
        coord /= wh.scales()(c);
        expected += coord * coord;
      }
    }
    expected /= static_cast<double>(entries.size());
    CHECK(pn_density_penalty(entries, wh) == doctest::Approx(expected).epsilon(1e-9));
  }

  TEST_CASE("gradients match finite differences") {
    const int d = 4;
    PnWhitener wh = PnWhitener::fit(correlated_samples(200, d, 44));
    Rng rng(45);
    std::vector<Tensor<double>> entries;
    for (int k = 0; k < 2; ++k) {
      Tensor<double> w({d});
      // keep coordinates away from the lrelu kink where the FD is one-sided
      for (int i = 0; i < d; ++i) {
        double v = rng.gaussian();
        if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
        w(i) = v;
      }
      entries.push_back(std::move(w));
    }
    std::vector<Tensor<double>> grads;
    pn_density_penalty(entries, wh, &grads);
    for (std::size_t k = 0; k < entries.size(); ++k) {
      auto loss = [&] { return pn_density_penalty(entries, wh); };
      for (int i = 0; i < d; ++i) {
        const double num = numeric_grad(entries[k], i, 1e-6, loss);
        CHECK(grad_rel_err(grads[k][i], num) < 1e-5);
      }
    }
  }

  TEST_CASE("rejects unfitted whiteners and dimension mismatches") {
    PnWhitener empty;
    Tensor<double> w({3});
    CHECK_THROWS_AS(pn_density_penalty<double>({w}, empty), UsageError);
    PnWhitener wh = PnWhitener::fit(correlated_samples(200, 4, 46));
    CHECK_THROWS_AS(pn_density_penalty<double>({w}, wh), UsageError);
    CHECK_THROWS_AS(pn_density_penalty(std::vector<Tensor<double>>{}, wh), UsageError);
  }

  TEST_CASE("generator-backed fit runs end to end") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 47);
    const int d = g.config().latent_dim;
    PnWhitener wh = fit_pn_whitener(g, 10 * d, 48);
    CHECK(wh.dim() == d);
    CHECK_THROWS_AS(fit_pn_whitener(g, 10 * d - 1, 48), UsageError);
  }
}
