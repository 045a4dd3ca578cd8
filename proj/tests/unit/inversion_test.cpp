#include <doctest.h>

#include "latent_atlas/inversion.hpp"
#include "support/grad_check.hpp"
#include "support/test_configs.hpp"

using namespace latent_atlas;

namespace {

Tensor<double> random_image(int res, Rng& rng) {
  Tensor<double> img({3, res, res});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(-1.0, 1.0);
  return img;
}

}  // namespace

TEST_SUITE("objective pieces") {
  TEST_CASE("mean_squared_error is the per-element mean") {
    Tensor<double> a({2, 2}), b({2, 2});
    a(0, 0) = 1.0; a(0, 1) = 0.0; a(1, 0) = -1.0; a(1, 1) = 2.0;
    b(0, 0) = 0.0; b(0, 1) = 0.0; b(1, 0) = 1.0; b(1, 1) = 2.0;
    CHECK(mean_squared_error(a, b) == doctest::Approx((1.0 + 4.0) / 4.0).epsilon(1e-15));
    Tensor<double> c({3});
    CHECK_THROWS_AS(mean_squared_error(a, c), UsageError);
  }

  TEST_CASE("base_regularizer is quadratic in the offset") {
    Rng rng(101);
    Tensor<double> f0({4, 3, 3});
    for (std::int64_t i = 0; i < f0.numel(); ++i) f0[i] = rng.gaussian();
    CHECK(base_regularizer(f0, f0) == 0.0);

    Tensor<double> f = f0;
    for (std::int64_t i = 0; i < f.numel(); ++i) f[i] += 0.3;
    CHECK(base_regularizer(f, f0) == doctest::Approx(0.09).epsilon(1e-12));

    Tensor<double> u({4, 3, 3});
    double usq = 0.0;
    for (std::int64_t i = 0; i < u.numel(); ++i) {
      u[i] = rng.gaussian();
      usq += u[i] * u[i];
    }
    Tensor<double> f1 = f0, f2 = f0;
    for (std::int64_t i = 0; i < u.numel(); ++i) {
      f1[i] += 0.01 * u[i];
      f2[i] += 0.02 * u[i];
    }
    const double r1 = base_regularizer(f1, f0);
    CHECK(r1 == doctest::Approx(1e-4 * usq / static_cast<double>(u.numel())).epsilon(1e-9));
    CHECK(base_regularizer(f2, f0) == doctest::Approx(4.0 * r1).epsilon(1e-9));
  }

  TEST_CASE("reconstruction_loss vanishes at the code's own render") {
    auto g = Generator<double>::random_init(test_support::micro_config(), 102);
    auto fx = FeatureExtractor<double>::create(103);
    Rng rng(104);
    LatentCode<double> code = sample_code(g, Space::kZPlus, rng);
    Tensor<double> target = g.synthesize(code);
    LossBreakdown loss = reconstruction_loss(g, fx, code, target, 10.0);
    CHECK(loss.mse == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(loss.perceptual == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss.total == doctest::Approx(0.0).epsilon(1e-12));

    Tensor<double> other = random_image(g.config().output_resolution, rng);
    LossBreakdown l2 = reconstruction_loss(g, fx, code, other, 7.0);
    CHECK(l2.mse > 0.0);
    CHECK(l2.perceptual > 0.0);
    CHECK(l2.total == doctest::Approx(l2.mse + 7.0 * l2.perceptual).epsilon(1e-12));
  }
}

TEST_SUITE("total objective") {
  TEST_CASE("decomposes into independently computed parts in every space") {
    auto g = Generator<double>::random_init(test_support::micro_config(), 111);
    auto fx = FeatureExtractor<double>::create(112);
    PnWhitener whitener = fit_pn_whitener(g, 200, 113);
    Rng rng(114);
    Tensor<double> target = random_image(g.config().output_resolution, rng);

    InversionConfig cfg;
    cfg.lambda_per = 10.0;
    cfg.lambda_reg = 10.0;
    cfg.lambda_pn = 1e-3;

    for (Space space : all_spaces()) {
      CAPTURE(space_name(space));
      LatentCode<double> code;
      Tensor<double> f0;
      const PnWhitener* wh = has_pn_penalty(space) ? &whitener : nullptr;
      if (is_hybrid(space)) {
        code = make_hybrid_sample(g, space, rng);
        f0 = make_hybrid_sample(g, space, rng).base;  // anchor != current base
      } else {
        code = sample_code(g, space, rng);
      }
      cfg.space = space;
      LossBreakdown got = total_objective(g, fx, code, target,
                                          is_hybrid(space) ? &f0 : nullptr, wh, cfg);

      LossBreakdown recon = reconstruction_loss(g, fx, code, target, cfg.lambda_per);
      CHECK(got.mse == doctest::Approx(recon.mse).epsilon(1e-10));
      CHECK(got.perceptual == doctest::Approx(recon.perceptual).epsilon(1e-10));
      double expect_total = recon.total;
      if (is_hybrid(space)) {
        const double reg = base_regularizer(code.base, f0);
        CHECK(got.reg == doctest::Approx(reg).epsilon(1e-12));
        expect_total += cfg.lambda_reg * reg;
      } else {
        CHECK(got.reg == 0.0);
      }
      if (wh) {
        const double pn = pn_density_penalty(code.entries, whitener);
        CHECK(got.pn == doctest::Approx(pn).epsilon(1e-12));
        expect_total += cfg.lambda_pn * pn;
      } else {
        CHECK(got.pn == 0.0);
      }
      CHECK(got.total == doctest::Approx(expect_total).epsilon(1e-10));
    }
  }

  TEST_CASE("matches plain mse when the other weights are off") {
    auto g = Generator<double>::random_init(test_support::micro_config(), 115);
    auto fx = FeatureExtractor<double>::create(116);
    Rng rng(117);
    LatentCode<double> code = sample_code(g, Space::kZ, rng);
    Tensor<double> target = random_image(g.config().output_resolution, rng);
    InversionConfig cfg;
    cfg.space = Space::kZ;
    cfg.lambda_per = 0.0;
    LossBreakdown loss = total_objective<double>(g, fx, code, target, nullptr, nullptr, cfg);
    CHECK(loss.total == doctest::Approx(loss.mse).epsilon(1e-15));
  }

  TEST_CASE("rejects inconsistent setups") {
    auto g = Generator<double>::random_init(test_support::micro_config(), 118);
    auto fx = FeatureExtractor<double>::create(119);
    Rng rng(120);
    Tensor<double> target = random_image(g.config().output_resolution, rng);
    InversionConfig cfg;

    cfg.space = Space::kFZPlus;
    CHECK_THROWS_AS(ObjectiveEvaluator<double>(&g, &fx, target, cfg), UsageError);
    Tensor<double> f0 = Tensor<double>::zeros(g.config().tap_shape());
    cfg.space = Space::kZ;
    CHECK_THROWS_AS(ObjectiveEvaluator<double>(&g, &fx, target, cfg, &f0), UsageError);
    cfg.space = Space::kFWPlusPn;
    CHECK_THROWS_AS(ObjectiveEvaluator<double>(&g, &fx, target, cfg, &f0), UsageError);

    Tensor<double> small({3, 4, 4});
    cfg.space = Space::kZ;
    CHECK_THROWS_AS(ObjectiveEvaluator<double>(&g, &fx, small, cfg), UsageError);

    // A code whose space differs from the evaluator's configuration.
    ObjectiveEvaluator<double> eval(&g, &fx, target, cfg);
    LatentCode<double> w = sample_code(g, Space::kW, rng);
    CHECK_THROWS_AS(eval.evaluate(w, nullptr), UsageError);

    InversionConfig bad;
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = InversionConfig{};
    bad.record_every = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = InversionConfig{};
    bad.beta2 = 1.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = InversionConfig{};
    bad.lambda_reg = -1.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
  }
}

TEST_SUITE("objective gradients") {
  TEST_CASE("analytic gradients match finite differences in every space") {
    auto g = Generator<double>::random_init(test_support::micro_config(), 121);
    auto fx = FeatureExtractor<double>::create(122);
    PnWhitener whitener = fit_pn_whitener(g, 200, 123);
    Rng rng(124);
    Tensor<double> target = random_image(g.config().output_resolution, rng);

    for (Space space : all_spaces()) {
      const std::string sname = space_name(space);
      CAPTURE(sname);
      InversionConfig cfg;
      cfg.space = space;
      LatentCode<double> code;
      Tensor<double> f0;
      if (is_hybrid(space)) {
        code = make_hybrid_sample(g, space, rng);
        f0 = make_hybrid_sample(g, space, rng).base;
      } else {
        code = sample_code(g, space, rng);
      }
      // The network is piecewise linear, so a sampled code can land within
      // the finite-difference step of a LeakyReLU kink, where central
      // differences straddle two linear pieces. Jitter to a generic point;
      // the gradient itself is exact everywhere off the kink set.
      Rng jitter(derive_seed(125, sname));
      for (auto& e : code.entries) {
        for (std::int64_t i = 0; i < e.numel(); ++i) e[i] += 0.02 * jitter.gaussian();
      }
      for (std::int64_t i = 0; i < code.base.numel(); ++i) {
        code.base[i] += 0.02 * jitter.gaussian();
      }
      ObjectiveEvaluator<double> eval(&g, &fx, target, cfg,
                                      is_hybrid(space) ? &f0 : nullptr,
                                      has_pn_penalty(space) ? &whitener : nullptr);
      CodeGrads<double> grads;
      eval.evaluate(code, &grads);
      auto loss = [&]() { return eval.evaluate(code, nullptr).total; };

      REQUIRE(grads.entries.size() == code.entries.size());
      for (std::size_t k = 0; k < code.entries.size(); ++k) {
        const double err =
            test_support::max_grad_error(code.entries[k], grads.entries[k], loss);
        CAPTURE(k);
        CHECK(err < 1e-3);
      }
      if (is_hybrid(space)) {
        REQUIRE(grads.base.shape() == code.base.shape());
        CHECK(test_support::max_grad_error(code.base, grads.base, loss) < 1e-3);
      }
    }
  }
}

TEST_SUITE("inversion loop") {
  TEST_CASE("records the curve at the configured cadence") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 131);
    auto fx = FeatureExtractor<float>::create(132);
    Rng rng(133);
    Tensor<float> target = g.synthesize(sample_code(g, Space::kZ, rng));

    auto run = [&](int iterations, int record_every) {
      InversionConfig cfg;
      cfg.space = Space::kZ;
      cfg.iterations = iterations;
      cfg.record_every = record_every;
      cfg.seed = 134;
      return invert(g, fx, target, cfg);
    };

    InversionResult<float> r = run(7, 3);
    REQUIRE(r.curve.size() == 3);
    CHECK(r.curve[0].iteration == 1);
    CHECK(r.curve[1].iteration == 4);
    CHECK(r.curve[2].iteration == 7);

    CHECK(run(6, 3).curve.size() == 2);
    CHECK(run(1, 10).curve.size() == 1);
    CHECK(run(10, 10).curve.size() == 1);
    CHECK(run(10, 1).curve.size() == 10);

    CHECK(r.wall_seconds > 0.0);
    const int res = g.config().output_resolution;
    CHECK(r.reconstruction.shape() == std::vector<int>({3, res, res}));
    Tensor<float> replay = g.synthesize(r.code);
    for (std::int64_t i = 0; i < replay.numel(); ++i) CHECK(replay[i] == r.reconstruction[i]);
  }

  TEST_CASE("is deterministic for a fixed seed") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 135);
    auto fx = FeatureExtractor<float>::create(136);
    Rng rng(137);
    Tensor<float> target = g.synthesize(sample_code(g, Space::kZ, rng));
    InversionConfig cfg;
    cfg.space = Space::kZPlus;
    cfg.iterations = 5;
    cfg.seed = 138;
    InversionResult<float> a = invert(g, fx, target, cfg);
    InversionResult<float> b = invert(g, fx, target, cfg);
    REQUIRE(a.code.entries.size() == b.code.entries.size());
    for (std::size_t k = 0; k < a.code.entries.size(); ++k) {
      for (std::int64_t i = 0; i < a.code.entries[k].numel(); ++i) {
        CHECK(a.code.entries[k][i] == b.code.entries[k][i]);
      }
    }
    cfg.seed = 139;
    InversionResult<float> c = invert(g, fx, target, cfg);
    double diff = 0.0;
    for (std::int64_t i = 0; i < a.code.entries[0].numel(); ++i) {
      diff += std::abs(static_cast<double>(a.code.entries[0][i]) - c.code.entries[0][i]);
    }
    CHECK(diff > 1e-4);
  }

  TEST_CASE("keeps sphere codes on the sphere at every recorded step") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 141);
    auto fx = FeatureExtractor<float>::create(142);
    Rng rng(143);
    Tensor<float> target = g.synthesize(sample_code(g, Space::kZ, rng));
    InversionConfig cfg;
    cfg.space = Space::kZPlus;
    cfg.iterations = 40;
    cfg.record_every = 1;
    cfg.seed = 144;
    InversionResult<float> r = invert(g, fx, target, cfg);
    REQUIRE(r.curve.size() == 40);
    for (const LossRecord& rec : r.curve) CHECK(rec.norm_deviation <= 1e-4);
    const double sqrt_d = std::sqrt(static_cast<double>(g.config().latent_dim));
    for (const auto& e : r.code.entries) CHECK(std::abs(e.norm() - sqrt_d) <= 1e-4);
  }

  TEST_CASE("sphere deviation tightens to 1e-6 in double precision") {
    auto g = Generator<double>::random_init(test_support::micro_config(), 145);
    auto fx = FeatureExtractor<double>::create(146);
    Rng rng(147);
    Tensor<double> target = g.synthesize(sample_code(g, Space::kZ, rng));
    InversionConfig cfg;
    cfg.space = Space::kFZPlus;
    cfg.iterations = 20;
    cfg.record_every = 1;
    cfg.seed = 148;
    InversionResult<double> r = invert(g, fx, target, cfg);
    for (const LossRecord& rec : r.curve) CHECK(rec.norm_deviation <= 1e-6);
  }

  TEST_CASE("w-flavored records report zero deviation") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 149);
    auto fx = FeatureExtractor<float>::create(150);
    Rng rng(151);
    Tensor<float> target = g.synthesize(sample_code(g, Space::kZ, rng));
    InversionConfig cfg;
    cfg.space = Space::kWPlus;
    cfg.iterations = 5;
    cfg.record_every = 1;
    cfg.seed = 152;
    InversionResult<float> r = invert(g, fx, target, cfg);
    for (const LossRecord& rec : r.curve) CHECK(rec.norm_deviation == 0.0);
  }

  TEST_CASE("standalone w starts at the mean mapped latent") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 153);
    auto fx = FeatureExtractor<float>::create(154);
    Rng rng(155);
    Tensor<float> target = g.synthesize(sample_code(g, Space::kZ, rng));
    InversionConfig cfg;
    cfg.space = Space::kW;
    cfg.iterations = 1;
    cfg.step_size = 1e-9;  // one vanishing step: the result is the starting point
    cfg.seed = 156;
    InversionResult<float> r = invert(g, fx, target, cfg);
    const Tensor<float>& mean = g.mean_w();
    for (int i = 0; i < g.config().latent_dim; ++i) {
      CHECK(r.code.entries[0][i] == doctest::Approx(mean[i]).epsilon(1e-5));
    }
  }

  TEST_CASE("hybrid bases anchor the regularizer at their starting point") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 157);
    auto fx = FeatureExtractor<float>::create(158);
    Rng rng(159);
    Tensor<float> target = g.synthesize(sample_code(g, Space::kZ, rng));
    InversionConfig cfg;
    cfg.space = Space::kFWPlus;
    cfg.iterations = 2;
    cfg.record_every = 1;
    cfg.seed = 160;

    // Without an encoder the base starts (and anchors) at zero.
    InversionResult<float> zero_init = invert(g, fx, target, cfg);
    CHECK(zero_init.curve[0].loss.reg == 0.0);
    CHECK(zero_init.curve[1].loss.reg > 0.0);

    // With an encoder the anchor moves to the encoder's prediction.
    auto enc = Encoder<float>::random_init(EncoderConfig::from_generator(g.config()), 161);
    InversionResult<float> enc_init = invert(g, fx, target, cfg, &enc);
    CHECK(enc_init.curve[0].loss.reg == 0.0);
    CHECK(enc_init.curve[0].loss.mse != doctest::Approx(zero_init.curve[0].loss.mse));
  }

  TEST_CASE("a non-finite loss aborts with a diagnosis instead of garbage") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 162);
    auto fx = FeatureExtractor<float>::create(163);
    const int res = g.config().output_resolution;
    Tensor<float> target({3, res, res});
    for (std::int64_t i = 0; i < target.numel(); ++i) {
      target[i] = std::numeric_limits<float>::quiet_NaN();
    }
    InversionConfig cfg;
    cfg.space = Space::kZ;
    cfg.iterations = 10;
    cfg.seed = 164;
    InversionResult<float> r = invert(g, fx, target, cfg);
    CHECK(r.diverged);
    CHECK(r.curve.empty());
    CHECK(r.error.find("iteration 1") != std::string::npos);
    CHECK(r.code.entries[0].all_finite());
    CHECK(r.reconstruction.all_finite());
  }

  TEST_CASE("optimization makes real progress on a generator-rendered target") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 165);
    auto fx = FeatureExtractor<float>::create(166);
    Rng rng(167);
    Tensor<float> target = g.synthesize(sample_code(g, Space::kZ, rng));
    InversionConfig cfg;
    cfg.space = Space::kFZPlus;
    cfg.iterations = 150;
    cfg.seed = 168;
    InversionResult<float> r = invert(g, fx, target, cfg);
    CHECK_FALSE(r.diverged);
    CHECK(r.final_loss.total < 0.5 * r.curve.front().loss.total);
    CHECK(r.final_loss.mse < r.curve.front().loss.mse);
  }
}
