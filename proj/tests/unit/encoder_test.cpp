#include <filesystem>

#include <doctest.h>

#include "latent_atlas/encoder.hpp"
#include "support/grad_check.hpp"
#include "support/test_configs.hpp"

using namespace latent_atlas;

TEST_SUITE("area downsample") {
  TEST_CASE("preserves constants and averages blocks") {
    Tensor<double> x({1, 2, 4, 4});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = 0.75;
    Tensor<double> y;
    area_downsample(x, 2, y);
    REQUIRE(y.shape() == std::vector<int>({1, 2, 2, 2}));
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.75));

    // 2x2 checkerboard of {0, 1} averages to exactly 0.5.
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) x(0, 0, i, j) = static_cast<double>((i + j) % 2);
    }
    area_downsample(x, 2, y);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) CHECK(y(0, 0, i, j) == 0.5);
    }
  }

  TEST_CASE("factor 1 copies and full factor reduces to the mean") {
    Rng rng(11);
    Tensor<double> x({2, 3, 4, 4});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.gaussian();
    Tensor<double> y;
    area_downsample(x, 1, y);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    area_downsample(x, 4, y);
    REQUIRE(y.shape() == std::vector<int>({2, 3, 1, 1}));
    double mean = 0.0;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) mean += x(1, 2, i, j);
    }
    mean /= 16.0;
    CHECK(y(1, 2, 0, 0) == doctest::Approx(mean).epsilon(1e-12));
  }

  TEST_CASE("rejects bad ranks and non-dividing factors") {
    Tensor<double> x3({3, 4, 4});
    Tensor<double> y;
    CHECK_THROWS_AS(area_downsample(x3, 2, y), UsageError);
    Tensor<double> x({1, 1, 6, 6});
    CHECK_THROWS_AS(area_downsample(x, 4, y), UsageError);
    CHECK_THROWS_AS(area_downsample(x, 0, y), UsageError);
  }
}

TEST_SUITE("encoder config") {
  TEST_CASE("derives resolutions and depth from the generator") {
    EncoderConfig desk = EncoderConfig::from_generator(test_support::desk_config());
    CHECK(desk.source_resolution == 32);
    CHECK(desk.tap_channels == 64);
    CHECK(desk.tap_resolution == 8);
    CHECK(desk.input_resolution == 32);  // min(32, 8 * 8)
    CHECK(desk.num_down_blocks() == 2);
    desk.validate();

    EncoderConfig micro = EncoderConfig::from_generator(test_support::micro_config());
    CHECK(micro.source_resolution == 8);
    CHECK(micro.tap_channels == 6);
    CHECK(micro.tap_resolution == 8);
    CHECK(micro.input_resolution == 8);
    CHECK(micro.num_down_blocks() == 0);
    micro.validate();
  }

  TEST_CASE("round-trips through json and rejects bad shapes") {
    EncoderConfig c = EncoderConfig::from_generator(test_support::small_config());
    EncoderConfig back = encoder_config_from_json(encoder_config_to_json(c));
    CHECK(back.source_resolution == c.source_resolution);
    CHECK(back.input_resolution == c.input_resolution);
    CHECK(back.tap_channels == c.tap_channels);
    CHECK(back.tap_resolution == c.tap_resolution);

    EncoderConfig bad = c;
    bad.input_resolution = 12;  // not a power-of-two multiple of tap res 8
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = c;
    bad.tap_channels = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
  }
}

TEST_SUITE("encoder network") {
  TEST_CASE("forward and encode produce tap-shaped outputs deterministically") {
    const GeneratorConfig gcfg = test_support::small_config();
    EncoderConfig cfg = EncoderConfig::from_generator(gcfg);
    auto enc = Encoder<float>::random_init(cfg, 21);
    auto enc2 = Encoder<float>::random_init(cfg, 21);

    Rng rng(22);
    Tensor<float> img({3, gcfg.output_resolution, gcfg.output_resolution});
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(rng.uniform(-1, 1));
    Tensor<float> f = enc.encode(img);
    REQUIRE(f.shape() == gcfg.tap_shape());
    Tensor<float> f2 = enc2.encode(img);
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(f[i] == f2[i]);
    CHECK(f.all_finite());

    auto enc3 = Encoder<float>::random_init(cfg, 23);
    Tensor<float> f3 = enc3.encode(img);
    double diff = 0.0;
    for (std::int64_t i = 0; i < f.numel(); ++i) {
      diff += std::abs(static_cast<double>(f[i]) - f3[i]);
    }
    CHECK(diff > 1e-3);

    Tensor<float> wrong({3, 4, 4});
    CHECK_THROWS_AS(enc.encode(wrong), UsageError);
    typename Encoder<float>::Tape tape;
    Tensor<float> batch_wrong({1, 3, 4, 4});
    CHECK_THROWS_AS(enc.forward(batch_wrong, tape), UsageError);
  }

  TEST_CASE("backward matches finite differences") {
    EncoderConfig cfg;
    cfg.source_resolution = 8;
    cfg.input_resolution = 8;
    cfg.tap_channels = 5;
    cfg.tap_resolution = 4;
    cfg.stem_width = 4;
    cfg.max_width = 6;
    auto enc = Encoder<double>::random_init(cfg, 31);

    Rng rng(32);
    Tensor<double> x({1, 3, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.gaussian();
    Tensor<double> probe({1, 5, 4, 4});
    for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.gaussian();

    typename Encoder<double>::Tape tape;
    auto grads = enc.make_grads();
    Tensor<double> dx;
    enc.forward(x, tape);
    enc.backward(tape, probe, grads, &dx);

    auto loss = [&]() {
      typename Encoder<double>::Tape t;
      return test_support::probe_loss(probe, enc.forward(x, t));
    };
    // eps 1e-5 against the 1e-4 relative floor: rare LeakyReLU kink
    // crossings dominate the worst case.
    CHECK(test_support::max_grad_error(x, dx, loss) < 1e-4);
    for (std::size_t k = 0; k < enc.convs().size(); ++k) {
      CHECK(test_support::max_grad_error(enc.convs()[k].weight, grads[k].weight, loss) < 1e-4);
      CHECK(test_support::max_grad_error(enc.convs()[k].bias, grads[k].bias, loss) < 1e-4);
    }
  }
}

TEST_SUITE("encoder training") {
  TEST_CASE("zero steps returns the untouched initialization") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 41);
    auto fx = FeatureExtractor<float>::create(42);
    EncoderTrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 43;
    EncoderTrainResult<float> r = train_encoder(g, fx, cfg);
    CHECK(r.loss_history.empty());

    auto fresh = Encoder<float>::random_init(EncoderConfig::from_generator(g.config()), 43);
    REQUIRE(r.encoder.convs().size() == fresh.convs().size());
    for (std::size_t k = 0; k < fresh.convs().size(); ++k) {
      const auto& a = r.encoder.convs()[k].weight;
      const auto& b = fresh.convs()[k].weight;
      REQUIRE(a.shape() == b.shape());
      for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    }
  }

  TEST_CASE("a short run reduces the reconstruction loss") {
    auto g = Generator<float>::random_init(test_support::micro_config(), 44);
    auto fx = FeatureExtractor<float>::create(45);
    EncoderTrainConfig cfg;
    cfg.steps = 40;
    cfg.batch_size = 4;
    cfg.step_size = 2e-3;
    cfg.seed = 46;
    EncoderTrainResult<float> r = train_encoder(g, fx, cfg);
    REQUIRE(r.loss_history.size() == 40);
    for (double v : r.loss_history) CHECK(std::isfinite(v));
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 5; ++i) {
      head += r.loss_history[static_cast<std::size_t>(i)];
      tail += r.loss_history[r.loss_history.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(tail < head);
  }

  TEST_CASE("validates its config") {
    EncoderTrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg = EncoderTrainConfig{};
    cfg.step_size = 0.0;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
  }
}

TEST_SUITE("encoder persistence") {
  TEST_CASE("checkpoint round-trip reproduces the forward pass bit-exactly") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "latent_atlas_enc_ck";
    fs::remove_all(dir);

    const GeneratorConfig gcfg = test_support::micro_config();
    auto enc = Encoder<float>::random_init(EncoderConfig::from_generator(gcfg), 51);
    nlohmann::json meta;
    meta["train_steps"] = 123;
    save_encoder(dir, enc, meta);

    nlohmann::json meta_back;
    Encoder<float> back = load_encoder<float>(dir, &meta_back);
    CHECK(meta_back.at("train_steps").get<int>() == 123);
    CHECK(meta_back.contains("encoder_config"));

    Rng rng(52);
    Tensor<float> img({3, gcfg.output_resolution, gcfg.output_resolution});
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(rng.uniform(-1, 1));
    Tensor<float> a = enc.encode(img);
    Tensor<float> b = back.encode(img);
    REQUIRE(a.shape() == b.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

    CHECK_THROWS_AS(load_encoder<float>(dir / "missing"), IoError);
  }
}
