#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "latent_atlas/gan_training.hpp"
#include "latent_atlas/model_io.hpp"
#include "support/grad_check.hpp"
#include "support/test_configs.hpp"

using namespace latent_atlas;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("latent_atlas_gan_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename T>
Tensor<T> random_batch(int b, int res, Rng& rng) {
  Tensor<T> x({b, 3, res, res});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(0.7 * rng.gaussian());
  return x;
}

}  // namespace

TEST_SUITE("discriminator") {
  TEST_CASE("config mirrors the generator") {
    const DiscriminatorConfig desk = DiscriminatorConfig::from_generator(test_support::desk_config());
    CHECK(desk.input_resolution == 32);
    CHECK(desk.base_resolution == 4);
    CHECK(desk.channels == std::vector<int>{16, 32, 64, 64});
    CHECK(desk.num_down_blocks() == 3);
    desk.validate();

    const DiscriminatorConfig micro = DiscriminatorConfig::from_generator(test_support::micro_config());
    CHECK(micro.input_resolution == 8);
    CHECK(micro.channels == std::vector<int>{4, 6});
    CHECK(micro.num_down_blocks() == 1);
    micro.validate();
  }

  TEST_CASE("config validation") {
    DiscriminatorConfig c;
    c.input_resolution = 12;
    CHECK_THROWS_AS(c.validate(), UsageError);

    c = DiscriminatorConfig{};
    c.channels = {16, 32};  // 32 -> 4 needs three down blocks
    CHECK_THROWS_AS(c.validate(), UsageError);

    c = DiscriminatorConfig{};
    c.channels[1] = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
  }

  TEST_CASE("forward is shaped and seeded") {
    const DiscriminatorConfig cfg = DiscriminatorConfig::from_generator(test_support::small_config());
    const auto d = Discriminator<float>::random_init(cfg, 11);
    Rng rng(3);
    const Tensor<float> x = random_batch<float>(2, 16, rng);

    Discriminator<float>::Tape tape;
    const Tensor<float>& logits = d.forward(x, tape);
    REQUIRE(logits.shape() == std::vector<int>{2, 1});
    CHECK(std::isfinite(logits(0, 0)));
    CHECK(std::isfinite(logits(1, 0)));

    const auto same = Discriminator<float>::random_init(cfg, 11);
    Discriminator<float>::Tape tape2;
    same.forward(x, tape2);
    CHECK(tape2.logits(0, 0) == logits(0, 0));

    const auto other = Discriminator<float>::random_init(cfg, 12);
    other.forward(x, tape2);
    CHECK(tape2.logits(0, 0) != logits(0, 0));

    Tensor<float> bad({2, 3, 8, 8});
    CHECK_THROWS_AS(d.forward(bad, tape), UsageError);
  }

  TEST_CASE("backward matches finite differences") {
    const DiscriminatorConfig cfg = DiscriminatorConfig::from_generator(test_support::micro_config());
    auto d = Discriminator<double>::random_init(cfg, 21);
    Rng rng(4);
    Tensor<double> x = random_batch<double>(2, 8, rng);

    Tensor<double> probe({2, 1});
    for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.gaussian();
    auto loss = [&] {
      Discriminator<double>::Tape t;
      return test_support::probe_loss(probe, d.forward(x, t));
    };

    Discriminator<double>::Tape tape;
    d.forward(x, tape);
    auto grads = d.make_grads();
    grads.set_zero();
    Tensor<double> dx;
    d.backward(tape, probe, &grads, &dx);

    CHECK(test_support::max_grad_error(x, dx, loss) < 1e-4);
    for (std::size_t k = 0; k < d.convs().size(); ++k) {
      CAPTURE(k);
      CHECK(test_support::max_grad_error(d.convs()[k].weight, grads.convs[k].weight, loss) < 1e-4);
      CHECK(test_support::max_grad_error(d.convs()[k].bias, grads.convs[k].bias, loss) < 1e-4);
    }
    CHECK(test_support::max_grad_error(d.head().weight, grads.head.weight, loss) < 1e-4);
    CHECK(test_support::max_grad_error(d.head().bias, grads.head.bias, loss) < 1e-4);
  }
}

TEST_SUITE("gan training") {
  TEST_CASE("zero steps returns the seeded init") {
    GanTrainConfig cfg;
    cfg.generator = test_support::micro_config();
    cfg.steps = 0;
    cfg.batch_size = 4;
    cfg.seed = 17;
    const ToyFaceDataset data(8, 1);

    const auto result = train_generator<float>(data, cfg);
    CHECK(result.curve.empty());

    const auto fresh = Generator<float>::random_init(cfg.generator, cfg.seed);
    Rng rng(2);
    LatentCode<float> code;
    code.space = Space::kZ;
    code.entries.push_back(sphere_sample<float>(8, rng));
    const Tensor<float> a = result.generator.synthesize(code);
    const Tensor<float> b = fresh.synthesize(code);
    REQUIRE(a.same_shape(b));
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
  }

  TEST_CASE("training is reproducible per seed") {
    GanTrainConfig cfg;
    cfg.generator = test_support::micro_config();
    cfg.steps = 3;
    cfg.batch_size = 4;
    cfg.dataset_size = 32;
    cfg.seed = 7;
    const ToyFaceDataset data(8, 1);

    const auto r1 = train_generator<float>(data, cfg);
    const auto r2 = train_generator<float>(data, cfg);
    REQUIRE(r1.curve.size() == 3);
    REQUIRE(r2.curve.size() == 3);
    for (std::size_t i = 0; i < r1.curve.size(); ++i) {
      CHECK(r1.curve[i].step == static_cast<int>(i));
      CHECK(r1.curve[i].d_loss == r2.curve[i].d_loss);
      CHECK(r1.curve[i].g_loss == r2.curve[i].g_loss);
      CHECK(r1.curve[i].moment_gap == r2.curve[i].moment_gap);
    }

    cfg.seed = 8;
    const auto r3 = train_generator<float>(data, cfg);
    CHECK(r3.curve[2].d_loss != r1.curve[2].d_loss);
  }

  TEST_CASE("short run stays finite and the discriminator learns") {
    GanTrainConfig cfg;
    cfg.generator = test_support::micro_config();
    cfg.steps = 50;
    cfg.batch_size = 8;
    cfg.dataset_size = 64;
    cfg.seed = 3;
    const ToyFaceDataset data(8, 1);

    const auto result = train_generator<float>(data, cfg);
    REQUIRE(result.curve.size() == 50);
    for (const GanStepRecord& r : result.curve) {
      REQUIRE(std::isfinite(r.d_loss));
      REQUIRE(std::isfinite(r.g_loss));
      REQUIRE(std::isfinite(r.moment_gap));
      REQUIRE(r.d_loss > 0.0);
      REQUIRE(r.g_loss > 0.0);
    }

    // Both players actually moved, and the sampler still produces in-range
    // images. Adversarial curves are not monotone, so no loss-level hinge
    // here; the long-run decrease is checked on the real training schedule.
    Rng rng(9);
    LatentCode<float> code;
    code.space = Space::kZ;
    code.entries.push_back(sphere_sample<float>(8, rng));
    const auto fresh = Generator<float>::random_init(cfg.generator, cfg.seed);
    const Tensor<float> before = fresh.synthesize(code);
    const Tensor<float> img = result.generator.synthesize(code);
    double moved = 0.0;
    for (std::int64_t i = 0; i < img.numel(); ++i) {
      REQUIRE(std::isfinite(img[i]));
      REQUIRE(img[i] >= -1.0f);
      REQUIRE(img[i] <= 1.0f);
      moved = std::max(moved, std::abs(static_cast<double>(img[i]) - before[i]));
    }
    CHECK(moved > 1e-4);
  }

  TEST_CASE("dataset resolution must match the generator") {
    GanTrainConfig cfg;
    cfg.generator = test_support::micro_config();
    const ToyFaceDataset data(16, 1);
    CHECK_THROWS_AS(train_generator<float>(data, cfg), UsageError);
  }

  TEST_CASE("exploding losses abort with a numeric error") {
    GanTrainConfig cfg;
    cfg.generator = test_support::micro_config();
    cfg.steps = 10;
    cfg.batch_size = 4;
    cfg.dataset_size = 16;
    cfg.lr_generator = 1e12;
    cfg.lr_discriminator = 1e12;
    cfg.seed = 2;
    const ToyFaceDataset data(8, 1);
    CHECK_THROWS_AS(train_generator<float>(data, cfg), NumericError);
  }

  TEST_CASE("config validation and json round trip") {
    GanTrainConfig cfg;
    cfg.generator = test_support::micro_config();

    GanTrainConfig bad = cfg;
    bad.steps = -1;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = cfg;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = cfg;
    bad.lr_generator = 0.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = cfg;
    bad.beta2 = 1.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = cfg;
    bad.dataset_size = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = cfg;
    bad.drift = -1e-3;
    CHECK_THROWS_AS(bad.validate(), UsageError);

    cfg.steps = 123;
    cfg.lr_generator = 5e-4;
    cfg.drift = 2e-3;
    cfg.seed = 99;
    const GanTrainConfig back = gan_train_config_from_json(gan_train_config_to_json(cfg));
    CHECK(back.steps == cfg.steps);
    CHECK(back.lr_generator == cfg.lr_generator);
    CHECK(back.drift == cfg.drift);
    CHECK(back.seed == cfg.seed);
    CHECK(back.generator.channels == cfg.generator.channels);
  }

  TEST_CASE("curve csv is byte stable") {
    const std::vector<GanStepRecord> curve = {
        {0, 1.386294, 0.693147, 0.52},
        {1, 1.200000, 0.800000, 0.48},
    };
    const fs::path dir = temp_dir("curve");
    write_gan_curve_csv(dir / "a.csv", curve);
    write_gan_curve_csv(dir / "b.csv", curve);

    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    const std::string a = slurp(dir / "a.csv");
    CHECK(a == slurp(dir / "b.csv"));
    CHECK(a.substr(0, a.find('\n')) == "step,d_loss,g_loss,moment_gap");
    CHECK(a.find("0,1.386294,0.693147,0.520000") != std::string::npos);

    CHECK_THROWS_AS(write_gan_curve_csv(dir / "missing" / "c.csv", curve), IoError);
  }
}

TEST_SUITE("generator checkpoints") {
  TEST_CASE("save and load round trip bit exactly") {
    const GeneratorConfig gcfg = test_support::small_config();
    const auto g = Generator<float>::random_init(gcfg, 31);
    const fs::path dir = temp_dir("ckpt");
    save_generator(dir, g, {{"train_steps", 42}});

    nlohmann::json meta;
    const auto loaded = load_generator<float>(dir, &meta);
    CHECK(meta.at("train_steps") == 42);
    CHECK(loaded.config().output_resolution == gcfg.output_resolution);
    CHECK(loaded.config().channels == gcfg.channels);

    Rng rng(5);
    LatentCode<float> code;
    code.space = Space::kZ;
    code.entries.push_back(sphere_sample<float>(gcfg.latent_dim, rng));
    const Tensor<float> a = g.synthesize(code);
    const Tensor<float> b = loaded.synthesize(code);
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
  }

  TEST_CASE("missing directory and foreign tags are rejected") {
    CHECK_THROWS_AS(load_generator<float>(fs::temp_directory_path() / "latent_atlas_gan_absent"),
                    IoError);

    // A checkpoint with another format tag must not load as a generator.
    const fs::path dir = temp_dir("wrongtag");
    Checkpoint ck;
    ck.format = kEncoderCheckpointFormat;
    ck.meta["generator_config"] = test_support::micro_config();
    ck.add("const_input", Tensor<float>::zeros({1, 6, 4, 4}));
    save_checkpoint(dir, ck);
    CHECK_THROWS_AS(load_generator<float>(dir), IoError);
  }

  TEST_CASE("shape drift in stored tensors is rejected") {
    const GeneratorConfig gcfg = test_support::micro_config();
    const auto g = Generator<float>::random_init(gcfg, 13);
    const fs::path dir = temp_dir("shapedrift");
    save_generator(dir, g);

    Checkpoint ck = load_checkpoint(dir, kGeneratorCheckpointFormat);
    for (auto& [name, t] : ck.tensors) {
      if (name == "const_input") t = Tensor<float>::zeros({1, 6, 2, 2});
    }
    save_checkpoint(dir, ck);
    CHECK_THROWS_AS(load_generator<float>(dir), IoError);
  }
}
