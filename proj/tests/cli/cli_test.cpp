#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "cli.hpp"
#include "latent_atlas/image_io.hpp"
#include "latent_atlas/rng.hpp"
#include "latent_atlas/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latent_atlas;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "latent-atlas");
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n' ? 1 : 0;
  return n;
}

/// Scratch tree shared by every case in this file. Training the tiny
/// generator and encoder once keeps the whole suite fast.
struct Workspace {
  fs::path root;
  fs::path gen_ckpt, enc_ckpt, whitener, target_png;

  Workspace() {
    root = fs::temp_directory_path() / "latent_atlas_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);

    const fs::path cfg = root / "gen.json";
    std::ofstream out(cfg);
    out << R"({"generator": {"latent_dim": 8, "mapping_depth": 2, "base_resolution": 4,
                "output_resolution": 8, "channels": [6, 4], "split_layer": 3},
               "steps": 8, "batch_size": 4, "dataset_size": 32, "seed": 7})";
    out.close();
    REQUIRE(run({"train-gen", "--config", cfg.string(), "--out", (root / "gen").string()}) == 0);
    gen_ckpt = root / "gen" / "generator";

    REQUIRE(run({"train-encoder", "--ckpt", gen_ckpt.string(), "--out", (root / "enc").string(),
                 "--steps", "20", "--batch", "4", "--seed", "3"}) == 0);
    enc_ckpt = root / "enc" / "encoder";

    REQUIRE(run({"whiten", "--ckpt", gen_ckpt.string(), "--out", (root / "wh").string(),
                 "--samples", "120", "--seed", "5"}) == 0);
    whitener = root / "wh" / "whitener";

    Tensor<float> img({3, 8, 8});
    Rng rng(41);
    for (std::int64_t i = 0; i < img.numel(); ++i) {
      img[i] = static_cast<float>(std::tanh(rng.gaussian()));
    }
    target_png = root / "target.png";
    write_png(target_png, img);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("rejects bare invocation and honors --help") {
    CHECK(run({}) == 2);
    CHECK(run({"--help"}) == 0);
    CHECK(run({"no-such-command"}) == 2);
  }

  TEST_CASE("train-gen reruns are byte-identical") {
    const fs::path cfg = ws().root / "gen.json";
    const fs::path a = ws().root / "tg_a";
    const fs::path b = ws().root / "tg_b";
    REQUIRE(run({"train-gen", "--config", cfg.string(), "--out", a.string()}) == 0);
    REQUIRE(run({"train-gen", "--config", cfg.string(), "--out", b.string()}) == 0);
    CHECK(slurp(a / "generator" / "params.bin") == slurp(b / "generator" / "params.bin"));
    CHECK(slurp(a / "generator" / "manifest.json") == slurp(b / "generator" / "manifest.json"));
    CHECK(slurp(a / "curve.csv") == slurp(b / "curve.csv"));
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    const std::string curve = slurp(a / "curve.csv");
    CHECK(curve.rfind("step,d_loss,g_loss,moment_gap\n", 0) == 0);
    CHECK(line_count(curve) == 9);
  }

  TEST_CASE("train-gen flags override the config file") {
    const fs::path out = ws().root / "tg_flags";
    REQUIRE(run({"train-gen", "--config", (ws().root / "gen.json").string(), "--steps", "2",
                 "--out", out.string()}) == 0);
    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest.at("config").at("steps").get<int>() == 2);
    CHECK(manifest.at("config").at("seed").get<int>() == 7);
    CHECK(line_count(slurp(out / "curve.csv")) == 3);
  }

  TEST_CASE("missing or malformed config files fail with the right codes") {
    CHECK(run({"train-gen", "--config", (ws().root / "nope.json").string(), "--out",
               (ws().root / "x1").string()}) == 4);
    const fs::path bad = ws().root / "bad.json";
    std::ofstream(bad) << "{not json";
    CHECK(run({"train-gen", "--config", bad.string(), "--out", (ws().root / "x2").string()}) == 2);
  }

  TEST_CASE("invert writes the bundle and echoes defaults") {
    const fs::path out = ws().root / "inv_w";
    REQUIRE(run({"invert", "--image", ws().target_png.string(), "--space", "w+", "--ckpt",
                 ws().gen_ckpt.string(), "--out", out.string(), "--iters", "1", "--seed",
                 "2"}) == 0);
    CHECK(fs::exists(out / "code.lat"));
    CHECK(fs::exists(out / "reconstruction.png"));
    CHECK(line_count(slurp(out / "loss.csv")) == 2);

    const json manifest = json::parse(slurp(out / "manifest.json"));
    const json& cfg = manifest.at("config");
    CHECK(cfg.at("iterations").get<int>() == 1);
    CHECK(cfg.at("step_size").get<double>() == doctest::Approx(0.01));
    CHECK(cfg.at("lambda_per").get<double>() == doctest::Approx(10.0));
    CHECK(cfg.at("lambda_reg").get<double>() == doctest::Approx(10.0));
    CHECK(manifest.at("diverged").get<bool>() == false);
  }

  TEST_CASE("invert gates hybrid and density flags") {
    const auto base = std::vector<std::string>{"invert", "--image", ws().target_png.string(),
                                               "--ckpt", ws().gen_ckpt.string()};
    auto with = [&](std::initializer_list<std::string> extra) {
      std::vector<std::string> args = base;
      args.insert(args.end(), extra);
      return run(std::move(args));
    };
    CHECK(with({"--space", "f/z+", "--out", (ws().root / "iv1").string()}) == 2);
    CHECK(with({"--space", "f/z+", "--no-encoder", "--iters", "2", "--out",
                (ws().root / "iv2").string()}) == 0);
    CHECK(with({"--space", "f/z+", "--enc", ws().enc_ckpt.string(), "--iters", "2", "--out",
                (ws().root / "iv3").string()}) == 0);
    CHECK(with({"--space", "f/w+pn", "--enc", ws().enc_ckpt.string(), "--iters", "2", "--out",
                (ws().root / "iv4").string()}) == 2);
    CHECK(with({"--space", "f/w+pn", "--enc", ws().enc_ckpt.string(), "--whitener",
                ws().whitener.string(), "--iters", "2", "--out",
                (ws().root / "iv5").string()}) == 0);
    CHECK(with({"--space", "q+", "--out", (ws().root / "iv6").string()}) == 2);
    CHECK(run({"invert", "--image", (ws().root / "missing.png").string(), "--space", "z",
               "--ckpt", ws().gen_ckpt.string(), "--out", (ws().root / "iv7").string()}) == 4);
  }

  TEST_CASE("edit at alpha zero reproduces the stored reconstruction byte for byte") {
    const fs::path dirs = ws().root / "dirs";
    REQUIRE(run({"directions", "--method", "ganspace", "--ckpt", ws().gen_ckpt.string(), "--out",
                 dirs.string(), "--components", "4", "--samples", "64", "--seed", "11"}) == 0);
    const fs::path inv = ws().root / "inv_w";

    const fs::path out = ws().root / "ed0";
    REQUIRE(run({"edit", "--code", (inv / "code.lat").string(), "--ckpt", ws().gen_ckpt.string(),
                 "--bank", (dirs / "ganspace_w.json").string(), "--direction", "pc0", "--alpha",
                 "0", "--out", out.string()}) == 0);
    CHECK(slurp(out / "edited.png") == slurp(inv / "reconstruction.png"));

    CHECK(run({"edit", "--code", (inv / "code.lat").string(), "--ckpt", ws().gen_ckpt.string(),
               "--bank", (dirs / "ganspace_w.json").string(), "--direction", "pc9", "--alpha",
               "1", "--out", (ws().root / "ed1").string()}) == 2);
    CHECK(run({"edit", "--code", (inv / "code.lat").string(), "--ckpt", ws().gen_ckpt.string(),
               "--bank", (dirs / "ganspace_z.json").string(), "--direction", "pc0", "--alpha",
               "1", "--out", (ws().root / "ed2").string()}) == 2);
  }

  TEST_CASE("edit writes one artifact pair per alpha") {
    const fs::path out = ws().root / "ed_multi";
    REQUIRE(run({"edit", "--code", (ws().root / "inv_w" / "code.lat").string(), "--ckpt",
                 ws().gen_ckpt.string(), "--bank",
                 (ws().root / "dirs" / "ganspace_w.json").string(), "--direction", "pc1",
                 "--alpha", "-1", "--alpha", "0", "--alpha", "1", "--out", out.string()}) == 0);
    for (int i = 0; i < 3; ++i) {
      CHECK(fs::exists(out / ("edited_" + std::to_string(i) + ".png")));
      CHECK(fs::exists(out / ("edited_" + std::to_string(i) + ".lat")));
    }
    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest.at("edits").size() == 3);
    CHECK(manifest.at("edits")[0].at("alpha").get<double>() == doctest::Approx(-1.0));
  }

  TEST_CASE("directions banks carry the requested contents") {
    const json zbank = json::parse(slurp(ws().root / "dirs" / "ganspace_z.json"));
    CHECK(zbank.at("directions").size() == 4);
    CHECK(zbank.at("format").get<std::string>() == "latent-atlas/dir-v1");

    const fs::path rnd = ws().root / "rnd";
    REQUIRE(run({"directions", "--method", "random", "--ckpt", ws().gen_ckpt.string(), "--out",
                 rnd.string(), "--count", "3", "--seed", "17"}) == 0);
    const json rbank = json::parse(slurp(rnd / "random.json"));
    REQUIRE(rbank.at("directions").size() == 3);
    CHECK(rbank.at("directions")[0].contains("metadata"));
    CHECK(rbank.at("directions")[0].at("metadata").contains("raw_norm"));

    const fs::path igd = ws().root / "igd";
    REQUIRE(run({"directions", "--method", "interfacegan", "--ckpt", ws().gen_ckpt.string(),
                 "--out", igd.string(), "--samples", "64", "--seed", "13"}) == 0);
    const json ibank = json::parse(slurp(igd / "interfacegan.json"));
    REQUIRE(ibank.at("directions").size() == 1);
    CHECK(ibank.at("directions")[0].at("name").get<std::string>() == "brightness");
    CHECK(ibank.at("directions")[0].at("metadata").at("train_accuracy").get<double>() > 0.5);

    CHECK(run({"directions", "--method", "sorcery", "--ckpt", ws().gen_ckpt.string(), "--out",
               (ws().root / "bad_dirs").string()}) == 2);
  }

  TEST_CASE("eval reruns are byte-identical across job counts") {
    const auto base = std::vector<std::string>{"eval",
                                               "--ckpt",
                                               ws().gen_ckpt.string(),
                                               "--enc",
                                               ws().enc_ckpt.string(),
                                               "--suite",
                                               "generator",
                                               "--targets",
                                               "2",
                                               "--spaces",
                                               "z,f/z+",
                                               "--iters",
                                               "4",
                                               "--directions",
                                               (ws().root / "dirs" / "ganspace_z.json").string(),
                                               "--sweep-space",
                                               "z+",
                                               "--sweep-targets",
                                               "1",
                                               "--alpha-steps",
                                               "5",
                                               "--seed",
                                               "9"};
    auto with = [&](std::initializer_list<std::string> extra) {
      std::vector<std::string> args = base;
      args.insert(args.end(), extra);
      return run(std::move(args));
    };
    const fs::path a = ws().root / "ev_a";
    const fs::path b = ws().root / "ev_b";
    REQUIRE(with({"--out", a.string(), "--jobs", "1"}) == 0);
    REQUIRE(with({"--out", b.string(), "--jobs", "3"}) == 0);
    for (const char* f : {"recon.csv", "sweep.csv", "report.json", "summary.md", "manifest.json"}) {
      CAPTURE(f);
      CHECK(slurp(a / f) == slurp(b / f));
    }
    const std::string recon = slurp(a / "recon.csv");
    CHECK(recon.rfind("target_id,space,mse,ssim,perceptual,wall_s\n", 0) == 0);
    CHECK(line_count(recon) == 5);
    const std::string sweep = slurp(a / "sweep.csv");
    CHECK(sweep.rfind("target_id,space,direction,alpha,id_sim,perceptual\n", 0) == 0);
    CHECK(line_count(sweep) == 21);
  }

  TEST_CASE("eval rejects suites and spaces it cannot serve") {
    CHECK(run({"eval", "--ckpt", ws().gen_ckpt.string(), "--suite", "nightly", "--targets", "1",
               "--spaces", "z", "--out", (ws().root / "ev_bad1").string()}) == 2);
    CHECK(run({"eval", "--ckpt", ws().gen_ckpt.string(), "--suite", "generator", "--targets",
               "1", "--spaces", "f/w+pn", "--out", (ws().root / "ev_bad2").string()}) == 2);
    CHECK(run({"eval", "--ckpt", ws().gen_ckpt.string(), "--suite", "generator", "--targets",
               "1", "--spaces", "warp", "--out", (ws().root / "ev_bad3").string()}) == 2);
  }

  TEST_CASE("environment seed override wins and must parse") {
    const fs::path out = ws().root / "ev_env";
    setenv("LATENT_ATLAS_SEED", "99", 1);
    const int rc = run({"eval", "--ckpt", ws().gen_ckpt.string(), "--suite", "generator",
                        "--targets", "1", "--spaces", "z", "--iters", "2", "--seed", "9", "--out",
                        out.string()});
    unsetenv("LATENT_ATLAS_SEED");
    REQUIRE(rc == 0);
    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest.at("seed").get<std::uint64_t>() == 99);

    setenv("LATENT_ATLAS_SEED", "not-a-seed", 1);
    const int bad = run({"eval", "--ckpt", ws().gen_ckpt.string(), "--suite", "generator",
                         "--targets", "1", "--spaces", "z", "--iters", "2", "--out",
                         (ws().root / "ev_env2").string()});
    unsetenv("LATENT_ATLAS_SEED");
    CHECK(bad == 2);
  }

  TEST_CASE("hardware accelerator is refused in this build") {
    CHECK(run({"whiten", "--ckpt", ws().gen_ckpt.string(), "--out",
               (ws().root / "wh_acc").string(), "--hardware", "accelerator"}) == 2);
    CHECK(run({"whiten", "--ckpt", ws().gen_ckpt.string(), "--out",
               (ws().root / "wh_bad").string(), "--hardware", "quantum"}) == 2);
  }

  TEST_CASE("train-encoder writes a scalar loss curve") {
    const std::string curve = slurp(ws().root / "enc" / "loss.csv");
    CHECK(curve.rfind("step,total\n", 0) == 0);
    CHECK(line_count(curve) == 21);
  }
}
