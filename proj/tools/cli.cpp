#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latent_atlas/dataset.hpp"
#include "latent_atlas/encoder.hpp"
#include "latent_atlas/eval.hpp"
#include "latent_atlas/gan_training.hpp"
#include "latent_atlas/image_io.hpp"
#include "latent_atlas/latent_io.hpp"
#include "latent_atlas/model_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latent_atlas;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

json load_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out.good()) throw IoError("failed writing " + path.string());
}

void ensure_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

/// Fills `var` from the config file when the flag was not passed on the
/// command line. Flags beat the file; the file beats built-in defaults.
template <typename T>
void merge_option(const json& cfg, const CLI::Option* opt, const char* key, T& var) {
  if (opt != nullptr && opt->count() > 0) return;
  if (!cfg.contains(key)) return;
  try {
    var = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config field '") + key + "': " + e.what());
  }
}

/// LATENT_ATLAS_SEED beats both the --seed flag and the config file; it
/// exists so harnesses can re-seed whole pipelines without editing configs.
std::uint64_t apply_env_seed(std::uint64_t seed) {
  const char* env = std::getenv("LATENT_ATLAS_SEED");
  if (env == nullptr || *env == '\0') return seed;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') {
    throw UsageError(std::string("LATENT_ATLAS_SEED is not an unsigned integer: '") + env + "'");
  }
  return static_cast<std::uint64_t>(v);
}

void check_hardware(const std::string& hardware) {
  if (hardware == "cpu") return;
  if (hardware == "accelerator") {
    throw UsageError("hardware mode 'accelerator' is not available in this build; use cpu");
  }
  throw UsageError("unknown hardware mode '" + hardware + "' (expected cpu or accelerator)");
}

json inversion_config_to_json(const InversionConfig& c) {
  return json{{"space", space_name(c.space)},
              {"iterations", c.iterations},
              {"step_size", c.step_size},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"lambda_per", c.lambda_per},
              {"lambda_reg", c.lambda_reg},
              {"lambda_pn", c.lambda_pn},
              {"record_every", c.record_every},
              {"seed", c.seed}};
}

json loss_to_json(const LossBreakdown& l) {
  return json{{"mse", l.mse},
              {"perceptual", l.perceptual},
              {"reg", l.reg},
              {"pn", l.pn},
              {"total", l.total}};
}

void write_loss_curve_csv(const fs::path& path, const std::vector<LossRecord>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iteration,mse,perceptual,reg,pn,total,norm_deviation\n";
  char buf[192];
  for (const LossRecord& r : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.iteration, r.loss.mse,
                  r.loss.perceptual, r.loss.reg, r.loss.pn, r.loss.total, r.norm_deviation);
    out << buf;
  }
  if (!out.good()) throw IoError("failed writing " + path.string());
}

void write_scalar_curve_csv(const fs::path& path, const char* header,
                            const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header << "\n";
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", i, values[i]);
    out << buf;
  }
  if (!out.good()) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// train-gen
// ---------------------------------------------------------------------------

struct TrainGenArgs {
  std::string config_path;
  std::string out;
  std::string hardware = "cpu";
  GanTrainConfig cfg;
  CLI::Option *o_steps = nullptr, *o_batch = nullptr, *o_lr_g = nullptr, *o_lr_d = nullptr,
              *o_drift = nullptr, *o_dataset = nullptr, *o_seed = nullptr;
};

int cmd_train_gen(TrainGenArgs& a) {
  check_hardware(a.hardware);
  if (!a.config_path.empty()) {
    const json file = load_json_file(a.config_path);
    if (file.contains("generator")) {
      try {
        a.cfg.generator = file.at("generator").get<GeneratorConfig>();
      } catch (const json::exception& e) {
        throw UsageError(std::string("config field 'generator': ") + e.what());
      }
    }
    merge_option(file, a.o_steps, "steps", a.cfg.steps);
    merge_option(file, a.o_batch, "batch_size", a.cfg.batch_size);
    merge_option(file, a.o_lr_g, "lr_generator", a.cfg.lr_generator);
    merge_option(file, a.o_lr_d, "lr_discriminator", a.cfg.lr_discriminator);
    merge_option(file, a.o_drift, "drift", a.cfg.drift);
    merge_option(file, a.o_dataset, "dataset_size", a.cfg.dataset_size);
    merge_option(file, a.o_seed, "seed", a.cfg.seed);
    merge_option(file, nullptr, "beta1", a.cfg.beta1);
    merge_option(file, nullptr, "beta2", a.cfg.beta2);
  }
  a.cfg.seed = apply_env_seed(a.cfg.seed);
  a.cfg.validate();

  const fs::path out(a.out);
  ensure_out_dir(out);
  const ToyFaceDataset data(a.cfg.generator.output_resolution, derive_seed(a.cfg.seed, "dataset"));
  const GanTrainResult<float> result = train_generator<float>(data, a.cfg);

  save_generator(out / "generator", result.generator,
                 {{"train_steps", a.cfg.steps}, {"seed", a.cfg.seed}});
  write_gan_curve_csv(out / "curve.csv", result.curve);

  json manifest{{"command", "train-gen"},
                {"config", gan_train_config_to_json(a.cfg)},
                {"checkpoint", "generator"},
                {"curve", "curve.csv"}};
  if (!result.curve.empty()) {
    manifest["final"] = {{"d_loss", result.curve.back().d_loss},
                         {"g_loss", result.curve.back().g_loss},
                         {"moment_gap", result.curve.back().moment_gap}};
  }
  write_json_file(out / "manifest.json", manifest);
  std::printf("wrote generator checkpoint to %s\n", (out / "generator").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train-encoder
// ---------------------------------------------------------------------------

struct TrainEncoderArgs {
  std::string config_path;
  std::string ckpt;
  std::string out;
  std::string hardware = "cpu";
  EncoderTrainConfig cfg;
  CLI::Option *o_steps = nullptr, *o_batch = nullptr, *o_lr = nullptr, *o_lambda = nullptr,
              *o_seed = nullptr;
};

int cmd_train_encoder(TrainEncoderArgs& a) {
  check_hardware(a.hardware);
  if (!a.config_path.empty()) {
    const json file = load_json_file(a.config_path);
    merge_option(file, a.o_steps, "steps", a.cfg.steps);
    merge_option(file, a.o_batch, "batch_size", a.cfg.batch_size);
    merge_option(file, a.o_lr, "step_size", a.cfg.step_size);
    merge_option(file, a.o_lambda, "lambda_enc", a.cfg.lambda_enc);
    merge_option(file, a.o_seed, "seed", a.cfg.seed);
  }
  a.cfg.seed = apply_env_seed(a.cfg.seed);
  a.cfg.validate();

  const Generator<float> g = load_generator<float>(a.ckpt);
  const auto fx = FeatureExtractor<float>::create(kPerceptualSeed);

  const fs::path out(a.out);
  ensure_out_dir(out);
  EncoderTrainResult<float> result = train_encoder(g, fx, a.cfg);
  save_encoder(out / "encoder", result.encoder,
               {{"train_steps", a.cfg.steps}, {"seed", a.cfg.seed}});
  write_scalar_curve_csv(out / "loss.csv", "step,total", result.loss_history);

  json manifest{{"command", "train-encoder"},
                {"generator", a.ckpt},
                {"config",
                 {{"steps", a.cfg.steps},
                  {"batch_size", a.cfg.batch_size},
                  {"step_size", a.cfg.step_size},
                  {"lambda_enc", a.cfg.lambda_enc},
                  {"seed", a.cfg.seed}}},
                {"checkpoint", "encoder"},
                {"curve", "loss.csv"}};
  if (!result.loss_history.empty()) manifest["final_loss"] = result.loss_history.back();
  write_json_file(out / "manifest.json", manifest);
  std::printf("wrote encoder checkpoint to %s\n", (out / "encoder").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// invert
// ---------------------------------------------------------------------------

struct InvertArgs {
  std::string config_path;
  std::string image;
  std::string space = "f/z+";
  std::string ckpt;
  std::string enc;
  std::string whitener;
  std::string out;
  std::string hardware = "cpu";
  bool no_encoder = false;
  bool timings = false;
  InversionConfig cfg;
  CLI::Option *o_iters = nullptr, *o_lr = nullptr, *o_lper = nullptr, *o_lreg = nullptr,
              *o_lpn = nullptr, *o_record = nullptr, *o_seed = nullptr;
};

int cmd_invert(InvertArgs& a) {
  check_hardware(a.hardware);
  if (!a.config_path.empty()) {
    const json file = load_json_file(a.config_path);
    merge_option(file, a.o_iters, "iterations", a.cfg.iterations);
    merge_option(file, a.o_lr, "step_size", a.cfg.step_size);
    merge_option(file, a.o_lper, "lambda_per", a.cfg.lambda_per);
    merge_option(file, a.o_lreg, "lambda_reg", a.cfg.lambda_reg);
    merge_option(file, a.o_lpn, "lambda_pn", a.cfg.lambda_pn);
    merge_option(file, a.o_record, "record_every", a.cfg.record_every);
    merge_option(file, a.o_seed, "seed", a.cfg.seed);
  }
  a.cfg.space = parse_space(a.space);
  a.cfg.seed = apply_env_seed(a.cfg.seed);
  a.cfg.validate();

  const Generator<float> g = load_generator<float>(a.ckpt);
  const int res = g.config().output_resolution;
  const Tensor<float> target = read_png(a.image);
  if (target.dim(1) != res || target.dim(2) != res) {
    throw UsageError("image " + a.image + " is " + std::to_string(target.dim(1)) + "x" +
                     std::to_string(target.dim(2)) + " but the generator expects " +
                     std::to_string(res) + "x" + std::to_string(res));
  }

  Encoder<float> encoder;
  const bool hybrid = is_hybrid(a.cfg.space);
  if (hybrid && a.enc.empty() && !a.no_encoder) {
    throw UsageError(std::string("space ") + space_name(a.cfg.space) +
                     " uses an encoder-initialized base; pass --enc, or --no-encoder "
                     "for the zero-init ablation");
  }
  if (!a.enc.empty()) encoder = load_encoder<float>(a.enc);

  PnWhitener whitener;
  if (has_pn_penalty(a.cfg.space)) {
    if (a.whitener.empty()) {
      throw UsageError(std::string("space ") + space_name(a.cfg.space) +
                       " needs a fitted whitener; run the whiten command and pass --whitener");
    }
    whitener = PnWhitener::load(a.whitener);
  }

  const auto fx = FeatureExtractor<float>::create(kPerceptualSeed);
  const InversionResult<float> result =
      invert(g, fx, target, a.cfg, (hybrid && !a.enc.empty()) ? &encoder : nullptr,
             has_pn_penalty(a.cfg.space) ? &whitener : nullptr);

  const fs::path out(a.out);
  ensure_out_dir(out);
  save_latent(out / "code.lat", result.code, g.config().layout());
  write_png(out / "reconstruction.png", result.reconstruction);
  write_loss_curve_csv(out / "loss.csv", result.curve);

  json manifest{{"command", "invert"},
                {"image", a.image},
                {"checkpoint", a.ckpt},
                {"encoder", a.enc.empty() ? json() : json(a.enc)},
                {"whitener", a.whitener.empty() ? json() : json(a.whitener)},
                {"config", inversion_config_to_json(a.cfg)},
                {"final_loss", loss_to_json(result.final_loss)},
                {"diverged", result.diverged},
                {"artifacts", {"code.lat", "reconstruction.png", "loss.csv"}}};
  if (result.diverged) manifest["error"] = result.error;
  if (a.timings) manifest["wall_seconds"] = result.wall_seconds;
  write_json_file(out / "manifest.json", manifest);

  if (result.diverged) {
    throw NumericError("inversion diverged: " + result.error + " (partial bundle in " +
                       out.string() + ")");
  }
  std::printf("inverted %s into %s (final mse %.6f)\n", a.image.c_str(),
              space_name(a.cfg.space), result.final_loss.mse);
  return 0;
}

// ---------------------------------------------------------------------------
// edit
// ---------------------------------------------------------------------------

struct EditArgs {
  std::string code_path;
  std::string ckpt;
  std::string bank_path;
  std::string direction;
  std::string out;
  std::string hardware = "cpu";
  std::vector<double> alphas;
};

int cmd_edit(EditArgs& a) {
  check_hardware(a.hardware);
  if (a.alphas.empty()) throw UsageError("edit: pass at least one --alpha");

  const Generator<float> g = load_generator<float>(a.ckpt);
  CodeLayout saved_layout;
  const LatentCode<float> code = load_latent(a.code_path, &saved_layout);
  const CodeLayout layout = g.config().layout();
  if (saved_layout.latent_dim != layout.latent_dim ||
      saved_layout.num_style_layers != layout.num_style_layers ||
      saved_layout.split_layer != layout.split_layer) {
    throw UsageError("code " + a.code_path + " was saved for layout d=" +
                     std::to_string(saved_layout.latent_dim) + " N=" +
                     std::to_string(saved_layout.num_style_layers) + " M=" +
                     std::to_string(saved_layout.split_layer) + " but the generator has d=" +
                     std::to_string(layout.latent_dim) + " N=" +
                     std::to_string(layout.num_style_layers) + " M=" +
                     std::to_string(layout.split_layer));
  }
  validate_code(code, layout);

  const DirectionBank bank = load_direction_bank(a.bank_path);
  const Direction* dir = nullptr;
  for (const Direction& d : bank.directions) {
    if (d.name == a.direction) {
      dir = &d;
      break;
    }
  }
  if (dir == nullptr) {
    std::string names;
    for (const Direction& d : bank.directions) {
      if (!names.empty()) names += ", ";
      names += d.name;
    }
    throw UsageError("direction '" + a.direction + "' not in " + a.bank_path +
                     " (available: " + names + ")");
  }

  const fs::path out(a.out);
  ensure_out_dir(out);
  const bool single = a.alphas.size() == 1;
  json rows = json::array();
  for (std::size_t i = 0; i < a.alphas.size(); ++i) {
    const LatentCode<float> edited = apply_edit(code, *dir, a.alphas[i]);
    const Tensor<float> image = g.synthesize(edited);
    const std::string stem = single ? "edited" : "edited_" + std::to_string(i);
    write_png(out / (stem + ".png"), image);
    save_latent(out / (stem + ".lat"), edited, layout);
    rows.push_back({{"alpha", a.alphas[i]},
                    {"image", stem + ".png"},
                    {"code", stem + ".lat"}});
  }

  write_json_file(out / "manifest.json", json{{"command", "edit"},
                                              {"code", a.code_path},
                                              {"checkpoint", a.ckpt},
                                              {"bank", a.bank_path},
                                              {"direction", dir->name},
                                              {"method", dir->method},
                                              {"edits", rows}});
  std::printf("wrote %zu edit(s) along '%s' to %s\n", a.alphas.size(), dir->name.c_str(),
              out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// directions
// ---------------------------------------------------------------------------

struct DirectionsArgs {
  std::string method;
  std::string ckpt;
  std::string out;
  std::string direction_space;
  std::string attribute = "brightness";
  std::string hardware = "cpu";
  int components = 4;
  int samples = 4096;
  int count = 4;
  std::uint64_t seed = 0;
};

/// Labels generator samples by mean rendered intensity: +1 above the sample
/// median, -1 otherwise. A deliberately simple attribute that any healthy
/// generator spreads smoothly, giving the separator something to find.
void brightness_attribute(const Generator<float>& g, int samples, std::uint64_t seed,
                          Eigen::MatrixXd& zs, Eigen::MatrixXd& ws, std::vector<int>& labels) {
  const int d = g.config().latent_dim;
  Rng rng(derive_seed(seed, "interfacegan-samples"));
  zs.resize(samples, d);
  ws.resize(samples, d);
  std::vector<double> score(static_cast<std::size_t>(samples));

  LatentCode<float> code;
  code.space = Space::kW;
  code.entries.resize(1);
  for (int i = 0; i < samples; ++i) {
    const Tensor<float> z = sphere_sample<float>(d, rng);
    const Tensor<float> w = g.map_latent(z);
    for (int k = 0; k < d; ++k) {
      zs(i, k) = static_cast<double>(z[k]);
      ws(i, k) = static_cast<double>(w[k]);
    }
    code.entries[0] = w;
    score[static_cast<std::size_t>(i)] = g.synthesize(code).mean();
  }

  std::vector<double> sorted = score;
  std::nth_element(sorted.begin(), sorted.begin() + samples / 2, sorted.end());
  const double threshold = sorted[static_cast<std::size_t>(samples) / 2];
  labels.resize(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    labels[static_cast<std::size_t>(i)] = score[static_cast<std::size_t>(i)] > threshold ? 1 : -1;
  }
}

int cmd_directions(DirectionsArgs& a) {
  check_hardware(a.hardware);
  a.seed = apply_env_seed(a.seed);
  const Generator<float> g = load_generator<float>(a.ckpt);
  const int d = g.config().latent_dim;
  const fs::path out(a.out);
  ensure_out_dir(out);

  json manifest{{"command", "directions"}, {"method", a.method}, {"checkpoint", a.ckpt},
                {"seed", a.seed}};

  if (a.method == "ganspace") {
    const GanspaceBanks banks = ganspace_directions(g, a.samples, a.components, a.seed);
    save_direction_bank(out / "ganspace_z.json", banks.z);
    save_direction_bank(out / "ganspace_w.json", banks.w);
    manifest["components"] = a.components;
    manifest["samples"] = a.samples;
    manifest["artifacts"] = {"ganspace_z.json", "ganspace_w.json"};
    std::printf("wrote %zu z / %zu w ganspace directions to %s\n", banks.z.directions.size(),
                banks.w.directions.size(), out.string().c_str());
  } else if (a.method == "interfacegan") {
    const DirectionSpace space =
        parse_direction_space(a.direction_space.empty() ? "w" : a.direction_space);
    Eigen::MatrixXd zs, ws;
    std::vector<int> labels;
    brightness_attribute(g, a.samples, a.seed, zs, ws, labels);
    const InterfaceGanFit fit = interfacegan_direction(
        space == DirectionSpace::kW ? ws : zs, labels, space, a.attribute);
    DirectionBank bank;
    bank.latent_dim = d;
    bank.directions.push_back(fit.direction);
    bank.directions.back().metadata["bias"] = fit.bias;
    bank.directions.back().metadata["train_accuracy"] = fit.train_accuracy;
    bank.directions.back().metadata["samples"] = a.samples;
    bank.provenance = {{"seed", a.seed}, {"attribute", a.attribute}};
    save_direction_bank(out / "interfacegan.json", bank);
    manifest["samples"] = a.samples;
    manifest["attribute"] = a.attribute;
    manifest["train_accuracy"] = fit.train_accuracy;
    manifest["artifacts"] = {"interfacegan.json"};
    std::printf("wrote '%s' direction (train accuracy %.3f) to %s\n", a.attribute.c_str(),
                fit.train_accuracy, out.string().c_str());
  } else if (a.method == "random") {
    const DirectionSpace space =
        parse_direction_space(a.direction_space.empty() ? "z" : a.direction_space);
    if (a.count < 1) throw UsageError("directions: --count must be >= 1");
    DirectionBank bank;
    bank.latent_dim = d;
    for (int k = 0; k < a.count; ++k) {
      Direction dir = random_direction(d, space, derive_seed(a.seed, "random/" + std::to_string(k)));
      dir.name = "random_" + std::to_string(k);
      bank.directions.push_back(std::move(dir));
    }
    bank.provenance = {{"seed", a.seed}};
    save_direction_bank(out / "random.json", bank);
    manifest["count"] = a.count;
    manifest["artifacts"] = {"random.json"};
    std::printf("wrote %d random directions to %s\n", a.count, out.string().c_str());
  } else {
    throw UsageError("unknown method '" + a.method +
                     "' (expected ganspace, interfacegan, or random)");
  }

  write_json_file(out / "manifest.json", manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// whiten
// ---------------------------------------------------------------------------

struct WhitenArgs {
  std::string ckpt;
  std::string out;
  std::string hardware = "cpu";
  int samples = 8192;
  std::uint64_t seed = 0;
};

int cmd_whiten(WhitenArgs& a) {
  check_hardware(a.hardware);
  a.seed = apply_env_seed(a.seed);
  const Generator<float> g = load_generator<float>(a.ckpt);
  const fs::path out(a.out);
  ensure_out_dir(out);

  const PnWhitener wh = fit_pn_whitener(g, a.samples, a.seed);
  wh.save(out / "whitener");
  write_json_file(out / "manifest.json", json{{"command", "whiten"},
                                              {"checkpoint", a.ckpt},
                                              {"samples", a.samples},
                                              {"seed", a.seed},
                                              {"dim", wh.dim()},
                                              {"artifacts", {"whitener"}}});
  std::printf("fitted whitener on %d samples, wrote %s\n", a.samples,
              (out / "whitener").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config_path;
  std::string ckpt;
  std::string enc;
  std::string whitener;
  std::string out;
  std::string suite = "generator";
  std::string hardware = "cpu";
  std::vector<std::string> spaces;
  std::string bank_path;
  std::string sweep_space = "f/z+";
  int targets = 8;
  int sweep_targets = 4;
  int jobs = 1;
  double alpha_limit = 2.0;
  int alpha_steps = 11;
  bool timings = false;
  std::uint64_t seed = 0;
  InversionConfig icfg;
  CLI::Option *o_iters = nullptr, *o_lr = nullptr, *o_lper = nullptr, *o_lreg = nullptr,
              *o_lpn = nullptr, *o_record = nullptr;
};

std::vector<Tensor<float>> make_eval_targets(const Generator<float>& g, const std::string& suite,
                                             int count, std::uint64_t seed) {
  if (count < 1) throw UsageError("eval: --targets must be >= 1");
  std::vector<Tensor<float>> targets;
  targets.reserve(static_cast<std::size_t>(count));
  if (suite == "generator") {
    const int d = g.config().latent_dim;
    for (int k = 0; k < count; ++k) {
      Rng rng(derive_seed(seed, "gen-target/" + std::to_string(k)));
      LatentCode<float> code;
      code.space = Space::kZ;
      code.entries.push_back(sphere_sample<float>(d, rng));
      targets.push_back(g.synthesize(code));
    }
  } else if (suite == "dataset") {
    const ToyFaceDataset data(g.config().output_resolution, derive_seed(seed, "dataset"));
    for (int k = 0; k < count; ++k) targets.push_back(data.image(k));
  } else {
    throw UsageError("unknown suite '" + suite +
                     "' (expected generator or dataset; run once per suite)");
  }
  return targets;
}

int cmd_eval(EvalArgs& a) {
  check_hardware(a.hardware);
  if (!a.config_path.empty()) {
    const json file = load_json_file(a.config_path);
    merge_option(file, a.o_iters, "iterations", a.icfg.iterations);
    merge_option(file, a.o_lr, "step_size", a.icfg.step_size);
    merge_option(file, a.o_lper, "lambda_per", a.icfg.lambda_per);
    merge_option(file, a.o_lreg, "lambda_reg", a.icfg.lambda_reg);
    merge_option(file, a.o_lpn, "lambda_pn", a.icfg.lambda_pn);
    merge_option(file, a.o_record, "record_every", a.icfg.record_every);
  }
  a.seed = apply_env_seed(a.seed);

  BenchmarkConfig bench;
  bench.inversion = a.icfg;
  bench.seed = derive_seed(a.seed, a.suite);
  bench.jobs = a.jobs;
  if (!a.spaces.empty()) {
    bench.spaces.clear();
    for (const std::string& s : a.spaces) bench.spaces.push_back(parse_space(s));
  }

  const Generator<float> g = load_generator<float>(a.ckpt);
  Encoder<float> encoder;
  const bool have_enc = !a.enc.empty();
  if (have_enc) encoder = load_encoder<float>(a.enc);
  PnWhitener whitener;
  const bool have_wh = !a.whitener.empty();
  if (have_wh) whitener = PnWhitener::load(a.whitener);

  const bool need_wh = std::any_of(bench.spaces.begin(), bench.spaces.end(),
                                   [](Space s) { return has_pn_penalty(s); });
  if (need_wh && !have_wh) {
    throw UsageError("space f/w+pn is in the benchmark but no --whitener was given");
  }

  const std::vector<Tensor<float>> targets = make_eval_targets(g, a.suite, a.targets, a.seed);
  const auto fx = FeatureExtractor<float>::create(kPerceptualSeed);

  EvalReport report = reconstruction_benchmark(g, fx, targets, bench,
                                               have_enc ? &encoder : nullptr,
                                               have_wh ? &whitener : nullptr);
  report.config["suite"] = a.suite;
  // Timings vary run to run; zero them unless asked so reruns are
  // byte-identical.
  if (!a.timings) {
    for (ReconCell& cell : report.cells) cell.wall_s = 0.0;
  }

  json sweep_info;
  if (!a.bank_path.empty()) {
    const Space sweep_space = parse_space(a.sweep_space);
    if (has_pn_penalty(sweep_space) && !have_wh) {
      throw UsageError("sweep space f/w+pn needs --whitener");
    }
    const DirectionBank bank = load_direction_bank(a.bank_path);
    const CodeLayout layout = g.config().layout();
    for (const Direction& dir : bank.directions) {
      if (dir.dim() != layout.latent_dim) {
        throw UsageError("direction '" + dir.name + "' has dimension " +
                         std::to_string(dir.dim()) + " but the generator uses " +
                         std::to_string(layout.latent_dim));
      }
      if ((dir.space == DirectionSpace::kZ) != is_z_flavored(sweep_space)) {
        throw UsageError("direction '" + dir.name + "' lives in " +
                         direction_space_name(dir.space) + " but the sweep space is " +
                         space_name(sweep_space));
      }
    }

    const int res = g.config().output_resolution;
    const IdentityMetric<float> id_metric(FeatureExtractor<float>::create(kIdentitySeed),
                                          {3, res, res});
    const std::vector<double> alphas = alpha_grid(a.alpha_limit, a.alpha_steps);
    const int n_sweep = std::min<int>(a.sweep_targets, static_cast<int>(targets.size()));
    InversionConfig scfg = a.icfg;
    scfg.space = sweep_space;
    for (int k = 0; k < n_sweep; ++k) {
      scfg.seed = derive_seed(a.seed, "sweep/" + std::to_string(k));
      const InversionResult<float> inv =
          invert(g, fx, targets[static_cast<std::size_t>(k)], scfg,
                 (is_hybrid(sweep_space) && have_enc) ? &encoder : nullptr,
                 has_pn_penalty(sweep_space) ? &whitener : nullptr);
      if (inv.diverged) {
        throw NumericError("sweep inversion of target " + std::to_string(k) +
                           " diverged: " + inv.error);
      }
      const auto points =
          editing_sweep(g, id_metric, fx, k, inv.code, bank.directions, alphas);
      report.sweep.insert(report.sweep.end(), points.begin(), points.end());
    }
    sweep_info = {{"bank", a.bank_path},
                  {"space", space_name(sweep_space)},
                  {"targets", n_sweep},
                  {"alpha_limit", a.alpha_limit},
                  {"alpha_steps", a.alpha_steps}};
    report.config["sweep"] = sweep_info;
  }

  const fs::path out(a.out);
  ensure_out_dir(out);
  write_recon_csv(out / "recon.csv", report.cells);
  if (!report.sweep.empty()) write_sweep_csv(out / "sweep.csv", report.sweep);
  write_markdown_summary(out / "summary.md", report);
  write_report_json(out / "report.json", report);

  json manifest{{"command", "eval"},
                {"checkpoint", a.ckpt},
                {"encoder", a.enc.empty() ? json() : json(a.enc)},
                {"whitener", a.whitener.empty() ? json() : json(a.whitener)},
                {"suite", a.suite},
                {"targets", a.targets},
                {"seed", a.seed},
                {"inversion", inversion_config_to_json(bench.inversion)},
                {"artifacts", {"recon.csv", "summary.md", "report.json"}}};
  if (!sweep_info.is_null()) {
    manifest["sweep"] = sweep_info;
    manifest["artifacts"].push_back("sweep.csv");
  }
  write_json_file(out / "manifest.json", manifest);

  int failures = 0;
  for (const ReconCell& c : report.cells) failures += c.failed ? 1 : 0;
  std::printf("evaluated %zu cells (%d failed) into %s\n", report.cells.size(), failures,
              out.string().c_str());
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "latent-atlas: train a small style generator, invert images into its "
      "latent spaces, and discover/apply semantic edit directions.\n"
      "Environment: LATENT_ATLAS_SEED overrides every seed.\n"
      "Exit codes: 0 ok, 2 usage, 3 numeric failure, 4 I/O."};
  app.require_subcommand(1);

  TrainGenArgs tg;
  auto* c_tg = app.add_subcommand("train-gen", "Adversarially train the generator");
  c_tg->add_option("--config", tg.config_path, "JSON config (flags override file values)");
  c_tg->add_option("--out", tg.out, "Output directory")->required();
  tg.o_steps = c_tg->add_option("--steps", tg.cfg.steps, "Training steps");
  tg.o_batch = c_tg->add_option("--batch", tg.cfg.batch_size, "Batch size");
  tg.o_lr_g = c_tg->add_option("--lr-g", tg.cfg.lr_generator, "Generator learning rate");
  tg.o_lr_d = c_tg->add_option("--lr-d", tg.cfg.lr_discriminator, "Discriminator learning rate");
  tg.o_drift = c_tg->add_option("--drift", tg.cfg.drift, "Real-logit drift penalty weight");
  tg.o_dataset = c_tg->add_option("--dataset-size", tg.cfg.dataset_size, "Toy dataset size");
  tg.o_seed = c_tg->add_option("--seed", tg.cfg.seed, "Run seed");
  c_tg->add_option("--hardware", tg.hardware, "cpu | accelerator");

  TrainEncoderArgs te;
  auto* c_te = app.add_subcommand("train-encoder", "Train the base-code encoder");
  c_te->add_option("--config", te.config_path, "JSON config (flags override file values)");
  c_te->add_option("--ckpt", te.ckpt, "Generator checkpoint directory")->required();
  c_te->add_option("--out", te.out, "Output directory")->required();
  te.o_steps = c_te->add_option("--steps", te.cfg.steps, "Training steps");
  te.o_batch = c_te->add_option("--batch", te.cfg.batch_size, "Batch size");
  te.o_lr = c_te->add_option("--lr", te.cfg.step_size, "Learning rate");
  te.o_lambda = c_te->add_option("--lambda-enc", te.cfg.lambda_enc, "Perceptual weight");
  te.o_seed = c_te->add_option("--seed", te.cfg.seed, "Run seed");
  c_te->add_option("--hardware", te.hardware, "cpu | accelerator");

  InvertArgs iv;
  auto* c_iv = app.add_subcommand("invert", "Optimize a latent code for an image");
  c_iv->add_option("--config", iv.config_path, "JSON config (flags override file values)");
  c_iv->add_option("--image", iv.image, "Target PNG")->required();
  c_iv->add_option("--space", iv.space, "Latent space (default f/z+)");
  c_iv->add_option("--ckpt", iv.ckpt, "Generator checkpoint directory")->required();
  c_iv->add_option("--enc", iv.enc, "Encoder checkpoint (hybrid base init)");
  c_iv->add_flag("--no-encoder", iv.no_encoder, "Zero-init the hybrid base instead");
  c_iv->add_option("--whitener", iv.whitener, "Whitener directory (f/w+pn only)");
  c_iv->add_option("--out", iv.out, "Output directory")->required();
  iv.o_iters = c_iv->add_option("--iters", iv.cfg.iterations, "Optimizer iterations");
  iv.o_lr = c_iv->add_option("--lr", iv.cfg.step_size, "Adam step size");
  iv.o_lper = c_iv->add_option("--lambda-per", iv.cfg.lambda_per, "Perceptual weight");
  iv.o_lreg = c_iv->add_option("--lambda-reg", iv.cfg.lambda_reg, "Base anchor weight");
  iv.o_lpn = c_iv->add_option("--lambda-pn", iv.cfg.lambda_pn, "Density penalty weight");
  iv.o_record = c_iv->add_option("--record-every", iv.cfg.record_every, "Curve cadence");
  iv.o_seed = c_iv->add_option("--seed", iv.cfg.seed, "Init seed");
  c_iv->add_flag("--timings", iv.timings, "Record wall time in the manifest");
  c_iv->add_option("--hardware", iv.hardware, "cpu | accelerator");

  EditArgs ed;
  auto* c_ed = app.add_subcommand("edit", "Apply a direction to a stored code");
  c_ed->add_option("--code", ed.code_path, "Latent code (.lat)")->required();
  c_ed->add_option("--ckpt", ed.ckpt, "Generator checkpoint directory")->required();
  c_ed->add_option("--bank", ed.bank_path, "Direction bank JSON")->required();
  c_ed->add_option("--direction", ed.direction, "Direction name in the bank")->required();
  c_ed->add_option("--alpha", ed.alphas, "Edit intensity (repeatable)")->required();
  c_ed->add_option("--out", ed.out, "Output directory")->required();
  c_ed->add_option("--hardware", ed.hardware, "cpu | accelerator");

  DirectionsArgs dr;
  auto* c_dr = app.add_subcommand("directions", "Discover semantic directions");
  c_dr->add_option("--method", dr.method, "ganspace | interfacegan | random")->required();
  c_dr->add_option("--ckpt", dr.ckpt, "Generator checkpoint directory")->required();
  c_dr->add_option("--out", dr.out, "Output directory")->required();
  c_dr->add_option("--components", dr.components, "PCA components (ganspace)");
  c_dr->add_option("--samples", dr.samples, "Latent samples to draw");
  c_dr->add_option("--count", dr.count, "Directions to emit (random)");
  c_dr->add_option("--direction-space", dr.direction_space, "z | w");
  c_dr->add_option("--attribute", dr.attribute, "Attribute name (interfacegan)");
  c_dr->add_option("--seed", dr.seed, "Sampling seed");
  c_dr->add_option("--hardware", dr.hardware, "cpu | accelerator");

  WhitenArgs wh;
  auto* c_wh = app.add_subcommand("whiten", "Fit the density whitener on mapped samples");
  c_wh->add_option("--ckpt", wh.ckpt, "Generator checkpoint directory")->required();
  c_wh->add_option("--out", wh.out, "Output directory")->required();
  c_wh->add_option("--samples", wh.samples, "Mapped samples to fit on");
  c_wh->add_option("--seed", wh.seed, "Sampling seed");
  c_wh->add_option("--hardware", wh.hardware, "cpu | accelerator");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Reconstruction benchmark and editing sweeps");
  c_ev->add_option("--config", ev.config_path, "JSON config (flags override file values)");
  c_ev->add_option("--ckpt", ev.ckpt, "Generator checkpoint directory")->required();
  c_ev->add_option("--enc", ev.enc, "Encoder checkpoint (hybrid base init)");
  c_ev->add_option("--whitener", ev.whitener, "Whitener directory (f/w+pn)");
  c_ev->add_option("--out", ev.out, "Output directory")->required();
  c_ev->add_option("--suite", ev.suite, "generator | dataset (run once per suite)");
  c_ev->add_option("--targets", ev.targets, "Number of targets");
  c_ev->add_option("--spaces", ev.spaces, "Spaces to benchmark")->delimiter(',');
  ev.o_iters = c_ev->add_option("--iters", ev.icfg.iterations, "Optimizer iterations per cell");
  ev.o_lr = c_ev->add_option("--lr", ev.icfg.step_size, "Adam step size");
  ev.o_lper = c_ev->add_option("--lambda-per", ev.icfg.lambda_per, "Perceptual weight");
  ev.o_lreg = c_ev->add_option("--lambda-reg", ev.icfg.lambda_reg, "Base anchor weight");
  ev.o_lpn = c_ev->add_option("--lambda-pn", ev.icfg.lambda_pn, "Density penalty weight");
  ev.o_record = c_ev->add_option("--record-every", ev.icfg.record_every, "Curve cadence");
  c_ev->add_option("--jobs", ev.jobs, "Parallel benchmark cells");
  c_ev->add_option("--directions", ev.bank_path, "Direction bank for the editing sweep");
  c_ev->add_option("--sweep-space", ev.sweep_space, "Space the sweep inverts into");
  c_ev->add_option("--sweep-targets", ev.sweep_targets, "Targets swept (first K)");
  c_ev->add_option("--alpha-limit", ev.alpha_limit, "Sweep extent (symmetric)");
  c_ev->add_option("--alpha-steps", ev.alpha_steps, "Sweep grid points (odd)");
  c_ev->add_flag("--timings", ev.timings, "Keep real wall times in recon.csv");
  c_ev->add_option("--seed", ev.seed, "Run seed");
  c_ev->add_option("--hardware", ev.hardware, "cpu | accelerator");

  int rc = 0;
  c_tg->callback([&] { rc = cmd_train_gen(tg); });
  c_te->callback([&] { rc = cmd_train_encoder(te); });
  c_iv->callback([&] { rc = cmd_invert(iv); });
  c_ed->callback([&] { rc = cmd_edit(ed); });
  c_dr->callback([&] { rc = cmd_directions(dr); });
  c_wh->callback([&] { rc = cmd_whiten(wh); });
  c_ev->callback([&] { rc = cmd_eval(ev); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
