#include "latent_atlas/editing.hpp"

#include <algorithm>
#include <fstream>

namespace latent_atlas {
namespace {

constexpr const char* kBankFormat = "latent-atlas/dir-v1";

double norm_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Flips eigenvector columns so the largest-magnitude coordinate is positive,
// making the decomposition reproducible across sample orderings.
void canonicalize_columns(Eigen::MatrixXd& v) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0.0) v.col(c) = -v.col(c);
  }
}

}  // namespace

Direction make_direction(std::string name, std::string method, DirectionSpace space,
                         std::vector<double> raw) {
  const double n = norm_of(raw);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError("direction '" + name + "' has zero or non-finite norm");
  }
  for (double& x : raw) x /= n;
  Direction dir;
  dir.name = std::move(name);
  dir.method = std::move(method);
  dir.space = space;
  dir.vec = std::move(raw);
  dir.metadata["raw_norm"] = n;
  return dir;
}

void save_direction_bank(const std::filesystem::path& path, const DirectionBank& bank) {
  nlohmann::json j;
  j["format"] = kBankFormat;
  j["latent_dim"] = bank.latent_dim;
  j["provenance"] = bank.provenance;
  nlohmann::json dirs = nlohmann::json::array();
  for (const Direction& d : bank.directions) {
    nlohmann::json e;
    e["name"] = d.name;
    e["method"] = d.method;
    e["space"] = direction_space_name(d.space);
    e["vector"] = d.vec;
    e["metadata"] = d.metadata;
    dirs.push_back(std::move(e));
  }
  j["directions"] = std::move(dirs);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

DirectionBank load_direction_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed direction bank " + path.string() + ": " + e.what());
  }
  if (!j.contains("format") || j["format"] != kBankFormat) {
    throw IoError(path.string() + " is not a " + std::string(kBankFormat) + " file");
  }
  DirectionBank bank;
  try {
    bank.latent_dim = j.at("latent_dim").get<int>();
    bank.provenance = j.value("provenance", nlohmann::json::object());
    for (const auto& e : j.at("directions")) {
      Direction d;
      d.name = e.at("name").get<std::string>();
      d.method = e.at("method").get<std::string>();
      d.space = parse_direction_space(e.at("space").get<std::string>());
      d.vec = e.at("vector").get<std::vector<double>>();
      d.metadata = e.value("metadata", nlohmann::json::object());
      bank.directions.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed direction bank " + path.string() + ": " + e.what());
  }
  for (const Direction& d : bank.directions) {
    if (d.dim() != bank.latent_dim) {
      throw IoError("direction '" + d.name + "' dimension mismatch in " + path.string());
    }
    const double n = norm_of(d.vec);
    if (std::abs(n - 1.0) > 1e-4) {
      throw IoError("direction '" + d.name + "' is not unit norm in " + path.string());
    }
  }
  return bank;
}

GanspaceBanks ganspace_from_samples(const Eigen::MatrixXd& zs, const Eigen::MatrixXd& ws,
                                    int num_components) {
  const Eigen::Index n = ws.rows();
  const Eigen::Index d = ws.cols();
  if (zs.rows() != n || zs.cols() != d) {
    throw UsageError("ganspace_from_samples: z/w sample matrices must have matching shapes");
  }
  if (n < 2 * d) throw UsageError("ganspace_from_samples: too few samples for a stable PCA");
  if (num_components < 1 || num_components > d) {
    throw UsageError("ganspace_from_samples: num_components must lie in [1, dim]");
  }

  const Eigen::RowVectorXd mean = ws.colwise().mean();
  const Eigen::MatrixXd centered = ws.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.adjoint() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) {
    throw NumericError("ganspace_from_samples: eigendecomposition failed");
  }
  // Descending eigenvalue order, canonical column signs.
  Eigen::VectorXd evals = eig.eigenvalues().reverse();
  Eigen::MatrixXd v = eig.eigenvectors().rowwise().reverse();
  canonicalize_columns(v);

  GanspaceBanks banks;
  banks.z.latent_dim = static_cast<int>(d);
  banks.w.latent_dim = static_cast<int>(d);
  nlohmann::json skipped = nlohmann::json::array();

  const double eval_floor = 1e-10 * std::max(evals(0), 0.0);
  // Coordinates of every sample in the component basis: x_j = V^T (w_j - mean).
  const Eigen::MatrixXd coords = centered * v;
  for (int k = 0; k < num_components; ++k) {
    const double ssq = coords.col(k).squaredNorm();
    if (evals(k) <= eval_floor || ssq <= 0.0) {
      skipped.push_back(k);
      continue;
    }
    const std::string name = "pc" + std::to_string(k);

    std::vector<double> wdir(static_cast<std::size_t>(d));
    Eigen::VectorXd::Map(wdir.data(), d) = v.col(k);
    Direction dw = make_direction(name, "ganspace", DirectionSpace::kW, std::move(wdir));
    dw.metadata["eigenvalue"] = evals(k);
    dw.metadata["component"] = k;
    banks.w.directions.push_back(std::move(dw));

    // Separable least squares for the z preimage of component k:
    // argmin_n sum_j |x_j^k n - z_j|^2  =>  n = sum_j x_j^k z_j / sum_j (x_j^k)^2.
    const Eigen::VectorXd num = zs.transpose() * coords.col(k);
    std::vector<double> zdir(static_cast<std::size_t>(d));
    Eigen::VectorXd::Map(zdir.data(), d) = num / ssq;
    Direction dz = make_direction(name, "ganspace", DirectionSpace::kZ, std::move(zdir));
    dz.metadata["eigenvalue"] = evals(k);
    dz.metadata["component"] = k;
    banks.z.directions.push_back(std::move(dz));
  }

  for (auto* bank : {&banks.z, &banks.w}) {
    bank->provenance["method"] = "ganspace";
    bank->provenance["num_samples"] = static_cast<std::int64_t>(n);
    bank->provenance["num_components"] = num_components;
    if (!skipped.empty()) bank->provenance["skipped_components"] = skipped;
  }
  return banks;
}

InterfaceGanFit interfacegan_direction(const Eigen::MatrixXd& codes,
                                       const std::vector<int>& labels,
                                       DirectionSpace space, const std::string& name) {
  const Eigen::Index n = codes.rows();
  const Eigen::Index d = codes.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw UsageError("interfacegan_direction: label count does not match sample count");
  }
  if (n < 4) throw UsageError("interfacegan_direction: too few samples");
  Eigen::VectorXd y(n);
  int pos = 0, neg = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l == 1) {
      y(i) = 1.0;
      ++pos;
    } else if (l == -1 || l == 0) {
      y(i) = -1.0;
      ++neg;
    } else {
      throw UsageError("interfacegan_direction: labels must be +1/-1 (or 0/1)");
    }
  }
  if (pos == 0 || neg == 0) {
    throw UsageError("interfacegan_direction: need samples from both classes");
  }

  // Full-batch hinge + L2, Adam. Deterministic: zero init, fixed schedule.
  constexpr int kIters = 800;
  constexpr double kLr = 0.05;
  constexpr double kL2 = 1e-3;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  Eigen::VectorXd mw = Eigen::VectorXd::Zero(d), vw = Eigen::VectorXd::Zero(d);
  double mb = 0.0, vb = 0.0;
  Eigen::VectorXd gw(d);
  for (int it = 1; it <= kIters; ++it) {
    const Eigen::VectorXd margin = y.array() * (codes * w).array() + y.array() * b;
    gw = kL2 * w;
    double gb = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (margin(i) < 1.0) {
        gw -= y(i) / static_cast<double>(n) * codes.row(i).transpose();
        gb -= y(i) / static_cast<double>(n);
      }
    }
    mw = kBeta1 * mw + (1.0 - kBeta1) * gw;
    vw = kBeta2 * vw.array() + (1.0 - kBeta2) * gw.array().square();
    mb = kBeta1 * mb + (1.0 - kBeta1) * gb;
    vb = kBeta2 * vb + (1.0 - kBeta2) * gb * gb;
    const double c1 = 1.0 - std::pow(kBeta1, it);
    const double c2 = 1.0 - std::pow(kBeta2, it);
    w.array() -= kLr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + kEps);
    b -= kLr * (mb / c1) / (std::sqrt(vb / c2) + kEps);
  }
  if (!w.allFinite() || !std::isfinite(b)) {
    throw NumericError("interfacegan_direction: separator fit diverged");
  }

  int correct = 0;
  const Eigen::VectorXd scores = codes * w;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = scores(i) + b;
    if ((s >= 0.0 ? 1.0 : -1.0) == y(i)) ++correct;
  }

  std::vector<double> raw(static_cast<std::size_t>(d));
  Eigen::VectorXd::Map(raw.data(), d) = w;
  InterfaceGanFit fit;
  fit.direction = make_direction(name, "interfacegan", space, std::move(raw));
  const double wnorm = w.norm();
  fit.bias = b / (wnorm > 0.0 ? wnorm : 1.0);
  fit.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  fit.direction.metadata["train_accuracy"] = fit.train_accuracy;
  fit.direction.metadata["bias"] = fit.bias;
  fit.direction.metadata["num_samples"] = static_cast<std::int64_t>(n);
  return fit;
}

Direction random_direction(int d, DirectionSpace space, std::uint64_t seed) {
  if (d < 1) throw UsageError("random_direction: dimension must be positive");
  Rng rng(derive_seed(seed, "random-direction"));
  std::vector<double> raw(static_cast<std::size_t>(d));
  for (double& x : raw) x = 0.2 * rng.gaussian();
  return make_direction("random" + std::to_string(seed), "random", space, std::move(raw));
}

}  // namespace latent_atlas
