#include "latent_atlas/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace latent_atlas {
namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline translation
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<SpaceAggregate> aggregate_by_space(const std::vector<ReconCell>& cells) {
  std::vector<SpaceAggregate> out;
  for (Space s : all_spaces()) {
    SpaceAggregate agg;
    agg.space = s;
    std::vector<double> mse, ssim, per;
    double sum_mse = 0.0, sum_ssim = 0.0, sum_per = 0.0;
    for (const ReconCell& c : cells) {
      if (c.space != s) continue;
      if (c.failed) {
        ++agg.failures;
        continue;
      }
      mse.push_back(c.mse);
      ssim.push_back(c.ssim);
      per.push_back(c.perceptual);
      sum_mse += c.mse;
      sum_ssim += c.ssim;
      sum_per += c.perceptual;
    }
    agg.count = static_cast<int>(mse.size());
    if (agg.count == 0 && agg.failures == 0) continue;
    if (agg.count > 0) {
      agg.median_mse = median(mse);
      agg.median_ssim = median(ssim);
      agg.median_perceptual = median(per);
      agg.mean_mse = sum_mse / agg.count;
      agg.mean_ssim = sum_ssim / agg.count;
      agg.mean_perceptual = sum_per / agg.count;
    }
    out.push_back(agg);
  }
  return out;
}

void write_recon_csv(const std::filesystem::path& path, const std::vector<ReconCell>& cells) {
  std::ofstream out = open_out(path);
  out << "target_id,space,mse,ssim,perceptual,wall_s\n";
  for (const ReconCell& c : cells) {
    out << c.target_id << ',' << space_name(c.space) << ',';
    if (c.failed) {
      out << "nan,nan,nan,nan\n";
    } else {
      out << fmt(c.mse) << ',' << fmt(c.ssim) << ',' << fmt(c.perceptual) << ','
          << fmt(c.wall_s) << '\n';
    }
  }
  finish(out, path);
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepPoint>& sweep) {
  std::ofstream out = open_out(path);
  out << "target_id,space,direction,alpha,id_sim,perceptual\n";
  for (const SweepPoint& p : sweep) {
    out << p.target_id << ',' << space_name(p.space) << ',' << p.direction << ','
        << fmt(p.alpha) << ',' << fmt(p.id_sim) << ',' << fmt(p.perceptual) << '\n';
  }
  finish(out, path);
}

void write_markdown_summary(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out = open_out(path);
  out << "# Reconstruction comparison\n\n";
  const auto aggs = aggregate_by_space(report.cells);
  if (aggs.empty()) {
    out << "No cells recorded.\n";
  } else {
    out << "| space | n | failed | median MSE | mean MSE | median SSIM | mean SSIM "
           "| median perceptual | mean perceptual |\n";
    out << "|---|---|---|---|---|---|---|---|---|\n";
    for (const SpaceAggregate& a : aggs) {
      out << "| " << space_name(a.space) << " | " << a.count << " | " << a.failures << " | "
          << fmt(a.median_mse) << " | " << fmt(a.mean_mse) << " | " << fmt(a.median_ssim)
          << " | " << fmt(a.mean_ssim) << " | " << fmt(a.median_perceptual) << " | "
          << fmt(a.mean_perceptual) << " |\n";
    }
  }
  if (!report.sweep.empty()) {
    // Digest: mean identity similarity per (space, direction) at the extreme
    // alphas, the robustness figure of merit.
    out << "\n# Editing sweep digest\n\n";
    out << "| space | direction | mean id_sim at min alpha | at alpha=0 | at max alpha |\n";
    out << "|---|---|---|---|---|\n";
    double lo = 0.0, hi = 0.0;
    for (const SweepPoint& p : report.sweep) {
      lo = std::min(lo, p.alpha);
      hi = std::max(hi, p.alpha);
    }
    std::vector<std::pair<std::string, std::string>> keys;  // (space, direction)
    for (const SweepPoint& p : report.sweep) {
      std::pair<std::string, std::string> k{space_name(p.space), p.direction};
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    for (const auto& [sp, dir] : keys) {
      double sum_lo = 0.0, sum_mid = 0.0, sum_hi = 0.0;
      int n_lo = 0, n_mid = 0, n_hi = 0;
      for (const SweepPoint& p : report.sweep) {
        if (space_name(p.space) != sp || p.direction != dir) continue;
        if (p.alpha == lo) {
          sum_lo += p.id_sim;
          ++n_lo;
        }
        if (p.alpha == 0.0) {
          sum_mid += p.id_sim;
          ++n_mid;
        }
        if (p.alpha == hi) {
          sum_hi += p.id_sim;
          ++n_hi;
        }
      }
      out << "| " << sp << " | " << dir << " | " << fmt(n_lo ? sum_lo / n_lo : NAN) << " | "
          << fmt(n_mid ? sum_mid / n_mid : NAN) << " | " << fmt(n_hi ? sum_hi / n_hi : NAN)
          << " |\n";
    }
  }
  finish(out, path);
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["config"] = report.config;
  nlohmann::json cells = nlohmann::json::array();
  for (const ReconCell& c : report.cells) {
    nlohmann::json e;
    e["target_id"] = c.target_id;
    e["space"] = space_name(c.space);
    if (c.failed) {
      e["failed"] = true;
      e["error"] = c.error;
    } else {
      e["mse"] = c.mse;
      e["ssim"] = c.ssim;
      e["perceptual"] = c.perceptual;
      e["wall_s"] = c.wall_s;
    }
    cells.push_back(std::move(e));
  }
  j["cells"] = std::move(cells);
  nlohmann::json sweep = nlohmann::json::array();
  for (const SweepPoint& p : report.sweep) {
    nlohmann::json e;
    e["target_id"] = p.target_id;
    e["space"] = space_name(p.space);
    e["direction"] = p.direction;
    e["alpha"] = p.alpha;
    e["id_sim"] = p.id_sim;
    e["perceptual"] = p.perceptual;
    sweep.push_back(std::move(e));
  }
  j["sweep"] = std::move(sweep);
  nlohmann::json aggs = nlohmann::json::array();
  for (const SpaceAggregate& a : aggregate_by_space(report.cells)) {
    nlohmann::json e;
    e["space"] = space_name(a.space);
    e["count"] = a.count;
    e["failures"] = a.failures;
    e["median_mse"] = a.median_mse;
    e["mean_mse"] = a.mean_mse;
    e["median_ssim"] = a.median_ssim;
    e["mean_ssim"] = a.mean_ssim;
    e["median_perceptual"] = a.median_perceptual;
    e["mean_perceptual"] = a.mean_perceptual;
    aggs.push_back(std::move(e));
  }
  j["aggregates"] = std::move(aggs);
  return j;
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out = open_out(path);
  out << report_to_json(report).dump(2) << "\n";
  finish(out, path);
}

}  // namespace latent_atlas
