#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_atlas/spaces.hpp"

namespace latent_atlas {

/// One (target, space) reconstruction measurement. Failed cells keep their
/// slot in the table with the error message preserved.
struct ReconCell {
  int target_id = 0;
  Space space = Space::kZ;
  bool failed = false;
  std::string error;
  double mse = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  double wall_s = 0.0;
};

/// One point of an editing sweep curve.
struct SweepPoint {
  int target_id = 0;
  Space space = Space::kZ;
  std::string direction;
  double alpha = 0.0;
  double id_sim = 0.0;
  double perceptual = 0.0;
};

/// Per-space aggregates over the successful cells.
struct SpaceAggregate {
  Space space = Space::kZ;
  int count = 0;
  int failures = 0;
  double median_mse = 0.0, mean_mse = 0.0;
  double median_ssim = 0.0, mean_ssim = 0.0;
  double median_perceptual = 0.0, mean_perceptual = 0.0;
};

struct EvalReport {
  nlohmann::json config = nlohmann::json::object();
  std::vector<ReconCell> cells;
  std::vector<SweepPoint> sweep;
};

/// Median of a sample (mean of the middle pair for even sizes).
double median(std::vector<double> values);

/// Aggregates successful cells per space, ordered as in all_spaces().
std::vector<SpaceAggregate> aggregate_by_space(const std::vector<ReconCell>& cells);

/// recon.csv: target_id,space,mse,ssim,perceptual,wall_s. Metrics print with
/// six decimals; failed cells carry "nan" fields. Output is byte-stable for
/// identical inputs.
void write_recon_csv(const std::filesystem::path& path, const std::vector<ReconCell>& cells);

/// sweep.csv: target_id,space,direction,alpha,id_sim,perceptual.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepPoint>& sweep);

/// Markdown summary: per-space comparison table (median and mean metrics)
/// plus a sweep digest when sweep points are present.
void write_markdown_summary(const std::filesystem::path& path, const EvalReport& report);

/// Full report as JSON (config snapshot, cells, sweep, aggregates).
nlohmann::json report_to_json(const EvalReport& report);
void write_report_json(const std::filesystem::path& path, const EvalReport& report);

}  // namespace latent_atlas
