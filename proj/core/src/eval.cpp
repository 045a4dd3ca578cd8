#include "latent_atlas/eval.hpp"

namespace latent_atlas {

std::vector<double> alpha_grid(double limit, int steps) {
  if (limit <= 0.0) throw UsageError("alpha grid: limit must be positive");
  if (steps < 3 || steps % 2 == 0) throw UsageError("alpha grid: steps must be odd and >= 3");
  const int mid = (steps - 1) / 2;
  const double step = limit / static_cast<double>(mid);
  std::vector<double> grid(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    grid[static_cast<std::size_t>(i)] = static_cast<double>(i - mid) * step;
  }
  return grid;
}

}  // namespace latent_atlas
