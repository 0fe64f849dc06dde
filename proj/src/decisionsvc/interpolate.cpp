#include "notifdt/decisionsvc/interpolate.hpp"

#include <algorithm>
#include <string>

#include "notifdt/common/errors.hpp"

namespace notifdt::svc {

double interpolate_quantile(std::span<const double> row, std::span<const double> grid, double alpha) {
  if (row.size() != grid.size() || grid.empty()) {
    throw ShapeError("interpolate_quantile: row has " + std::to_string(row.size()) + " entries, grid has " +
                     std::to_string(grid.size()));
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ContractError("interpolate_quantile: alpha " + std::to_string(alpha) + " outside (0, 1)");
  }
  for (std::size_t j = 1; j < grid.size(); ++j) {
    if (!(grid[j] > grid[j - 1])) throw ContractError("interpolate_quantile: grid is not strictly increasing");
  }
  const std::size_t m = grid.size();
  for (std::size_t j = 0; j < m; ++j) {
    if (grid[j] == alpha) return row[j];
  }
  if (m < 2) {
    throw ContractError("interpolate_quantile: single-level grid cannot serve alpha " + std::to_string(alpha));
  }
  if (alpha < grid.front()) return row.front();
  if (alpha > grid.back()) return row.back();
  const auto upper = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), alpha) - grid.begin());
  const std::size_t lower = upper - 1;
  const double lambda = (grid[upper] - alpha) / (grid[upper] - grid[lower]);
  return lambda * row[lower] + (1.0 - lambda) * row[upper];
}

std::vector<double> interpolate_quantiles(const model::QuantileMatrix& q, std::span<const double> grid,
                                          std::span<const double> alphas) {
  if (alphas.size() != q.rewards) {
    throw ShapeError("interpolate_quantiles: " + std::to_string(alphas.size()) + " alphas for " +
                     std::to_string(q.rewards) + " rewards");
  }
  std::vector<double> out(q.rewards);
  for (std::size_t i = 0; i < q.rewards; ++i) out[i] = interpolate_quantile(q.row(i), grid, alphas[i]);
  return out;
}

std::size_t sort_quantile_rows(model::QuantileMatrix& q) {
  std::size_t crossed = 0;
  for (std::size_t i = 0; i < q.rewards; ++i) {
    auto first = q.values.begin() + static_cast<std::ptrdiff_t>(i * q.levels);
    auto last = first + static_cast<std::ptrdiff_t>(q.levels);
    if (!std::is_sorted(first, last)) {
      ++crossed;
      std::sort(first, last);
    }
  }
  return crossed;
}

}  // namespace notifdt::svc
