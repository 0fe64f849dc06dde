#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "notifdt/dtmodel/model.hpp"

namespace notifdt::svc {

// Quantile at level alpha from values predicted on a sorted grid. Exact at
// grid levels, linear between the two neighboring levels, clamped to the
// boundary entries outside [grid.front(), grid.back()].
//
// Throws ShapeError when row and grid lengths differ, ContractError when
// the grid is not strictly increasing, alpha is not in (0, 1), or the grid
// has a single level and alpha is off it.
double interpolate_quantile(std::span<const double> row, std::span<const double> grid, double alpha);

// One prompt component per reward row.
std::vector<double> interpolate_quantiles(const model::QuantileMatrix& q, std::span<const double> grid,
                                          std::span<const double> alphas);

// Sorts every row ascending in place and returns how many rows had at least
// one crossing.
std::size_t sort_quantile_rows(model::QuantileMatrix& q);

}  // namespace notifdt::svc
