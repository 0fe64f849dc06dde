#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "notifdt/diffcore/graph.hpp"

namespace notifdt::diff {

struct GradCheckReport {
  // max over checked coordinates of |analytic - numeric| / max(1, |numeric|)
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
  // Coordinates whose +/- step changed a piecewise branch (pinball kink);
  // these are excluded from max_rel_error.
  std::size_t skipped_kinks = 0;
};

// Builds a scalar loss on a fresh graph.
using LossBuilder = std::function<Var(Graph<double>&)>;

// Compares backward() against central differences for every coordinate of
// every trainable parameter. 64-bit only. Throws NumericError when the loss
// is not finite. Parameter values are restored on return.
GradCheckReport check_gradients(ParameterSet<double>& params, const LossBuilder& build, double step = 1e-5);

}  // namespace notifdt::diff
