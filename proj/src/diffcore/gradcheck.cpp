#include "notifdt/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace notifdt::diff {

namespace {

struct Eval {
  double loss;
  std::vector<std::uint8_t> branches;
};

Eval evaluate(ParameterSet<double>& params, const LossBuilder& build) {
  Graph<double> g(std::as_const(params), GradMode::kNone);
  Var root = build(g);
  const double loss = g.value(root).item();
  if (!std::isfinite(loss)) throw NumericError("check_gradients: loss is not finite");
  return {loss, g.branch_trace()};
}

}  // namespace

GradCheckReport check_gradients(ParameterSet<double>& params, const LossBuilder& build, double step) {
  params.zero_grad();
  std::vector<std::uint8_t> base_branches;
  {
    Graph<double> g(params);
    Var root = build(g);
    if (!std::isfinite(g.value(root).item())) throw NumericError("check_gradients: loss is not finite");
    g.backward(root);
    base_branches = g.branch_trace();
  }

  GradCheckReport report;
  for (auto& p : params) {
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value.data[k];
      p.value.data[k] = saved + step;
      const Eval plus = evaluate(params, build);
      p.value.data[k] = saved - step;
      const Eval minus = evaluate(params, build);
      p.value.data[k] = saved;
      if (plus.branches != base_branches || minus.branches != base_branches) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * step);
      const double analytic = p.grad.data[k];
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++report.checked;
      if (report.worst_parameter.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return report;
}

}  // namespace notifdt::diff
