#pragma once

#include <vector>

#include "notifdt/diffcore/parameters.hpp"

namespace notifdt::diff {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global L2 norm cap on the gradient; <= 0 disables clipping.
  double clip_norm = 1.0;
};

template <typename S>
class Adam {
 public:
  Adam(const ParameterSet<S>& params, AdamOptions options);

  // Applies one update from the accumulated gradients of trainable
  // parameters. Returns the pre-clip gradient norm.
  double step(ParameterSet<S>& params, double learning_rate);
  double step(ParameterSet<S>& params) { return step(params, options_.learning_rate); }

  std::size_t steps_taken() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace notifdt::diff
