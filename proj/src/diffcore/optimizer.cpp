#include "notifdt/diffcore/optimizer.hpp"

#include <cmath>

#include "notifdt/common/errors.hpp"

namespace notifdt::diff {

template <typename S>
Adam<S>::Adam(const ParameterSet<S>& params, AdamOptions options) : options_(options) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

template <typename S>
double Adam<S>::step(ParameterSet<S>& params, double learning_rate) {
  if (params.size() != m_.size()) throw ContractError("Adam: parameter set changed since construction");
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (S g : p.grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("Adam: non-finite gradient norm");
  const double clip = (options_.clip_norm > 0.0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = static_cast<double>(p.grad.data[k]) * clip;
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g;
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g * g;
      const double update = learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + options_.epsilon);
      p.value.data[k] = static_cast<S>(static_cast<double>(p.value.data[k]) - update);
    }
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace notifdt::diff
