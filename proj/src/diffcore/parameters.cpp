#include "notifdt/diffcore/parameters.hpp"

#include <cmath>

#include "notifdt/common/errors.hpp"

namespace notifdt::diff {

template <typename S>
std::size_t ParameterSet<S>::add(std::string name, Tensor<S> value, bool trainable) {
  if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  const std::size_t idx = params_.size();
  Tensor<S> grad(value.shape);
  index_.emplace(name, idx);
  params_.push_back(Parameter<S>{std::move(name), std::move(value), std::move(grad), trainable});
  return idx;
}

template <typename S>
std::size_t ParameterSet<S>::add_fan_in(std::string name, Shape shape, std::size_t fan_in, Rng& rng,
                                        double gain) {
  return add_normal(std::move(name), std::move(shape), gain / std::sqrt(static_cast<double>(fan_in)), rng);
}

template <typename S>
std::size_t ParameterSet<S>::add_normal(std::string name, Shape shape, double stddev, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(rng.normal() * stddev);
  return add(std::move(name), std::move(t));
}

template <typename S>
std::size_t ParameterSet<S>::add_constant(std::string name, Shape shape, S value) {
  return add(std::move(name), Tensor<S>(std::move(shape), value));
}

template <typename S>
std::size_t ParameterSet<S>::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <typename S>
bool ParameterSet<S>::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

template <typename S>
void ParameterSet<S>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), S(0));
}

template <typename S>
void ParameterSet<S>::set_trainable_prefixes(const std::vector<std::string>& prefixes) {
  for (auto& p : params_) {
    if (prefixes.empty()) {
      p.trainable = true;
      continue;
    }
    p.trainable = false;
    for (const auto& pre : prefixes) {
      if (p.name.starts_with(pre)) p.trainable = true;
    }
  }
}

template <typename S>
std::size_t ParameterSet<S>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename To, typename From>
void copy_parameters(ParameterSet<To>& dst, const ParameterSet<From>& src) {
  if (dst.size() != src.size()) throw ShapeError("parameter count mismatch in copy");
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& s = src[i];
    auto& d = dst.get(s.name);
    if (d.value.shape != s.value.shape) {
      throw ShapeError("parameter '" + s.name + "': shape " + shape_string(s.value.shape) + " vs " +
                       shape_string(d.value.shape));
    }
    for (std::size_t k = 0; k < s.value.size(); ++k) d.value.data[k] = static_cast<To>(s.value.data[k]);
    d.trainable = s.trainable;
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void copy_parameters(ParameterSet<float>&, const ParameterSet<float>&);
template void copy_parameters(ParameterSet<float>&, const ParameterSet<double>&);
template void copy_parameters(ParameterSet<double>&, const ParameterSet<float>&);
template void copy_parameters(ParameterSet<double>&, const ParameterSet<double>&);

}  // namespace notifdt::diff
