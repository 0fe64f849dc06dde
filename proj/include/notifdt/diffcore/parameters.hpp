#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "notifdt/common/rng.hpp"
#include "notifdt/diffcore/tensor.hpp"

namespace notifdt::diff {

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool trainable = true;
};

// Ordered collection of named parameters. Order is insertion order and is
// what checkpoints and optimizers iterate over.
template <typename S>
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor<S> value, bool trainable = true);

  // Normal(0, gain / sqrt(fan_in)) initialization, seeded from rng.
  std::size_t add_fan_in(std::string name, Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0);
  std::size_t add_normal(std::string name, Shape shape, double stddev, Rng& rng);
  std::size_t add_constant(std::string name, Shape shape, S value);

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return params_[i]; }

  std::size_t index_of(std::string_view name) const;  // throws ContractError
  bool contains(std::string_view name) const;
  Parameter<S>& get(std::string_view name) { return params_[index_of(name)]; }
  const Parameter<S>& get(std::string_view name) const { return params_[index_of(name)]; }

  void zero_grad();
  // Marks trainable exactly those parameters whose name starts with one of
  // the prefixes; an empty list makes everything trainable.
  void set_trainable_prefixes(const std::vector<std::string>& prefixes);
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter<S>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Copies values between precisions; names and shapes must match.
template <typename To, typename From>
void copy_parameters(ParameterSet<To>& dst, const ParameterSet<From>& src);

}  // namespace notifdt::diff
