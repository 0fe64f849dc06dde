#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "notifdt/common/errors.hpp"

namespace notifdt::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor. Most operations treat it as a matrix with
// rows() = shape[0] and cols() = product of the remaining extents.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape s, S fill = S(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor of shape " + shape_string(shape) + " given " + std::to_string(data.size()) +
                       " values");
    }
  }

  static Tensor scalar(S v) { return Tensor(Shape{1}, std::vector<S>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const { return rows() == 0 ? 0 : data.size() / rows(); }

  S& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const S& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  S* row(std::size_t r) { return data.data() + r * cols(); }
  const S* row(std::size_t r) const { return data.data() + r * cols(); }

  S item() const {
    if (data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape));
    return data[0];
  }
};

}  // namespace notifdt::diff
