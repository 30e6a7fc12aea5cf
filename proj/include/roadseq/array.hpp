#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "roadseq/error.hpp"

namespace roadseq {

// Dense row-major array of doubles. Batch dimension, when present, comes
// first. Small by design: every operator in the graph works on whole arrays.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Array() = default;

  explicit Array(std::vector<std::size_t> s)
      : shape(std::move(s)), v(numel_of(shape), 0.0) {}

  Array(std::vector<std::size_t> s, std::vector<double> values)
      : shape(std::move(s)), v(std::move(values)) {
    if (v.size() != numel_of(shape))
      throw ValidationError("array: value count does not match shape");
  }

  static Array scalar(double x) { return Array({1}, {x}); }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

// Named trainable tensor. Gradients accumulate across backward passes until
// zero_grad(); the optimizer consumes value+grad pairs.
struct Parameter {
  std::string name;
  Array value;
  Array grad;

  Parameter() = default;
  Parameter(std::string n, Array init)
      : name(std::move(n)), value(std::move(init)), grad(value.shape) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace roadseq
