#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mindhouse/util/check.hpp"

namespace mindhouse::ndnet {

/// Row-major extents. Rank 0 denotes a scalar (numel 1).
struct Shape {
  std::vector<int> dims;

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) {}
  explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

  int rank() const { return static_cast<int>(dims.size()); }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
  }

  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims.size(); ++i) {
      if (i) os << 'x';
      os << dims[i];
    }
    os << ']';
    return os.str();
  }
};

/// Dense row-major tensor. Working precision is float; gradient checking
/// re-executes the same code with S = double.
template <typename S>
struct TensorT {
  Shape shape;
  std::vector<S> data;

  TensorT() = default;
  TensorT(Shape s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {
    check(static_cast<int64_t>(data.size()) == shape.numel(),
          "tensor data length " + std::to_string(data.size()) +
              " does not match shape " + shape.str());
  }

  static TensorT zeros(Shape s) {
    const auto n = s.numel();
    return TensorT(std::move(s), std::vector<S>(static_cast<size_t>(n), S(0)));
  }

  static TensorT full(Shape s, S v) {
    const auto n = s.numel();
    return TensorT(std::move(s), std::vector<S>(static_cast<size_t>(n), v));
  }

  static TensorT scalar(S v) { return TensorT(Shape{}, std::vector<S>{v}); }

  static TensorT vector(std::vector<S> d) {
    const int n = static_cast<int>(d.size());
    return TensorT(Shape{n}, std::move(d));
  }

  /// One-hot row of length n.
  static TensorT one_hot(int n, int index) {
    auto t = zeros(Shape{n});
    check(index >= 0 && index < n, "one_hot index out of range");
    t.data[static_cast<size_t>(index)] = S(1);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  S item() const {
    check(data.size() == 1, "item() on tensor of shape " + shape.str());
    return data[0];
  }

  S& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  S at(int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool all_finite() const {
    for (S v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename S2>
  TensorT<S2> cast() const {
    TensorT<S2> out;
    out.shape = shape;
    out.data.reserve(data.size());
    for (S v : data) out.data.push_back(static_cast<S2>(v));
    return out;
  }
};

using Tensor = TensorT<float>;

}  // namespace mindhouse::ndnet
