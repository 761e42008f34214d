#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "gridvla/common.hpp"
#include "gridvla/rng.hpp"

namespace gridvla {

// Dense row-major tensor over a flat Eigen array. Shapes are small vectors of
// dimension sizes; a scalar is shape {1}. Values are immutable by convention
// once handed to a tape.
template <typename Scalar>
struct TensorT {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  std::vector<int> shape;
  Array data;

  TensorT() = default;
  TensorT(std::vector<int> s, Array d) : shape(std::move(s)), data(std::move(d)) {
    if (size() != data.size())
      throw Error("tensor: shape " + shape_str(shape) + " does not match data length " +
                  std::to_string(data.size()));
  }

  static TensorT zeros(std::vector<int> s) {
    TensorT t;
    t.shape = std::move(s);
    t.data = Array::Zero(product(t.shape));
    return t;
  }

  static TensorT full(std::vector<int> s, Scalar v) {
    TensorT t;
    t.shape = std::move(s);
    t.data = Array::Constant(product(t.shape), v);
    return t;
  }

  static TensorT scalar(Scalar v) { return full({1}, v); }

  static TensorT from(std::vector<int> s, std::initializer_list<Scalar> vals) {
    TensorT t;
    t.shape = std::move(s);
    t.data = Array(Eigen::Index(vals.size()));
    Eigen::Index i = 0;
    for (Scalar v : vals) t.data[i++] = v;
    if (t.size() != t.data.size())
      throw Error("tensor: shape " + shape_str(t.shape) + " does not match initializer length");
    return t;
  }

  static TensorT random_uniform(std::vector<int> s, Scalar lo, Scalar hi, Rng& rng) {
    TensorT t = zeros(std::move(s));
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = Scalar(rng.uniform(lo, hi));
    return t;
  }

  static Eigen::Index product(const std::vector<int>& s) {
    Eigen::Index p = 1;
    for (int d : s) p *= d;
    return p;
  }

  Eigen::Index size() const { return product(shape); }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  bool is_scalar() const { return size() == 1; }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (!std::isfinite(double(data[i]))) return false;
    return true;
  }

  Scalar& operator[](Eigen::Index i) { return data[i]; }
  Scalar operator[](Eigen::Index i) const { return data[i]; }

  // 2D accessors (row-major).
  Scalar& at(int r, int c) { return data[Eigen::Index(r) * dim(1) + c]; }
  Scalar at(int r, int c) const { return data[Eigen::Index(r) * dim(1) + c]; }

  // 3D accessors (row-major), e.g. images indexed (row, col, channel).
  Scalar& at(int i, int j, int k) { return data[(Eigen::Index(i) * dim(1) + j) * dim(2) + k]; }
  Scalar at(int i, int j, int k) const { return data[(Eigen::Index(i) * dim(1) + j) * dim(2) + k]; }

  TensorT reshaped(std::vector<int> s) const {
    if (product(s) != size())
      throw Error("reshape: cannot view " + shape_str(shape) + " as " + shape_str(s));
    return TensorT(std::move(s), data);
  }

  Scalar value() const {
    if (!is_scalar()) throw Error("tensor: value() on non-scalar shape " + shape_str(shape));
    return data[0];
  }
};

using Tensor = TensorT<double>;

}  // namespace gridvla
