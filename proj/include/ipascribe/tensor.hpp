#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ipascribe/errors.hpp"

namespace ipascribe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major tensor with an optional same-shape gradient buffer.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty when no gradient is tracked

  Tensor() = default;
  explicit Tensor(Shape s, S fill = S(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape))
      throw ShapeMismatch("tensor data length " + std::to_string(data.size()) + " != " + shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }

  bool all_finite() const {
    for (const S& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;

/// Views a tensor as a rows x cols matrix over its data.
template <typename S>
MatMap<S> as_matrix(std::vector<S>& v, std::size_t rows, std::size_t cols) {
  return MatMap<S>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename S>
ConstMatMap<S> as_matrix(const std::vector<S>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<S>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename S>
void require_shape(const Tensor<S>& t, const Shape& expected, const char* what) {
  if (t.shape != expected)
    throw ShapeMismatch(std::string(what) + ": expected " + shape_string(expected) + ", got " +
                        shape_string(t.shape));
}

template <typename S>
void require_rank(const Tensor<S>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_string(t.shape));
}

}  // namespace ipascribe
