#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace belieflab::numkit {

/// Dense 2-D tensor, row-major, 64-bit. Scalars are 1x1, vectors 1xn.
/// Batched activations are [batch x features].
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::array<Eigen::Index, 2>;

inline Shape shape_of(const Tensor& t) { return {t.rows(), t.cols()}; }

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

inline Tensor scalar(double v) {
  Tensor t(1, 1);
  t(0, 0) = v;
  return t;
}

inline Tensor row(std::initializer_list<double> values) {
  Tensor t(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) t(0, i++) = v;
  return t;
}

/// Raised when an operation produces NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace belieflab::numkit
