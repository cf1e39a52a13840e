#pragma once

#include "belieflab/numkit/parameters.hpp"
#include "belieflab/numkit/tensor.hpp"

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace belieflab::numkit {

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  [[nodiscard]] bool valid() const { return id != UINT32_MAX; }
};

enum class OpKind : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  Add,
  AddRow,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Tanh,
  Relu,
  Exp,
  Log,
  Square,
  Softmax,
  LogSoftmax,
  Sum,
  Mean,
  RowSum,
  SliceCols,
  ConcatCols,
  GaussianLogDensity,
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents always
/// precede children and the graph is acyclic by construction. Every op checks its
/// result for non-finite values.
///
/// A tape binds to at most one ParameterSet; each parameter gets a single leaf so
/// gradients from time-unrolled reuse accumulate there.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Non-parameter leaf that still receives a gradient (readable via grad()).
  Var variable(Tensor value);
  Var param(const ParameterSet& params, ParamId id);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// a[B x n] + b[1 x n], broadcast over rows.
  Var add_row(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var add_scalar(Var a, double c);
  Var tanh(Var a);
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  /// Row-wise softmax.
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var sum(Var a);
  Var mean(Var a);
  /// [B x n] -> [B x 1]
  Var row_sum(Var a);
  Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
  Var concat_cols(const std::vector<Var>& parts);
  /// Elementwise log N(x; mean, exp(log_var)).
  Var gaussian_log_density(Var x, Var mean, Var log_var);

  /// Copies the value into a fresh constant; no gradient flows through.
  Var detach(Var a) { return constant(value(a)); }

  /// Affine layer x W + b with W [in x out] and b [1 x out].
  Var linear(Var x, const ParameterSet& params, ParamId weight, ParamId bias);

  [[nodiscard]] const Tensor& value(Var v) const;
  [[nodiscard]] double scalar_value(Var v) const;
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] OpKind kind(Var v) const { return nodes_.at(v.id).kind; }

  /// d output / d parameter for every parameter leaf reachable from `output`.
  /// `output` must be a scalar (1x1); seed 1.
  Gradients backward(Var output);
  Gradients backward(Var output, const Tensor& seed);

  /// Gradient of the last backward pass with respect to an arbitrary node.
  [[nodiscard]] const Tensor* grad(Var v) const;

 private:
  struct Node {
    OpKind kind{};
    std::uint32_t a = UINT32_MAX;
    std::uint32_t b = UINT32_MAX;
    std::uint32_t c = UINT32_MAX;
    double scalar = 0.0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    ParamId param = 0;
    const Tensor* external = nullptr;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool track = false;
    std::vector<std::uint32_t> parts;
  };

  Var push(Node node);
  const Tensor& val(std::uint32_t id) const;
  void accumulate(std::uint32_t id, const Tensor& g);
  template <class Expr>
  void accumulate_expr(std::uint32_t id, const Expr& g);
  void check_var(Var v) const;

  std::vector<Node> nodes_;
  const ParameterSet* params_ = nullptr;
  std::unordered_map<ParamId, std::uint32_t> param_leaf_;
  bool backward_done_ = false;
};

}  // namespace belieflab::numkit
