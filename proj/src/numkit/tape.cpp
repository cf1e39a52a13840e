#include "belieflab/numkit/tape.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace belieflab::numkit {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddRow: return "add_row";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::RowSum: return "row_sum";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::GaussianLogDensity: return "gaussian_log_density";
  }
  return "?";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

Tensor row_softmax(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

void Tape::check_var(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::logic_error("Tape: variable not on this tape");
}

const Tensor& Tape::val(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.value;
}

const Tensor& Tape::value(Var v) const {
  check_var(v);
  return val(v.id);
}

double Tape::scalar_value(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw ShapeError("scalar_value: tensor is " + shape_str(t));
  return t(0, 0);
}

Var Tape::push(Node node) {
  if (node.external == nullptr && !node.value.allFinite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op_name(node.kind));
  }
  nodes_.push_back(std::move(node));
  backward_done_ = false;
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.track = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(const ParameterSet& params, ParamId id) {
  if (params_ == nullptr) {
    params_ = &params;
  } else if (params_ != &params) {
    throw std::logic_error("Tape: parameters from two different sets");
  }
  if (auto it = param_leaf_.find(id); it != param_leaf_.end()) return Var{it->second};
  Node n;
  n.kind = OpKind::Parameter;
  n.param = id;
  n.external = &params.value(id);
  if (!n.external->allFinite()) throw NumericalError("non-finite parameter " + params.name(id));
  Var v = push(std::move(n));
  param_leaf_.emplace(id, v.id);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  check_var(a);
  check_var(b);
  const Tensor& x = val(a.id);
  const Tensor& y = val(b.id);
  if (x.cols() != y.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(x) + " * " + shape_str(y));
  }
  Node n;
  n.kind = OpKind::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.value.noalias() = x * y;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  check_var(a);
  check_var(b);
  require_same_shape(val(a.id), val(b.id), "add");
  Node n;
  n.kind = OpKind::Add;
  n.a = a.id;
  n.b = b.id;
  n.value = val(a.id) + val(b.id);
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var b) {
  check_var(a);
  check_var(b);
  const Tensor& x = val(a.id);
  const Tensor& r = val(b.id);
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("add_row: shape mismatch " + shape_str(x) + " + " + shape_str(r));
  }
  Node n;
  n.kind = OpKind::AddRow;
  n.a = a.id;
  n.b = b.id;
  n.value = x;
  n.value.rowwise() += r.row(0);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check_var(a);
  check_var(b);
  require_same_shape(val(a.id), val(b.id), "sub");
  Node n;
  n.kind = OpKind::Sub;
  n.a = a.id;
  n.b = b.id;
  n.value = val(a.id) - val(b.id);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check_var(a);
  check_var(b);
  require_same_shape(val(a.id), val(b.id), "mul");
  Node n;
  n.kind = OpKind::Mul;
  n.a = a.id;
  n.b = b.id;
  n.value = val(a.id).cwiseProduct(val(b.id));
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  check_var(a);
  Node n;
  n.kind = OpKind::Scale;
  n.a = a.id;
  n.scalar = factor;
  n.value = val(a.id) * factor;
  return push(std::move(n));
}

Var Tape::add_scalar(Var a, double c) {
  check_var(a);
  Node n;
  n.kind = OpKind::AddScalar;
  n.a = a.id;
  n.value = val(a.id).array() + c;
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Tanh;
  n.a = a.id;
  n.value = val(a.id).array().tanh();
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Relu;
  n.a = a.id;
  n.value = val(a.id).cwiseMax(0.0);
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Exp;
  n.a = a.id;
  n.value = val(a.id).array().exp();
  return push(std::move(n));
}

Var Tape::log(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Log;
  n.a = a.id;
  n.value = val(a.id).array().log();
  return push(std::move(n));
}

Var Tape::square(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Square;
  n.a = a.id;
  n.value = val(a.id).array().square();
  return push(std::move(n));
}

Var Tape::softmax(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Softmax;
  n.a = a.id;
  n.value = row_softmax(val(a.id));
  return push(std::move(n));
}

Var Tape::log_softmax(Var a) {
  check_var(a);
  const Tensor& x = val(a.id);
  Node n;
  n.kind = OpKind::LogSoftmax;
  n.a = a.id;
  n.value.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    n.value.row(r) = x.row(r).array() - lse;
  }
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Sum;
  n.a = a.id;
  n.value = scalar(val(a.id).sum());
  return push(std::move(n));
}

Var Tape::mean(Var a) {
  check_var(a);
  const Tensor& x = val(a.id);
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  Node n;
  n.kind = OpKind::Mean;
  n.a = a.id;
  n.value = scalar(x.mean());
  return push(std::move(n));
}

Var Tape::row_sum(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::RowSum;
  n.a = a.id;
  n.value = val(a.id).rowwise().sum();
  return push(std::move(n));
}

Var Tape::slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  check_var(a);
  const Tensor& x = val(a.id);
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: range out of bounds for " + shape_str(x));
  }
  Node n;
  n.kind = OpKind::SliceCols;
  n.a = a.id;
  n.i0 = begin;
  n.i1 = count;
  n.value = x.middleCols(begin, count);
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index rows = -1;
  Eigen::Index cols = 0;
  for (Var p : parts) {
    check_var(p);
    const Tensor& x = val(p.id);
    if (rows >= 0 && x.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    rows = x.rows();
    cols += x.cols();
  }
  Node n;
  n.kind = OpKind::ConcatCols;
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Tensor& x = val(p.id);
    n.value.middleCols(at, x.cols()) = x;
    at += x.cols();
    n.parts.push_back(p.id);
  }
  return push(std::move(n));
}

Var Tape::gaussian_log_density(Var x, Var mean, Var log_var) {
  check_var(x);
  check_var(mean);
  check_var(log_var);
  const Tensor& xv = val(x.id);
  const Tensor& mv = val(mean.id);
  const Tensor& lv = val(log_var.id);
  require_same_shape(xv, mv, "gaussian_log_density");
  require_same_shape(xv, lv, "gaussian_log_density");
  Node n;
  n.kind = OpKind::GaussianLogDensity;
  n.a = x.id;
  n.b = mean.id;
  n.c = log_var.id;
  n.value = -0.5 * (kLog2Pi + lv.array() + (xv - mv).array().square() * (-lv.array()).exp());
  return push(std::move(n));
}

Var Tape::linear(Var x, const ParameterSet& params, ParamId weight, ParamId bias) {
  return add_row(matmul(x, param(params, weight)), param(params, bias));
}

void Tape::accumulate(std::uint32_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (n.kind == OpKind::Constant && !n.track) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

template <class Expr>
void Tape::accumulate_expr(std::uint32_t id, const Expr& g) {
  Node& n = nodes_[id];
  if (n.kind == OpKind::Constant && !n.track) return;
  if (!n.has_grad) {
    n.grad.noalias() = g;
    n.has_grad = true;
  } else {
    n.grad.noalias() += g;
  }
}

Gradients Tape::backward(Var output) {
  check_var(output);
  if (val(output.id).size() != 1) {
    throw ShapeError("backward: output must be scalar, got " + shape_str(val(output.id)));
  }
  return backward(output, scalar(1.0));
}

Gradients Tape::backward(Var output, const Tensor& seed) {
  check_var(output);
  require_same_shape(val(output.id), seed, "backward seed");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  nodes_[output.id].grad = seed;
  nodes_[output.id].has_grad = true;

  for (std::int64_t i = output.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    const Tensor& g = n.grad;
    switch (n.kind) {
      case OpKind::Constant:
      case OpKind::Parameter:
        break;
      case OpKind::MatMul: {
        accumulate_expr(n.a, g * val(n.b).transpose());
        accumulate_expr(n.b, val(n.a).transpose() * g);
        break;
      }
      case OpKind::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case OpKind::AddRow:
        accumulate(n.a, g);
        accumulate_expr(n.b, g.colwise().sum());
        break;
      case OpKind::Sub:
        accumulate(n.a, g);
        accumulate_expr(n.b, -g);
        break;
      case OpKind::Mul:
        accumulate_expr(n.a, g.cwiseProduct(val(n.b)));
        accumulate_expr(n.b, g.cwiseProduct(val(n.a)));
        break;
      case OpKind::Scale:
        accumulate_expr(n.a, g * n.scalar);
        break;
      case OpKind::AddScalar:
        accumulate(n.a, g);
        break;
      case OpKind::Tanh:
        accumulate_expr(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case OpKind::Relu:
        accumulate_expr(n.a, (g.array() * (val(n.a).array() > 0.0).cast<double>()).matrix());
        break;
      case OpKind::Exp:
        accumulate_expr(n.a, g.cwiseProduct(n.value));
        break;
      case OpKind::Log:
        accumulate_expr(n.a, (g.array() / val(n.a).array()).matrix());
        break;
      case OpKind::Square:
        accumulate_expr(n.a, (2.0 * g.array() * val(n.a).array()).matrix());
        break;
      case OpKind::Softmax: {
        const Eigen::VectorXd dot = g.cwiseProduct(n.value).rowwise().sum();
        Tensor d = g;
        d.colwise() -= dot;
        accumulate_expr(n.a, d.cwiseProduct(n.value));
        break;
      }
      case OpKind::LogSoftmax: {
        const Eigen::VectorXd gsum = g.rowwise().sum();
        Tensor soft = n.value.array().exp();
        soft.array().colwise() *= gsum.array();
        accumulate_expr(n.a, g - soft);
        break;
      }
      case OpKind::Sum:
        accumulate_expr(n.a, Tensor::Constant(val(n.a).rows(), val(n.a).cols(), g(0, 0)));
        break;
      case OpKind::Mean: {
        const Tensor& x = val(n.a);
        accumulate_expr(n.a, Tensor::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
        break;
      }
      case OpKind::RowSum: {
        const Tensor& x = val(n.a);
        Tensor d(x.rows(), x.cols());
        d.colwise() = Eigen::VectorXd(g.col(0));
        accumulate(n.a, d);
        break;
      }
      case OpKind::SliceCols: {
        const Tensor& x = val(n.a);
        Tensor d = Tensor::Zero(x.rows(), x.cols());
        d.middleCols(n.i0, n.i1) = g;
        accumulate(n.a, d);
        break;
      }
      case OpKind::ConcatCols: {
        Eigen::Index at = 0;
        for (std::uint32_t p : n.parts) {
          const Eigen::Index w = val(p).cols();
          accumulate_expr(p, g.middleCols(at, w));
          at += w;
        }
        break;
      }
      case OpKind::GaussianLogDensity: {
        const auto diff = (val(n.a) - val(n.b)).array();
        const auto prec = (-val(n.c).array()).exp();
        const Tensor dx = (-g.array() * diff * prec).matrix();
        accumulate(n.a, dx);
        accumulate_expr(n.b, -dx);
        accumulate_expr(n.c, (g.array() * (-0.5 + 0.5 * diff.square() * prec)).matrix());
        break;
      }
    }
  }

  Gradients out(params_ != nullptr ? params_->size() : 0);
  for (const auto& [pid, node_id] : param_leaf_) {
    const Node& n = nodes_[node_id];
    if (!n.has_grad) continue;
    if (!n.grad.allFinite()) throw NumericalError("non-finite gradient for parameter " + params_->name(pid));
    out.accumulate(pid, n.grad);
  }
  backward_done_ = true;
  return out;
}

const Tensor* Tape::grad(Var v) const {
  check_var(v);
  if (!backward_done_) return nullptr;
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

}  // namespace belieflab::numkit
