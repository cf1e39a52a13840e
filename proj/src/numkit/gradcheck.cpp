#include "belieflab/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace belieflab::numkit {

Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& point, double eps) {
  Tensor grad(point.rows(), point.cols());
  Tensor x = point;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + eps;
    const double up = f(x);
    x.data()[i] = orig - eps;
    const double down = f(x);
    x.data()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericalError("finite_diff_check: non-finite evaluation");
    grad.data()[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& point,
                         const Tensor& analytic, double eps) {
  if (analytic.rows() != point.rows() || analytic.cols() != point.cols()) {
    throw ShapeError("finite_diff_check: analytic gradient " + shape_str(analytic) + " vs point " + shape_str(point));
  }
  const Tensor fd = central_difference(f, point, eps);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    const double err = std::abs(analytic.data()[i] - fd.data()[i]) / (std::abs(fd.data()[i]) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

Tensor flatten_parameters(const ParameterSet& params, const std::vector<ParamId>& ids) {
  Eigen::Index n = 0;
  for (ParamId id : ids) n += params.value(id).size();
  Tensor flat(1, n);
  Eigen::Index k = 0;
  for (ParamId id : ids) {
    const Tensor& v = params.value(id);
    flat.block(0, k, 1, v.size()) = Eigen::Map<const Tensor>(v.data(), 1, v.size());
    k += v.size();
  }
  return flat;
}

void unflatten_parameters(ParameterSet& params, const std::vector<ParamId>& ids, const Tensor& flat) {
  Eigen::Index k = 0;
  for (ParamId id : ids) {
    Tensor& v = params.value(id);
    if (k + v.size() > flat.size()) throw ShapeError("unflatten_parameters: vector too short");
    Eigen::Map<Tensor>(v.data(), 1, v.size()) = flat.block(0, k, 1, v.size());
    k += v.size();
  }
  if (k != flat.size()) throw ShapeError("unflatten_parameters: vector too long");
}

Tensor flatten_gradients(const ParameterSet& params, const Gradients& grads, const std::vector<ParamId>& ids) {
  Eigen::Index n = 0;
  for (ParamId id : ids) n += params.value(id).size();
  Tensor flat = Tensor::Zero(1, n);
  Eigen::Index k = 0;
  for (ParamId id : ids) {
    const Eigen::Index size = params.value(id).size();
    if (grads.has(id)) flat.block(0, k, 1, size) = Eigen::Map<const Tensor>(grads.at(id).data(), 1, size);
    k += size;
  }
  return flat;
}

}  // namespace belieflab::numkit
