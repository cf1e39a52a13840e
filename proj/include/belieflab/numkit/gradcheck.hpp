#pragma once

#include "belieflab/numkit/parameters.hpp"
#include "belieflab/numkit/tensor.hpp"

#include <functional>

namespace belieflab::numkit {

/// Central-difference check of an analytic gradient.
///
/// Returns max over coordinates of |analytic - fd| / (|fd| + 1e-12), where fd is
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). Throws NumericalError if any
/// evaluation is non-finite.
double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& point,
                         const Tensor& analytic, double eps);

/// Central-difference gradient of f at point.
Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& point, double eps);

/// Concatenates the listed parameters into one row vector.
Tensor flatten_parameters(const ParameterSet& params, const std::vector<ParamId>& ids);
void unflatten_parameters(ParameterSet& params, const std::vector<ParamId>& ids, const Tensor& flat);
/// Same layout as flatten_parameters; absent gradients contribute zeros.
Tensor flatten_gradients(const ParameterSet& params, const Gradients& grads, const std::vector<ParamId>& ids);

}  // namespace belieflab::numkit
