#pragma once

#include "belieflab/numkit/parameters.hpp"

#include <vector>

namespace belieflab::numkit {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global-norm gradient clipping over the optimized group; <= 0 disables.
  double max_grad_norm = 0.0;
};

/// Adam with bias correction over a fixed group of parameters. Moment tensors
/// mirror the parameter shapes; a parameter absent from the gradient map is
/// treated as having zero gradient.
class Adam {
 public:
  Adam(const ParameterSet& params, std::vector<ParamId> group, AdamConfig config);

  void step(ParameterSet& params, const Gradients& grads);

  [[nodiscard]] long steps() const { return step_; }
  [[nodiscard]] const AdamConfig& config() const { return config_; }
  [[nodiscard]] const std::vector<ParamId>& group() const { return group_; }
  [[nodiscard]] const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  [[nodiscard]] const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamConfig config_;
  std::vector<ParamId> group_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long step_ = 0;
};

}  // namespace belieflab::numkit
