#include "belieflab/numkit/adam.hpp"

#include <cmath>

namespace belieflab::numkit {

Adam::Adam(const ParameterSet& params, std::vector<ParamId> group, AdamConfig config)
    : config_(config), group_(std::move(group)) {
  for (ParamId id : group_) {
    const Tensor& p = params.value(id);
    m_.push_back(Tensor::Zero(p.rows(), p.cols()));
    v_.push_back(Tensor::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(ParameterSet& params, const Gradients& grads) {
  ++step_;
  double clip = 1.0;
  if (config_.max_grad_norm > 0.0) {
    const double norm = std::sqrt(grads.squared_norm(group_));
    if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < group_.size(); ++i) {
    const ParamId id = group_[i];
    Tensor& p = params.value(id);
    if (grads.has(id)) {
      const Tensor& g = grads.at(id);
      if (g.rows() != p.rows() || g.cols() != p.cols()) {
        throw ShapeError("adam: gradient " + shape_str(g) + " for parameter " + params.name(id) + " " + shape_str(p));
      }
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * clip * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * (clip * g).cwiseAbs2();
    } else {
      m_[i] *= config_.beta1;
      v_[i] *= config_.beta2;
    }
    p.array() -= config_.learning_rate * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + config_.epsilon);
  }
}

}  // namespace belieflab::numkit
