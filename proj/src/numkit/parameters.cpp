#include "belieflab/numkit/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace belieflab::numkit {

ParamId ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<ParamId> ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

ParamId ParameterSet::id(const std::string& name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("unknown parameter: " + name);
  return *found;
}

std::vector<ParamId> ParameterSet::with_prefix(const std::string& prefix) const {
  std::vector<ParamId> out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].starts_with(prefix)) out.push_back(i);
  }
  return out;
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

void ParameterSet::set_zero() {
  for (auto& v : values_) v.setZero();
}

const Tensor& Gradients::at(ParamId id) const {
  if (!has(id)) throw std::out_of_range("no gradient for parameter id " + std::to_string(id));
  return *grads_[id];
}

void Gradients::accumulate(ParamId id, const Tensor& g) {
  if (id >= grads_.size()) grads_.resize(id + 1);
  if (grads_[id]) {
    if (grads_[id]->rows() != g.rows() || grads_[id]->cols() != g.cols()) {
      throw ShapeError("gradient shape mismatch for parameter id " + std::to_string(id));
    }
    *grads_[id] += g;
  } else {
    grads_[id] = g;
  }
}

void Gradients::scale(double factor) {
  for (auto& g : grads_) {
    if (g) *g *= factor;
  }
}

double Gradients::squared_norm(const std::vector<ParamId>& ids) const {
  double s = 0.0;
  for (ParamId id : ids) {
    if (has(id)) s += grads_[id]->squaredNorm();
  }
  return s;
}

void Gradients::merge(const Gradients& other) {
  for (std::size_t i = 0; i < other.grads_.size(); ++i) {
    if (other.grads_[i]) accumulate(i, *other.grads_[i]);
  }
}

Tensor uniform_init(Eigen::Index rows, Eigen::Index cols, double fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

}  // namespace belieflab::numkit
