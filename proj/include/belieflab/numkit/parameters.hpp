#pragma once

#include "belieflab/numkit/tensor.hpp"

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace belieflab::numkit {

using ParamId = std::size_t;

/// Named, ordered collection of trainable tensors. Ids are stable indices.
class ParameterSet {
 public:
  ParamId add(std::string name, Tensor value);

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] const std::string& name(ParamId id) const { return names_.at(id); }
  [[nodiscard]] const Tensor& value(ParamId id) const { return values_.at(id); }
  Tensor& value(ParamId id) { return values_.at(id); }

  [[nodiscard]] std::optional<ParamId> find(const std::string& name) const;
  [[nodiscard]] ParamId id(const std::string& name) const;

  /// Ids whose name starts with `prefix`.
  [[nodiscard]] std::vector<ParamId> with_prefix(const std::string& prefix) const;

  [[nodiscard]] std::size_t total_values() const;

  void set_zero();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Sparse gradient map: only parameters reached by backward appear.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::size_t n) : grads_(n) {}

  [[nodiscard]] bool has(ParamId id) const { return id < grads_.size() && grads_[id].has_value(); }
  [[nodiscard]] const Tensor& at(ParamId id) const;
  void accumulate(ParamId id, const Tensor& g);
  void scale(double factor);
  [[nodiscard]] std::size_t capacity() const { return grads_.size(); }
  [[nodiscard]] double squared_norm(const std::vector<ParamId>& ids) const;

  /// Adds every gradient of `other` into this map.
  void merge(const Gradients& other);

 private:
  std::vector<std::optional<Tensor>> grads_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initializer.
Tensor uniform_init(Eigen::Index rows, Eigen::Index cols, double fan_in, std::mt19937_64& rng);

}  // namespace belieflab::numkit
