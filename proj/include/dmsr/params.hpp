#pragma once

#include "dmsr/autodiff.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace dmsr {

/// Named parameter tensors in insertion order.
template <typename S>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<S> value) {
    if (values_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    order_.push_back(name);
    values_.emplace(name, std::move(value));
  }

  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor<S>& at(const std::string& name) const;
  Tensor<S>& at(const std::string& name);
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& [name, t] : values_) n += t.size();
    return n;
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& name : order_) out.add(name, values_.at(name).template cast<T>());
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<S>> values_;
};

template <typename S>
const Tensor<S>& ParamStore<S>::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <typename S>
Tensor<S>& ParamStore<S>::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

/// Places parameters on a tape as gradient-requiring leaves, on first use.
template <typename S>
class Binding {
 public:
  Binding(Tape<S>& tape, const ParamStore<S>& params, bool requires_grad = true)
      : tape_(tape), params_(params), requires_grad_(requires_grad) {}

  Var<S> operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    auto v = tape_.leaf(params_.at(name), requires_grad_);
    vars_.emplace(name, v);
    return v;
  }

  Tape<S>& tape() { return tape_; }
  const ParamStore<S>& params() const { return params_; }
  const std::map<std::string, Var<S>>& bound() const { return vars_; }

  /// Gradients for every parameter in the store; zeros for unused ones.
  std::map<std::string, Tensor<S>> gradients() const {
    std::map<std::string, Tensor<S>> out;
    for (const auto& name : params_.names()) {
      auto it = vars_.find(name);
      out.emplace(name, it == vars_.end() ? Tensor<S>::zeros(params_.at(name).shape()) : tape_.grad(it->second));
    }
    return out;
  }

 private:
  Tape<S>& tape_;
  const ParamStore<S>& params_;
  bool requires_grad_;
  std::map<std::string, Var<S>> vars_;
};

/// Deterministic parameter initialisation.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in +-1/sqrt(fan_in).
  template <typename S>
  Tensor<S> fan_in_uniform(Shape shape, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor<S>::uniform(std::move(shape), rng_, S(-bound), S(bound));
  }

  template <typename S>
  Tensor<S> normal(Shape shape, double stddev) {
    return Tensor<S>::normal(std::move(shape), rng_, S(0), S(stddev));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace dmsr
