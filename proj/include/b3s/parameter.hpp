#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "b3s/tensor.hpp"

namespace b3s {

/// Starting value of every Adagrad accumulator entry.
inline constexpr float kAdagradInitialAccumulator = 0.1f;

/// A trainable weight with its gradient and Adagrad accumulator.
struct Parameter {
  Parameter(std::string name, Shape dims)
      : name(std::move(name)), value(dims), grad(dims), adagrad_acc(dims) {
    adagrad_acc.fill(kAdagradInitialAccumulator);
  }

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adagrad_acc;

  void zero_grad() { grad.fill(0.0f); }
  void reset_optimizer() { adagrad_acc.fill(kAdagradInitialAccumulator); }
};

/// Owns the Parameters of one model. Addresses stay stable for the life of
/// the store; iteration order is insertion order, which fixes the order of
/// checkpoint entries and of every reduction over parameters.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(const std::string& name, Shape dims);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t total_elements() const;

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& p : params_) fn(*p);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& p : params_) fn(static_cast<const Parameter&>(*p));
  }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grads();
  void reset_optimizer();

  /// Values only; gradients and accumulators are ignored.
  bool values_equal(const ParameterStore& other) const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Fills a parameter with uniform(-scale, scale) draws.
void init_uniform(Parameter& p, std::mt19937_64& rng, float scale);

}  // namespace b3s
