#pragma once

#include <functional>
#include <span>
#include <string>

#include "b3s/parameter.hpp"

namespace b3s {

inline constexpr double kAdagradEpsilon = 1e-10;

/// Global L2 norm of all gradients, accumulated in double in parameter order.
double global_grad_norm(std::span<Parameter* const> params);

/// Rescales every gradient by max_norm / g when the global norm g exceeds
/// max_norm. Returns the factor applied (1.0 when nothing changed).
double clip_global_norm(std::span<Parameter* const> params, double max_norm);

/// acc += g^2; value -= lr * g / (sqrt(acc) + eps); then zeroes the gradient.
void adagrad_step(std::span<Parameter* const> params, double lr);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool finite = true;
  std::string failure;  // names the parameter when f produced a non-finite value

  bool passed(double tol) const { return finite && max_rel_err <= tol; }
};

/// Scalar objective over the current parameter values. `backward` variants
/// must also accumulate analytic gradients into Parameter::grad.
using ObjectiveFn = std::function<double()>;

/// Compares analytic gradients against central differences. `analytic` is
/// called once with zeroed gradients and must leave d f / d param in
/// Parameter::grad; `f` is then evaluated at value +/- h per entry.
/// Relative error per entry is |a - n| / max(|a|, |n|, rel_floor). Central
/// differences carry O(h^2) truncation error, so gradients far below h^2 are
/// under the oracle's resolution; pass rel_floor = h * h to compare those
/// entries absolutely.
GradCheckReport finite_diff_check(const ObjectiveFn& f, const std::function<void()>& analytic,
                                  std::span<Parameter* const> params, double h = 1e-3, double rel_floor = 1e-8);

}  // namespace b3s
