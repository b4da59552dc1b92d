#include "b3s/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace b3s {

double global_grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (float g : p->grad.data()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  for (Parameter* p : params)
    for (float& g : p->grad.data()) g = static_cast<float>(g * factor);
  return factor;
}

void adagrad_step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) {
    auto value = p->value.data();
    auto grad = p->grad.data();
    auto acc = p->adagrad_acc.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      const double a = static_cast<double>(acc[i]) + g * g;
      acc[i] = static_cast<float>(a);
      value[i] = static_cast<float>(value[i] - lr * g / (std::sqrt(a) + kAdagradEpsilon));
      grad[i] = 0.0f;
    }
  }
}

GradCheckReport finite_diff_check(const ObjectiveFn& f, const std::function<void()>& analytic,
                                  std::span<Parameter* const> params, double h, double rel_floor) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");
  for (Parameter* p : params) p->zero_grad();
  analytic();

  GradCheckReport report;
  for (Parameter* p : params) {
    auto value = p->value.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float orig = value[i];
      const float up = static_cast<float>(orig + h);
      const float down = static_cast<float>(orig - h);
      value[i] = up;
      const double f_up = f();
      value[i] = down;
      const double f_down = f();
      value[i] = orig;
      if (!std::isfinite(f_up) || !std::isfinite(f_down)) {
        report.finite = false;
        report.failure = "non-finite objective while perturbing " + p->name + "[" + std::to_string(i) + "]";
        return report;
      }
      // Divide by the realized step: float rounding makes it differ from 2h.
      const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = p->grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), rel_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_err || report.entries_checked == 1) {
        report.max_rel_err = rel;
        report.worst_param = p->name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return report;
}

}  // namespace b3s
