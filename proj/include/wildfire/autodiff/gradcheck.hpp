#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wildfire/autodiff/tensor.hpp"

namespace wildfire::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Compares analytic gradients of the scalar f() with respect to every
/// element of `params` against central differences (f(x+h) - f(x-h)) / 2h.
///
/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// vanishing gradients from turning round-off into spurious failures.
template <class F>
GradCheckReport finite_difference_check(F&& f, std::vector<Tensor<double>> params, double h = 1e-4,
                                        double tolerance = 1e-4, double floor = 1e-3) {
  for (auto& p : params) {
    if (!p.requires_grad()) throw Error("finite_difference_check: parameter does not require a gradient");
    p.clear_grad();
  }
  {
    Tensor<double> loss = f();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (!p.has_grad()) throw Error("finite_difference_check: parameter is detached from the loss");
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f().item();
      data[i] = saved - h;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_param = k;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace wildfire::ad
