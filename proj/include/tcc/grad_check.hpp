#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "tcc/autodiff.hpp"

namespace tcc {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;  ///< components above the magnitude threshold
  bool passed = true;
};

/// Scalar function of a parameter tensor, recorded on the supplied tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, const ad::Var&)>;

/// Compares reverse-mode gradients of `f` at `params` with central differences.
/// Components whose analytic and numeric magnitudes are both <= `min_magnitude`
/// are skipped; the rest must agree to relative error `tol`.
inline GradCheckReport grad_check(const ScalarFn& f, const Tensor& params, double step = 1e-5, double tol = 1e-4,
                                  double min_magnitude = 1e-8) {
  if (!(step > 0.0)) throw ContractError("grad_check step must be positive");
  Tensor analytic;
  {
    ad::Tape tape;
    const ad::Var p = tape.leaf(params);
    const ad::Var loss = f(tape, p);
    analytic = tape.backward(loss)[p];
  }
  auto eval = [&](const Tensor& at) {
    ad::Tape tape;
    return f(tape, tape.leaf(at)).item();
  };

  GradCheckReport report;
  Tensor probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = eval(probe);
    probe[i] = orig - step;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double mag = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      report.passed = false;
      report.max_rel_error = INFINITY;
      report.worst_index = i;
      continue;
    }
    if (mag <= min_magnitude) continue;
    ++report.checked;
    const double rel = std::abs(numeric - analytic[i]) / mag;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = report.passed && report.max_rel_error < tol;
  return report;
}

}  // namespace tcc
