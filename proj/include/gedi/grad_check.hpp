#pragma once

#include <functional>
#include <span>
#include <vector>

#include "gedi/tensor.hpp"

namespace gedi {

/// A deterministic scalar function of some parameter tensors, built on `tape`.
using ScalarFunction = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_coefficient = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Reverse-mode gradients of f at params.
std::vector<Matrix> analytic_gradients(const ScalarFunction& f, std::span<const Matrix> params);

/// Central differences (f(p + h e) - f(p - h e)) / 2h for every coefficient.
/// Throws NumericError if f is non-finite at a perturbed point.
std::vector<Matrix> central_differences(const ScalarFunction& f, std::span<const Matrix> params,
                                        double step);

/// Denominator floor: differences below ~1e-11 are round-off in the central
/// difference, so coefficients whose true gradient is zero compare absolutely.
inline constexpr double kRelativeErrorFloor = 1e-6;

/// max over coefficients of |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport grad_check_report(const ScalarFunction& f, std::span<const Matrix> params,
                                  double step = 1e-5);

inline double grad_check(const ScalarFunction& f, std::span<const Matrix> params,
                         double step = 1e-5) {
  return grad_check_report(f, params, step).max_relative_error;
}

/// The relative-error measure used by grad_check, for reuse by other oracles.
double max_relative_error(std::span<const Matrix> a, std::span<const Matrix> b);

}  // namespace gedi
