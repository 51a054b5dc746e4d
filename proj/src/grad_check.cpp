#include "gedi/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gedi/errors.hpp"

namespace gedi {

namespace {

double evaluate(const ScalarFunction& f, std::span<const Matrix> params) {
  Tape tape;
  std::vector<Tensor> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.constant(p));
  const double v = f(tape, vars).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

std::vector<Matrix> analytic_gradients(const ScalarFunction& f, std::span<const Matrix> params) {
  Tape tape;
  std::vector<Tensor> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.variable(p));
  Tensor loss = f(tape, vars);
  tape.backward(loss);
  std::vector<Matrix> grads;
  grads.reserve(vars.size());
  for (const Tensor& v : vars) grads.push_back(v.grad());
  return grads;
}

std::vector<Matrix> central_differences(const ScalarFunction& f, std::span<const Matrix> params,
                                        double step) {
  if (!(step > 0.0)) throw ArgumentError("central_differences: step must be positive");
  std::vector<Matrix> work(params.begin(), params.end());
  std::vector<Matrix> out;
  out.reserve(work.size());
  for (std::size_t p = 0; p < work.size(); ++p) {
    Matrix d(work[p].rows(), work[p].cols());
    for (Index i = 0; i < work[p].size(); ++i) {
      double& x = work[p].data()[i];
      const double saved = x;
      x = saved + step;
      const double up = evaluate(f, work);
      x = saved - step;
      const double down = evaluate(f, work);
      x = saved;
      d.data()[i] = (up - down) / (2.0 * step);
    }
    out.push_back(std::move(d));
  }
  return out;
}

double max_relative_error(std::span<const Matrix> a, std::span<const Matrix> b) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: parameter count mismatch");
  double worst = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    if (a[p].size() != b[p].size()) throw DimensionError("max_relative_error: shape mismatch");
    for (Index i = 0; i < a[p].size(); ++i) {
      const double x = a[p].data()[i];
      const double y = b[p].data()[i];
      const double denom = std::max({std::abs(x), std::abs(y), kRelativeErrorFloor});
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  }
  return worst;
}

GradCheckReport grad_check_report(const ScalarFunction& f, std::span<const Matrix> params,
                                  double step) {
  const std::vector<Matrix> analytic = analytic_gradients(f, params);
  const std::vector<Matrix> numeric = central_differences(f, params, step);
  GradCheckReport report;
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    for (Index i = 0; i < analytic[p].size(); ++i) {
      const double x = analytic[p].data()[i];
      const double y = numeric[p].data()[i];
      const double err = std::abs(x - y) / std::max({std::abs(x), std::abs(y), kRelativeErrorFloor});
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_param = p;
        report.worst_coefficient = i;
        report.analytic = x;
        report.numeric = y;
      }
    }
  }
  return report;
}

}  // namespace gedi
