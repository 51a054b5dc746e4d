#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gedi/errors.hpp"
#include "gedi/tensor.hpp"

namespace gedi {

/// Adam with bias correction.  Moments are shaped like the parameters and
/// allocated on the first step.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Updates `params` in place.  A non-finite gradient aborts the step before
  /// anything (parameters or moments) is modified.
  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, double lr) {
    if (params.size() != grads.size()) throw DimensionError("adam: parameter/gradient count");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols())
        throw DimensionError("adam: gradient shape differs from parameter " + std::to_string(i));
      if (!grads[i].allFinite())
        throw NumericError("adam: non-finite gradient for parameter " + std::to_string(i));
    }
    if (m_.empty()) {
      for (const Matrix& p : params) {
        m_.push_back(Matrix::Zero(p.rows(), p.cols()));
        v_.push_back(Matrix::Zero(p.rows(), p.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
      params[i].array() -=
          lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace gedi
