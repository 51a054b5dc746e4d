#pragma once

#include <string>
#include <vector>

namespace gedi {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  /// Checked model size (model composites and the meta check), else 0.
  long parameters = 0;
};

struct SuiteOptions {
  int seeds = 3;
  double step = 1e-5;
  double tolerance = 1e-4;
  double meta_tolerance = 1e-2;
  bool include_meta = true;
};

/// Central-difference checks of every differentiable primitive, of the model
/// composites (transformer layer, encoder, imputation / target / joint loss
/// through graph construction) and of the meta-gradient.  Each entry reports
/// the worst relative error over the seeds.
std::vector<CheckResult> run_gradient_suite(const SuiteOptions& options = {});

}  // namespace gedi
