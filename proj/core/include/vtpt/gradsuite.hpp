#pragma once

#include <string>
#include <vector>

#include "vtpt/grad_check.hpp"

namespace vtpt {

struct GradSuiteCheck {
  std::string name;
  double worst_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;  // worst parameter / seed
};

struct GradSuiteResult {
  std::vector<GradSuiteCheck> checks;
  bool all_passed = true;
};

/// Finite-difference verification of every differentiable primitive (full
/// component sweep, tolerance tol_primitive) and of the toy encoder-decoder
/// recovery pipelines end to end (sampled components, tolerance tol_e2e),
/// repeated across the given number of seeds. Runs in 64-bit mode.
GradSuiteResult run_gradient_suite(int seeds, double tol_primitive = 1e-4,
                                   double tol_e2e = 1e-3);

}  // namespace vtpt
