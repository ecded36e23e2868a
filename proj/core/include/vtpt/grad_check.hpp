#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vtpt/tensor.hpp"

namespace vtpt {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  /// 0 checks every component; otherwise this many per tensor, sampled
  /// deterministically from sample_seed.
  int max_components_per_tensor = 0;
  uint64_t sample_seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t components = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string worst;  // parameter with the largest error
  std::string to_string() const;
};

/// Scalar function under test: evaluates a loss from the parameter set,
/// recording onto the given tape. Must be deterministic.
using ScalarFn = std::function<Tensor<double>(Tape<double>&, ParamSet<double>&)>;

/// Compares reverse-mode gradients against central finite differences at the
/// given point, in 64-bit arithmetic. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1). Non-finite values
/// fail the report and name the offending parameter.
GradCheckReport grad_check(const ScalarFn& fn, ParamSet<double>& point,
                           GradCheckOptions opts = {});

}  // namespace vtpt
