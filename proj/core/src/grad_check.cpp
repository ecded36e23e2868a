#include "vtpt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vtpt {

namespace {

double eval(const ScalarFn& fn, ParamSet<double>& point) {
  Tape<double> tape(false);
  Tensor<double> loss = fn(tape, point);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: function is not scalar");
  return loss.item();
}

}  // namespace

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << "  " << e.name << ": max rel err " << e.max_rel_err << " over " << e.components
       << " components\n";
  }
  os << (passed ? "PASS" : "FAIL") << " (max rel err " << max_rel_err << ", tol " << tolerance
     << ", worst " << (worst.empty() ? "-" : worst) << ")";
  return os.str();
}

GradCheckReport grad_check(const ScalarFn& fn, ParamSet<double>& point, GradCheckOptions opts) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  // Analytic pass.
  point.zero_grads();
  Tape<double> tape(true);
  Tensor<double> loss = fn(tape, point);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: function is not scalar");
  if (!std::isfinite(loss.item())) {
    report.passed = false;
    report.worst = "(loss)";
    report.max_rel_err = std::numeric_limits<double>::infinity();
    return report;
  }
  tape.backward(loss);

  report.passed = true;
  size_t ordinal = 0;
  for (auto& [name, t] : point) {
    if (!t.requires_grad()) {
      ++ordinal;
      continue;
    }
    GradCheckEntry entry;
    entry.name = name;
    const std::vector<double> analytic = t.grad();  // copy; fn reruns must not see it

    std::vector<int64_t> comps;
    int64_t n = t.numel();
    if (opts.max_components_per_tensor <= 0 || opts.max_components_per_tensor >= n) {
      comps.resize(n);
      for (int64_t i = 0; i < n; ++i) comps[i] = i;
    } else {
      Rng r = Rng::derive(opts.sample_seed, "gradcheck-components", ordinal);
      std::set<int64_t> chosen;
      while (static_cast<int>(chosen.size()) < opts.max_components_per_tensor)
        chosen.insert(static_cast<int64_t>(r.next_below(static_cast<uint64_t>(n))));
      comps.assign(chosen.begin(), chosen.end());
    }

    for (int64_t ci : comps) {
      double saved = t.data()[ci];
      t.data()[ci] = saved + opts.step;
      double f_plus = eval(fn, point);
      t.data()[ci] = saved - opts.step;
      double f_minus = eval(fn, point);
      t.data()[ci] = saved;

      double numeric = (f_plus - f_minus) / (2.0 * opts.step);
      double a = analytic[ci];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.passed = false;
        report.worst = name;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        entry.max_rel_err = std::numeric_limits<double>::infinity();
        break;
      }
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
      ++entry.components;
    }

    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst = name;
    }
    if (entry.max_rel_err > opts.tolerance) report.passed = false;
    report.entries.push_back(std::move(entry));
    ++ordinal;
  }
  return report;
}

}  // namespace vtpt
