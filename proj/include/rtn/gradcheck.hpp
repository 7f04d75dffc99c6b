#pragma once

// Finite-difference verification of every hand-written backward pass, run in
// double precision. Each component compares the analytic gradient of a random
// linear projection of the op's output against central differences.

#include <cstdint>
#include <string>
#include <vector>

namespace rtn {

struct GradcheckOptions {
  std::string only;  // component name; empty runs all
  std::uint64_t seed = 7;
  int trials = 20;
  double eps = 1e-5;
  double floor = 1e-4;  // denominator floor of the relative error
  double op_threshold = 1e-4;
  double model_threshold = 1e-3;
};

struct GradcheckReport {
  std::string component;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a kink
  bool passed() const { return checked > 0 && max_rel_err < threshold; }
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

const std::vector<std::string>& gradcheck_components();

/// Throws ContractError for an unknown component name.
std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opts);

}  // namespace rtn
