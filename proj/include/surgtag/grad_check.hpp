#pragma once

#include <functional>
#include <string>
#include <vector>

#include "surgtag/nn.hpp"

namespace surgtag {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so entries whose true gradient
  // is ~0 are judged on an absolute scale.
  double floor = 1e-6;
};

struct GradCheckEntry {
  std::string input;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t elements_checked = 0;
  GradCheckEntry worst;
  std::vector<std::string> inputs_checked;  // frozen inputs are skipped
  std::string diagnostic;                   // set when a non-finite value appears
};

/// Compare analytic gradients of a scalar function with central differences.
/// `loss` must rebuild the graph from the current values of `inputs` on every
/// call. All inputs must be f64. Per element the relative error is
/// |a - n| / max(|a|, |n|, floor); the check passes iff the maximum is below
/// the tolerance.
GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<Parameter>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace surgtag
