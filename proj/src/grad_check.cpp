#include "surgtag/grad_check.hpp"

#include <cmath>

#include "surgtag/errors.hpp"

namespace surgtag {

GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<Parameter>& inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  for (const auto& p : inputs) {
    if (p.tensor.dtype() != Dtype::f64) throw ValidationError("grad_check needs f64 inputs; " + p.name + " is f32");
  }
  for (auto p : inputs) p.tensor.zero_grad();

  Tensor root = loss();
  if (!std::isfinite(root.item())) {
    report.diagnostic = "loss is not finite at the evaluation point";
    return report;
  }
  root.backward();

  for (auto p : inputs) {
    if (p.frozen) continue;
    report.inputs_checked.push_back(p.name);
    std::vector<double> analytic(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) analytic.assign(p.tensor.grad().begin(), p.tensor.grad().end());
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + options.step;
        plus = loss().item();
        values[i] = saved - options.step;
        minus = loss().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        report.diagnostic = "non-finite gradient at " + p.name + "[" + std::to_string(i) + "]";
        report.passed = false;
        return report;
      }
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.elements_checked;
      if (rel > report.max_rel_error || report.elements_checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.worst.rel_error) report.worst = {p.name, i, analytic[i], numeric, rel};
      }
    }
  }
  for (auto p : inputs) p.tensor.zero_grad();
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace surgtag
