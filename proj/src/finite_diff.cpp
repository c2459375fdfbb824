#include "gmsa/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmsa {

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn, ParameterStore& params,
                                   double h, double tol) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");

  const auto eval = [&loss_fn]() {
    NoGradGuard ng;
    return loss_fn().scalar();
  };

  const double probe1 = eval();
  const double probe2 = eval();
  if (probe1 != probe2) {
    throw std::runtime_error("finite_diff_check: loss function is not deterministic (" +
                             std::to_string(probe1) + " vs " + std::to_string(probe2) + ")");
  }

  // one taped pass for the analytic gradients
  params.zero_grads();
  tape().clear();
  Tensor loss = loss_fn();
  backward(loss);

  FiniteDiffReport report;
  report.tol = tol;
  for (auto& item : params.items()) {
    FiniteDiffEntry entry;
    entry.name = item.name;
    entry.trainable = item.tensor.requires_grad();
    if (entry.trainable) {
      auto& values = item.tensor.data();
      const bool had_grad = item.tensor.has_grad();
      for (size_t i = 0; i < values.size(); ++i) {
        const double analytic = had_grad ? item.tensor.grad()[i] : 0.0;
        const double saved = values[i];
        values[i] = saved + h;
        const double fp = eval();
        values[i] = saved - h;
        const double fm = eval();
        values[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double abs_err = std::fabs(analytic - numeric);
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
        entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
        entry.max_rel_err = std::max(entry.max_rel_err, abs_err / denom);
      }
      report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    }
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_err <= tol;
  params.zero_grads();
  return report;
}

}  // namespace gmsa
