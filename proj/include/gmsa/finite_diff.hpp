#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gmsa/params.hpp"
#include "gmsa/tensor.hpp"

namespace gmsa {

struct FiniteDiffEntry {
  std::string name;
  bool trainable = false;
  double max_rel_err = 0.0;   // 0 for skipped (frozen) parameters
  double max_abs_err = 0.0;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffEntry> entries;
  double max_rel_err = 0.0;
  bool passed = false;
  double tol = 0.0;
};

// Central-difference gradient oracle. loss_fn must rebuild the scalar loss
// from the current parameter values on every call. Analytic gradients are
// taken from one taped backward pass; each trainable entry is then wiggled
// by +-h under no-grad. Relative error uses a 1e-3 floor in the denominator
// so near-zero gradients are compared absolutely.
//
// Throws std::runtime_error if two evaluations of loss_fn disagree
// (non-deterministic loss function).
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn, ParameterStore& params,
                                   double h, double tol);

}  // namespace gmsa
