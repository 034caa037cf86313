#pragma once

// Central-difference gradient checking for tape-recorded scalar functions.

#include <functional>
#include <vector>

#include "dyfn/autodiff.hpp"

namespace dyfn {

/// Builds a scalar on `tape` from leaves bound to the given inputs.
using ScalarFn = std::function<Var(Tape& tape, const std::vector<Var>& leaves)>;

struct GradCheckResult {
  std::vector<Tensor> analytic;
  std::vector<Tensor> numeric;
  std::vector<double> rel_error;  // per input
  double max_rel_error = 0.0;
};

/// ||a - n||_2 / max(||a||_2, ||n||_2, 1e-8).
double relative_error(const Tensor& analytic, const Tensor& numeric);

GradCheckResult check_gradients(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                                double step = 1e-5);

}  // namespace dyfn
