#include "dyfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dyfn {

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  return fn(tape, leaves).value().item();
}

}  // namespace

GradCheckResult check_gradients(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                                double step) {
  GradCheckResult r;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = fn(tape, leaves);
    tape.backward(out);
    for (Var v : leaves) r.analytic.push_back(tape.grad(v));
  }
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor g(inputs[k].shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + step;
      const double fp = evaluate(fn, work);
      work[k][i] = x0 - step;
      const double fm = evaluate(fn, work);
      work[k][i] = x0;
      g[i] = (fp - fm) / (2.0 * step);
    }
    const double e = relative_error(r.analytic[k], g);
    r.rel_error.push_back(e);
    r.max_rel_error = std::max(r.max_rel_error, e);
    r.numeric.push_back(std::move(g));
  }
  return r;
}

}  // namespace dyfn
