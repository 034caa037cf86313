#pragma once

// Gradient-check cases covering every differentiable tape operation.

#include <functional>
#include <vector>

#include "dyfn/autodiff.hpp"
#include "support.hpp"

namespace dyfn::test {

// Projects a tensor-valued op onto a scalar with fixed random weights so the
// check covers every output element.
inline Var project(Tape& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  Var w = tape.constant(random_tensor(out.shape(), rng));
  return ops::sum(ops::mul(out, w));
}

struct OpCase {
  const char* name;
  std::function<Var(Tape&, const std::vector<Var>&)> fn;
  std::function<std::vector<Tensor>(Rng&)> inputs;
};

inline std::vector<OpCase> op_cases() {
  auto pair34 = [](Rng& r) {
    return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({3, 4}, r)};
  };
  auto unary_case = [](const char* name, ops::UnaryOp op, double lo, double hi) {
    return OpCase{name,
                  [op](Tape& t, const std::vector<Var>& v) { return project(t, ops::unary(op, v[0]), 11); },
                  [lo, hi](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r, lo, hi)}; }};
  };
  std::vector<OpCase> cases;
  cases.push_back({"sub", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::sub(v[0], v[1]), 3); }, pair34});
  cases.push_back({"mul", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::mul(v[0], v[1]), 4); }, pair34});
  cases.push_back({"div", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::div(v[0], v[1]), 5); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({3, 4}, r, 0.5, 2.0)}; }});
  cases.push_back({"mul_scalar", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::mul(v[0], v[1]), 6); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), Tensor::scalar(r.uniform(0.5, 2.0))}; }});
  cases.push_back({"div_scalar", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::div(v[0], v[1]), 7); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), Tensor::scalar(r.uniform(0.5, 2.0))}; }});
  cases.push_back({"affine", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::affine(v[0], -1.7, 0.3), 8); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r)}; }});
  cases.push_back(unary_case("exp", ops::UnaryOp::Exp, -2, 2));
  cases.push_back(unary_case("tanh", ops::UnaryOp::Tanh, -2, 2));
  cases.push_back(unary_case("sigmoid", ops::UnaryOp::Sigmoid, -3, 3));
  cases.push_back(unary_case("softplus", ops::UnaryOp::Softplus, -3, 3));
  cases.push_back(unary_case("abs", ops::UnaryOp::Abs, 0.1, 1.0));
  cases.push_back(unary_case("square", ops::UnaryOp::Square, -2, 2));
  cases.push_back(unary_case("sqrt", ops::UnaryOp::Sqrt, 0.2, 2));
  cases.push_back({"sum", [](Tape&, const std::vector<Var>& v) { return ops::sum(ops::unary(ops::UnaryOp::Square, v[0])); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3, 3}, r)}; }});
  cases.push_back({"mean", [](Tape&, const std::vector<Var>& v) { return ops::mean(ops::unary(ops::UnaryOp::Square, v[0])); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3, 3}, r)}; }});
  cases.push_back({"conv2d", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::conv2d(v[0], v[1]), 9); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r)}; }});
  cases.push_back({"concat", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::concat(v[0], v[1]), 10); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3, 3}, r), random_tensor({1, 3, 3}, r)}; }});
  cases.push_back({"channel_mul", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::channel_broadcast(BinaryOp::Mul, v[0], v[1]), 12); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 2, 2}, r), random_tensor({3}, r)}; }});
  cases.push_back({"channel_div", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::channel_broadcast(BinaryOp::Div, v[0], v[1]), 13); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 2, 2}, r), random_tensor({3}, r, 0.5, 2)}; }});
  cases.push_back({"channel_sub", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::channel_broadcast(BinaryOp::Sub, v[0], v[1]), 14); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 2, 2}, r), random_tensor({3}, r)}; }});
  cases.push_back({"channel_stats",
                   [](Tape& t, const std::vector<Var>& v) {
                     auto [mu, sigma] = ops::channel_stats(v[0]);
                     return ops::add(project(t, mu, 15), project(t, sigma, 16));
                   },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({4, 3, 3}, r)}; }});
  cases.push_back({"linear", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::linear(v[0], v[1]), 17); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({4}, r)}; }});
  cases.push_back({"broadcast_spatial", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::broadcast_spatial(v[0], 2, 3), 18); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({3}, r)}; }});
  cases.push_back({"slice", [](Tape& t, const std::vector<Var>& v) { return project(t, ops::slice(v[0], 1, 3), 19); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({4, 2, 2}, r)}; }});
  cases.push_back({"composed",
                   [](Tape&, const std::vector<Var>& v) {
                     return ops::mean(ops::tanh(ops::conv2d(v[0], v[1])));
                   },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 4, 4}, r), random_tensor({2, 2, 3, 3}, r)}; }});
  return cases;
}

}  // namespace dyfn::test
