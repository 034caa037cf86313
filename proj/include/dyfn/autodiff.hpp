#pragma once

// Reverse-mode gradient tape over a define-by-run graph.
//
// A Tape owns every value produced while it is active. Var is a light handle
// (tape pointer + node index). Backward replays nodes in reverse creation
// order, so gradients are deterministic. A tape is confined to one thread.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "dyfn/tensor.hpp"

namespace dyfn {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Adds `grad_out`-driven contributions into the input gradients. Entries
  /// of `grad_in` are null for inputs that do not require a gradient.
  using Backward =
      std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);      // trainable
  Var constant(Tensor value);  // no gradient
  Var record(Tensor value, std::vector<Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every node.
  void backward(Var root);

  const Tensor& value(Var v) const { return nodes_.at(v.id_).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }
  /// Gradient accumulated by the last backward(); zeros if untouched.
  Tensor grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    Tensor grad;
    bool has_grad = false;
  };

  std::deque<Node> nodes_;
};

namespace ops {

Var elementwise(BinaryOp op, Var a, Var b);
inline Var add(Var a, Var b) { return elementwise(BinaryOp::Add, a, b); }
inline Var sub(Var a, Var b) { return elementwise(BinaryOp::Sub, a, b); }
inline Var mul(Var a, Var b) { return elementwise(BinaryOp::Mul, a, b); }
inline Var div(Var a, Var b) { return elementwise(BinaryOp::Div, a, b); }

/// scale * a + offset
Var affine(Var a, double scale, double offset);

enum class UnaryOp { Exp, Tanh, Sigmoid, Softplus, Abs, Square, Sqrt };
Var unary(UnaryOp op, Var a);
inline Var exp(Var a) { return unary(UnaryOp::Exp, a); }
inline Var tanh(Var a) { return unary(UnaryOp::Tanh, a); }
inline Var sigmoid(Var a) { return unary(UnaryOp::Sigmoid, a); }
inline Var softplus(Var a) { return unary(UnaryOp::Softplus, a); }
inline Var abs(Var a) { return unary(UnaryOp::Abs, a); }

Var sum(Var a);
Var mean(Var a);

/// Same-padded cross-correlation, input Ci x H x W, kernel Co x Ci x k x k.
Var conv2d(Var input, Var kernel);

/// Concatenation along the leading dimension.
Var concat(Var a, Var b);

/// v (shape {C}) combined with every spatial position of x (C x ...).
Var channel_broadcast(BinaryOp op, Var x, Var v);

/// Per-channel mean and population stddev of a C x ... tensor.
std::pair<Var, Var> channel_stats(Var x);

/// W (out x in) times x (in).
Var linear(Var w, Var x);

/// v (shape {C}) expanded to C x H x W.
Var broadcast_spatial(Var v, std::size_t h, std::size_t w);

/// Slice [begin, end) along the leading dimension.
Var slice(Var x, std::size_t begin, std::size_t end);

}  // namespace ops

}  // namespace dyfn
