#include "dyfn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dyfn/error.hpp"
#include "dyfn/kernels.hpp"

namespace dyfn {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    require(in.tape_ == this, ErrorKind::InvalidInput, "operand recorded on another tape");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  require(root.tape_ == this, ErrorKind::InvalidInput, "root belongs to another tape");
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }
  Node& r = nodes_[root.id_];
  r.grad = Tensor(r.value.shape(), 1.0);
  r.has_grad = true;

  std::vector<Tensor*> grad_in;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    grad_in.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      if (!src.requires_grad) {
        grad_in.push_back(nullptr);
        continue;
      }
      if (!src.has_grad) {
        src.grad = Tensor(src.value.shape(), 0.0);
        src.has_grad = true;
      }
      grad_in.push_back(&src.grad);
    }
    n.backward(n.grad, grad_in);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id_);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

namespace ops {

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  const auto n = static_cast<std::ptrdiff_t>(dst.size());
  double* d = dst.data().data();
  const double* s = src.data().data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (std::ptrdiff_t i = 0; i < n; ++i) d[i] += s[i];
}

Tape& tape_of(Var a) {
  require(a.valid(), ErrorKind::InvalidInput, "operation on an unbound Var");
  return *a.tape();
}

}  // namespace

Var elementwise(BinaryOp op, Var a, Var b) {
  Tape& t = tape_of(a);
  Tensor out = dyfn::elementwise(op, a.value(), b.value());
  const Tensor* av = &a.value();
  const Tensor* bv = &b.value();
  const bool scalar_b = bv->is_scalar();
  return t.record(std::move(out), {a, b},
                  [op, av, bv, scalar_b](const Tensor& g, std::span<Tensor* const> gi) {
    const std::size_t n = g.size();
    if (gi[0]) {
      Tensor& ga = *gi[0];
      for (std::size_t i = 0; i < n; ++i) {
        const double y = scalar_b ? (*bv)[0] : (*bv)[i];
        switch (op) {
          case BinaryOp::Add:
          case BinaryOp::Sub: ga[i] += g[i]; break;
          case BinaryOp::Mul: ga[i] += g[i] * y; break;
          case BinaryOp::Div: ga[i] += g[i] / y; break;
        }
      }
    }
    if (gi[1]) {
      Tensor& gb = *gi[1];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = scalar_b ? 0 : i;
        const double x = (*av)[i];
        const double y = (*bv)[j];
        switch (op) {
          case BinaryOp::Add: gb[j] += g[i]; break;
          case BinaryOp::Sub: gb[j] -= g[i]; break;
          case BinaryOp::Mul: gb[j] += g[i] * x; break;
          case BinaryOp::Div: gb[j] -= g[i] * x / (y * y); break;
        }
      }
    }
  });
}

Var affine(Var a, double scale, double offset) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * a.value()[i] + offset;
  return t.record(std::move(out), {a}, [scale](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += scale * g[i];
  });
}

namespace {

double softplus_value(double x) {
  // log(1 + e^x) without overflow.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var unary(UnaryOp op, Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (op) {
      case UnaryOp::Exp: out[i] = std::exp(v); break;
      case UnaryOp::Tanh: out[i] = std::tanh(v); break;
      case UnaryOp::Sigmoid: out[i] = sigmoid_value(v); break;
      case UnaryOp::Softplus: out[i] = softplus_value(v); break;
      case UnaryOp::Abs: out[i] = std::abs(v); break;
      case UnaryOp::Square: out[i] = v * v; break;
      case UnaryOp::Sqrt: out[i] = std::sqrt(v); break;
    }
  }
  const Tensor* xv = &a.value();
  return t.record(std::move(out), {a}, [op, xv](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    Tensor& ga = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = (*xv)[i];
      double d = 0.0;
      switch (op) {
        case UnaryOp::Exp: d = std::exp(x); break;
        case UnaryOp::Tanh: {
          const double y = std::tanh(x);
          d = 1.0 - y * y;
          break;
        }
        case UnaryOp::Sigmoid: {
          const double y = sigmoid_value(x);
          d = y * (1.0 - y);
          break;
        }
        case UnaryOp::Softplus: d = sigmoid_value(x); break;
        case UnaryOp::Abs: d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
        case UnaryOp::Square: d = 2.0 * x; break;
        case UnaryOp::Sqrt: d = x > 0.0 ? 0.5 / std::sqrt(x) : 0.0; break;
      }
      ga[i] += g[i] * d;
    }
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Tensor::scalar(s), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (double& v : gi[0]->data()) v += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return affine(sum(a), 1.0 / n, 0.0);
}

Var conv2d(Var input, Var kernel) {
  Tape& t = tape_of(input);
  Tensor out = kernels::conv2d(input.value(), kernel.value());
  const Tensor* in = &input.value();
  const Tensor* w = &kernel.value();
  return t.record(std::move(out), {input, kernel},
                  [in, w](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) add_into(*gi[0], kernels::conv2d_grad_input(g, *w));
    if (gi[1]) add_into(*gi[1], kernels::conv2d_grad_kernel(g, *in, w->dim(2)));
  });
}

Var concat(Var a, Var b) {
  Tape& t = tape_of(a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.size() == sb.size() && !sa.empty() &&
              std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1),
          ErrorKind::InvalidInput,
          "concat shape mismatch " + shape_string(sa) + " vs " + shape_string(sb));
  Shape s = sa;
  s[0] += sb[0];
  std::vector<double> data(a.value().vec());
  data.insert(data.end(), b.value().vec().begin(), b.value().vec().end());
  const std::size_t na = a.value().size();
  return t.record(Tensor(std::move(s), std::move(data)), {a, b},
                  [na](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0])
      for (std::size_t i = 0; i < na; ++i) (*gi[0])[i] += g[i];
    if (gi[1])
      for (std::size_t i = na; i < g.size(); ++i) (*gi[1])[i - na] += g[i];
  });
}

Var channel_broadcast(BinaryOp op, Var x, Var v) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& vv = v.value();
  require(xv.rank() >= 2 && vv.rank() == 1 && vv.size() == xv.dim(0),
          ErrorKind::InvalidInput,
          "channel_broadcast expects C x ... and {C}, got " + shape_string(xv.shape()) +
              " and " + shape_string(vv.shape()));
  const std::size_t c = xv.dim(0);
  const std::size_t n = xv.size() / c;
  Tensor out(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) {
      const double a = xv[ch * n + i];
      const double b = vv[ch];
      double& o = out[ch * n + i];
      switch (op) {
        case BinaryOp::Add: o = a + b; break;
        case BinaryOp::Sub: o = a - b; break;
        case BinaryOp::Mul: o = a * b; break;
        case BinaryOp::Div: o = a / b; break;
      }
    }
  const Tensor* xp = &x.value();
  const Tensor* vp = &v.value();
  return t.record(std::move(out), {x, v},
                  [op, xp, vp, c, n](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double b = (*vp)[ch];
      double gb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = ch * n + i;
        const double a = (*xp)[k];
        double da = 0.0, db = 0.0;
        switch (op) {
          case BinaryOp::Add: da = 1.0; db = 1.0; break;
          case BinaryOp::Sub: da = 1.0; db = -1.0; break;
          case BinaryOp::Mul: da = b; db = a; break;
          case BinaryOp::Div: da = 1.0 / b; db = -a / (b * b); break;
        }
        if (gi[0]) (*gi[0])[k] += g[k] * da;
        gb += g[k] * db;
      }
      if (gi[1]) (*gi[1])[ch] += gb;
    }
  });
}

std::pair<Var, Var> channel_stats(Var x) {
  Tape& t = tape_of(x);
  Tensor m, s;
  kernels::channel_stats(x.value(), m, s);
  const std::size_t c = x.value().dim(0);
  const std::size_t n = x.value().size() / c;
  const Tensor* xp = &x.value();
  Tensor m_copy = m;
  Tensor s_copy = s;
  Var mu = t.record(std::move(m), {x}, [c, n](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n; ++i) (*gi[0])[ch * n + i] += g[ch] / static_cast<double>(n);
  });
  // d sigma / d x_i = (x_i - mean) / (n * sigma); zero when sigma == 0.
  Var sigma = t.record(std::move(s), {x},
                       [c, n, xp, m = std::move(m_copy), sd = std::move(s_copy)](
                           const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (sd[ch] <= 0.0) continue;
      const double scale = g[ch] / (static_cast<double>(n) * sd[ch]);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = ch * n + i;
        (*gi[0])[k] += scale * ((*xp)[k] - m[ch]);
      }
    }
  });
  return {mu, sigma};
}

Var linear(Var w, Var x) {
  Tape& t = tape_of(w);
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  require(wv.rank() == 2 && xv.rank() == 1 && wv.dim(1) == xv.size(), ErrorKind::InvalidInput,
          "linear shape mismatch " + shape_string(wv.shape()) + " x " + shape_string(xv.shape()));
  const std::size_t rows = wv.dim(0), cols = wv.dim(1);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wv[r * cols + c] * xv[c];
    out[r] = acc;
  }
  const Tensor* wp = &w.value();
  const Tensor* xp = &x.value();
  return t.record(std::move(out), {w, x},
                  [wp, xp, rows, cols](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        if (gi[0]) (*gi[0])[r * cols + c] += g[r] * (*xp)[c];
        if (gi[1]) (*gi[1])[c] += g[r] * (*wp)[r * cols + c];
      }
  });
}

Var broadcast_spatial(Var v, std::size_t h, std::size_t w) {
  Tape& t = tape_of(v);
  const Tensor& vv = v.value();
  require(vv.rank() == 1, ErrorKind::InvalidInput, "broadcast_spatial expects a vector");
  const std::size_t c = vv.size();
  const std::size_t n = h * w;
  Tensor out(Shape{c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = vv[ch];
  return t.record(std::move(out), {v}, [c, n](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += g[ch * n + i];
      (*gi[0])[ch] += s;
    }
  });
}

Var slice(Var x, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(x);
  const Shape& s = x.shape();
  require(!s.empty() && begin < end && end <= s[0], ErrorKind::InvalidInput,
          "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
              shape_string(s));
  const std::size_t inner = x.value().size() / s[0];
  Shape out_shape = s;
  out_shape[0] = end - begin;
  const auto first = x.value().vec().begin() + static_cast<std::ptrdiff_t>(begin * inner);
  const auto last = x.value().vec().begin() + static_cast<std::ptrdiff_t>(end * inner);
  const std::size_t offset = begin * inner;
  return t.record(Tensor(std::move(out_shape), std::vector<double>(first, last)), {x},
                  [offset](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[offset + i] += g[i];
  });
}

}  // namespace ops

}  // namespace dyfn
