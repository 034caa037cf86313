#include "dyfn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "dyfn/error.hpp"
#include "dyfn/kernels.hpp"

namespace dyfn {

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_size(shape_) == data_.size(), ErrorKind::InvalidInput,
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_string(shape_));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorKind::InvalidInput,
          "item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == data_.size(), ErrorKind::InvalidInput,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const bool scalar_b = b.is_scalar();
  require(scalar_b || a.shape() == b.shape(), ErrorKind::InvalidInput,
          "elementwise shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
  Tensor out(a.shape());
  const auto n = static_cast<std::ptrdiff_t>(a.size());
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double x = pa[i];
    const double y = scalar_b ? pb[0] : pb[i];
    switch (op) {
      case BinaryOp::Add: po[i] = x + y; break;
      case BinaryOp::Sub: po[i] = x - y; break;
      case BinaryOp::Mul: po[i] = x * y; break;
      case BinaryOp::Div: po[i] = x / y; break;
    }
  }
  return out;
}

ChannelStats channel_stats(const Tensor& f) {
  ChannelStats s;
  kernels::channel_stats(f, s.mean, s.stddev);
  return s;
}

}  // namespace dyfn
