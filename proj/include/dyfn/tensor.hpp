#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dyfn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. An empty shape is a scalar holding one
/// element. Value type: copies are deep.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return shape_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  // C x H x W accessors.
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  // H x W accessors.
  double at(std::size_t y, std::size_t x) const { return data_[y * shape_[1] + x]; }
  double& at(std::size_t y, std::size_t x) { return data_[y * shape_[1] + x]; }

  double item() const;
  bool all_finite() const noexcept;
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class BinaryOp { Add, Sub, Mul, Div };

/// Elementwise a (op) b. `b` must have a's shape or be a scalar.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

/// Per-channel mean and population standard deviation over the spatial
/// positions of a C x H x W tensor (or a C x N tensor).
struct ChannelStats {
  Tensor mean;
  Tensor stddev;
};
ChannelStats channel_stats(const Tensor& f);

}  // namespace dyfn
