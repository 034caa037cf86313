#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>

#include "dyfn/rng.hpp"
#include "dyfn/tensor.hpp"

namespace dyfn::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dyfn_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace dyfn::test

#include "dyfn/geometry.hpp"

namespace dyfn::test {

/// Pinhole back-projection of a depth map (principal point at the center).
inline Tensor backproject(const Tensor& depth, const Tensor& mask, double f) {
  const std::size_t h = depth.dim(0), w = depth.dim(1);
  Tensor p(Shape{3, h, w});
  const double cx = 0.5 * static_cast<double>(w - 1), cy = 0.5 * static_cast<double>(h - 1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (mask.at(y, x) < 0.5) continue;
      const double z = depth.at(y, x);
      p.at(0, y, x) = (static_cast<double>(x) - cx) * z / f;
      p.at(1, y, x) = (static_cast<double>(y) - cy) * z / f;
      p.at(2, y, x) = z;
    }
  return p;
}

inline SequenceFrame make_frame(const Tensor& gt_depth, const Tensor& mask, const Tensor& pred_depth,
                                double f = 10.0) {
  SequenceFrame fr;
  fr.gt.depth = gt_depth;
  fr.gt.valid_mask = mask;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] < 0.5) fr.gt.depth[i] = 0.0;
  fr.gt.point_map = backproject(fr.gt.depth, mask, f);
  const std::size_t h = gt_depth.dim(0), w = gt_depth.dim(1);
  fr.gt.intrinsics = {f, 0.5 * static_cast<double>(w - 1), 0.5 * static_cast<double>(h - 1)};
  Tensor pm = backproject(pred_depth, Tensor(mask.shape(), 1.0), f);
  fr.pred = make_prediction(std::move(pm), mask);
  return fr;
}

}  // namespace dyfn::test
