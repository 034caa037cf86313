#pragma once

// Frame and sequence containers shared by alignment, losses and
// reconstruction. Point maps are camera-frame, +z forward, 3 x H x W; depth is
// the z channel. Invalid pixels hold 0 and are excluded through the mask.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dyfn/tensor.hpp"

namespace dyfn {

struct Intrinsics {
  double f = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

struct FrameSample {
  Tensor point_map;   // 3 x H x W
  Tensor depth;       // H x W
  Tensor valid_mask;  // H x W, {0, 1}
  Intrinsics intrinsics;

  std::size_t height() const { return depth.dim(0); }
  std::size_t width() const { return depth.dim(1); }
  std::size_t valid_count() const;
};

struct Prediction {
  Tensor point_map;    // 3 x H x W
  Tensor depth;        // H x W
  Tensor mask_logits;  // H x W in [0, 1]

  /// Mask binarized at 0.5.
  Tensor binary_mask() const;
};

/// Rigid transform x -> R x + t.
struct PoseSE3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static PoseSE3 identity() { return {}; }
  PoseSE3 inverse() const;
  /// (this * rhs)(x) = this(rhs(x)).
  PoseSE3 operator*(const PoseSE3& rhs) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  /// R^T R = I and det R = +1 within `tol`.
  bool is_rigid(double tol = 1e-9) const;
};

struct SequenceFrame {
  FrameSample gt;
  std::optional<Prediction> pred;
  std::optional<Tensor> feature;  // C x H x W encoder feature, when present
};

struct Sequence {
  std::vector<SequenceFrame> frames;
  int stride = 1;
  Intrinsics intrinsics;
  std::vector<PoseSE3> poses;  // camera-to-world, optional
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t length() const { return frames.size(); }
  bool has_predictions() const;
};

/// Columns of a 3 x N tensor mapped by the pose.
Tensor apply_pose(const Tensor& points, const PoseSE3& pose);

/// Builds a Prediction from a point map (depth = z channel).
Prediction make_prediction(Tensor point_map, Tensor mask_logits);
/// Depth tensor (H x W) taken from the z channel of a 3 x H x W point map.
Tensor depth_of(const Tensor& point_map);

void validate_frame(const FrameSample& frame);
void validate_sequence(const Sequence& seq);

nlohmann::json pose_to_json(const PoseSE3& pose);
PoseSE3 pose_from_json(const nlohmann::json& j);

/// Reads `manifest.json` (or the manifest inside a directory), loading every
/// referenced NTF file relative to the manifest's directory.
Sequence load_sequence(const std::filesystem::path& manifest_or_dir);

/// Writes all tensors of `seq` plus `manifest.json` into `dir`.
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);

}  // namespace dyfn
