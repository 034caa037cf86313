#pragma once

// Rigid pose recovery from 3D-3D correspondences (SVD absolute orientation
// inside RANSAC) and fusion of posed point maps into one world-frame cloud.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/alignment.hpp"
#include "dyfn/geometry.hpp"

namespace dyfn {

struct CorrespondenceSet {
  Tensor src;  // 3 x N, camera frame of the query frame
  Tensor dst;  // 3 x N, world frame
  std::vector<double> weights;  // optional, empty = unweighted

  std::size_t size() const { return src.rank() == 2 ? src.dim(1) : 0; }
};

/// argmin_{R,t} sum_i w_i ||R src_i + t - dst_i||^2 with det R = +1.
PoseSE3 solve_procrustes(const CorrespondenceSet& c);
double procrustes_objective(const CorrespondenceSet& c, const PoseSE3& pose);

struct RansacConfig {
  std::size_t max_iterations = 1000;
  double inlier_threshold = 0.01;  // scene units
  double confidence = 0.999;
  std::size_t min_sample = 3;
  std::uint64_t seed = 0;
};

struct RansacStats {
  std::size_t iterations = 0;
  std::size_t best_iteration = 0;
  std::size_t inliers = 0;
  double inlier_rms = 0.0;
};

struct RansacResult {
  PoseSE3 pose;
  std::vector<std::uint8_t> inlier;
  RansacStats stats;
};

RansacResult solve_pose_ransac(const CorrespondenceSet& c, const RansacConfig& cfg);

/// Existing members of {j-1, j-5, j-21}, nearest first.
std::vector<std::size_t> reference_indices(std::size_t j);

/// Predicted point map after the sequence alignment: s * p + t * z_hat.
Tensor aligned_point_map(const Prediction& pred, const AffineAlignment& a);

struct ReferenceFrame {
  std::size_t index = 0;
  PoseSE3 pose;         // camera-to-world
  Tensor world_points;  // 3 x H x W
  Tensor mask;          // H x W
};

/// Reference frames of j with their aligned predictions in world coordinates.
/// `poses[k]` is the pose used for frame k; `known[k]` says whether it exists.
std::vector<ReferenceFrame> build_references(const Sequence& seq, std::size_t j,
                                             const std::vector<PoseSE3>& poses,
                                             const std::vector<bool>& known,
                                             const AffineAlignment& alignment);

enum class ReferenceMode { GroundTruth, Odometry };

struct FuseConfig {
  RansacConfig ransac;
  /// When > 0 the inlier threshold is this factor times the frame's median
  /// ground-truth depth, overriding ransac.inlier_threshold.
  double relative_threshold = 0.02;
  ReferenceMode mode = ReferenceMode::GroundTruth;
};

/// Supplies correspondences for frame j against the given references.
using CorrespondenceProvider = std::function<CorrespondenceSet(
    std::size_t j, const std::vector<std::size_t>& refs, const std::vector<PoseSE3>& ref_poses)>;

struct FrameResult {
  bool solved = false;
  PoseSE3 pose;
  std::vector<std::size_t> references;
  std::size_t correspondences = 0;
  std::size_t inliers = 0;
  std::string message;
};

struct Reconstruction {
  std::vector<FrameResult> frames;
  std::vector<float> xyz;                 // 3 per point
  std::vector<std::uint16_t> uv;          // 2 per point
  std::size_t solved = 0;                 // frames with a pose (frame 0 included)

  std::size_t points() const { return xyz.size() / 3; }
};

/// Sequential pose solving and fusion. Frames whose correspondences are too
/// few or yield no consensus are skipped and reported in `frames`.
Reconstruction fuse_stream(const Sequence& seq, const AffineAlignment& alignment,
                           const CorrespondenceProvider& provider, const FuseConfig& cfg);

/// Binary little-endian PLY with float x, y, z and ushort u, v.
std::string ply_bytes(const Reconstruction& r);
nlohmann::json poses_json(const Reconstruction& r);

/// Geodesic angle between two rotations, radians.
double rotation_error(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

}  // namespace dyfn
