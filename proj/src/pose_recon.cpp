#include "dyfn/pose_recon.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <cstring>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "dyfn/error.hpp"
#include "dyfn/rng.hpp"

namespace dyfn {

namespace {

Eigen::Vector3d column(const Tensor& t, std::size_t i) {
  const std::size_t n = t.dim(1);
  return {t[i], t[n + i], t[2 * n + i]};
}

void check_set(const CorrespondenceSet& c) {
  require(c.src.rank() == 2 && c.src.dim(0) == 3 && c.src.shape() == c.dst.shape(),
          ErrorKind::InvalidInput, "correspondences must be paired 3 x N tensors");
  require(c.weights.empty() || c.weights.size() == c.size(), ErrorKind::InvalidInput,
          "weight count differs from correspondence count");
}

PoseSE3 procrustes_subset(const CorrespondenceSet& c, const std::vector<std::size_t>& idx) {
  double wsum = 0.0;
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (std::size_t i : idx) {
    const double w = c.weights.empty() ? 1.0 : c.weights[i];
    wsum += w;
    cs += w * column(c.src, i);
    cd += w * column(c.dst, i);
  }
  require(wsum > 0.0, ErrorKind::DegenerateGeometry, "correspondence weights sum to zero");
  cs /= wsum;
  cd /= wsum;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i : idx) {
    const double w = c.weights.empty() ? 1.0 : c.weights[i];
    h += w * (column(c.src, i) - cs) * (column(c.dst, i) - cd).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-10 * sv(0))
    fail(ErrorKind::DegenerateGeometry, "correspondences are collinear or coincident");
  const Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  PoseSE3 p;
  p.rotation = v * d * u.transpose();
  p.translation = cd - p.rotation * cs;
  return p;
}

double residual(const CorrespondenceSet& c, const PoseSE3& p, std::size_t i) {
  return (p.apply(column(c.src, i)) - column(c.dst, i)).norm();
}

}  // namespace

PoseSE3 solve_procrustes(const CorrespondenceSet& c) {
  check_set(c);
  require(c.size() >= 3, ErrorKind::InsufficientData,
          "procrustes needs >= 3 correspondences, got " + std::to_string(c.size()));
  std::vector<std::size_t> idx(c.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return procrustes_subset(c, idx);
}

double procrustes_objective(const CorrespondenceSet& c, const PoseSE3& pose) {
  double o = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double w = c.weights.empty() ? 1.0 : c.weights[i];
    o += w * (pose.apply(column(c.src, i)) - column(c.dst, i)).squaredNorm();
  }
  return o;
}

RansacResult solve_pose_ransac(const CorrespondenceSet& c, const RansacConfig& cfg) {
  check_set(c);
  require(cfg.inlier_threshold > 0.0 && cfg.confidence > 0.0 && cfg.confidence < 1.0 &&
              cfg.min_sample >= 3,
          ErrorKind::InvalidInput, "invalid RANSAC configuration");
  const std::size_t n = c.size();
  require(n >= cfg.min_sample, ErrorKind::InsufficientData,
          "RANSAC needs >= " + std::to_string(cfg.min_sample) + " correspondences, got " +
              std::to_string(n));

  Rng rng(cfg.seed);
  RansacResult best;
  std::size_t best_count = 0;
  bool any_model = false;
  double needed = static_cast<double>(cfg.max_iterations);
  std::vector<std::size_t> sample;
  std::size_t it = 0;
  for (; it < cfg.max_iterations && static_cast<double>(it) < needed; ++it) {
    sample.clear();
    while (sample.size() < cfg.min_sample) {
      const std::size_t k = rng.index(n);
      if (std::find(sample.begin(), sample.end(), k) == sample.end()) sample.push_back(k);
    }
    PoseSE3 model;
    try {
      model = procrustes_subset(c, sample);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateGeometry) throw;
      continue;
    }
    any_model = true;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) count += residual(c, model, i) < cfg.inlier_threshold;
    if (count > best_count) {  // strict: earliest iteration wins ties
      best_count = count;
      best.pose = model;
      best.stats.best_iteration = it;
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double p_fail = 1.0 - std::pow(w, static_cast<double>(cfg.min_sample));
      if (p_fail <= 0.0)
        needed = 0.0;
      else if (p_fail < 1.0)
        needed = std::log(1.0 - cfg.confidence) / std::log(p_fail);
    }
  }
  best.stats.iterations = it;
  if (!any_model) fail(ErrorKind::DegenerateGeometry, "every RANSAC sample was degenerate");
  if (best_count < 3)
    fail(ErrorKind::NoConsensus, "no model with >= 3 inliers (best " + std::to_string(best_count) + ")");

  auto mask_of = [&](const PoseSE3& p) {
    std::vector<std::uint8_t> m(n);
    for (std::size_t i = 0; i < n; ++i) m[i] = residual(c, p, i) < cfg.inlier_threshold;
    return m;
  };
  best.inlier = mask_of(best.pose);
  for (int round = 0; round < 5; ++round) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (best.inlier[i]) idx.push_back(i);
    if (idx.size() < 3) break;
    PoseSE3 refit;
    try {
      refit = procrustes_subset(c, idx);
    } catch (const Error&) {
      break;
    }
    auto m = mask_of(refit);
    if (std::count(m.begin(), m.end(), 1) < 3) break;
    best.pose = refit;
    if (m == best.inlier) break;
    best.inlier = std::move(m);
  }
  double ss = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (best.inlier[i]) {
      const double r = residual(c, best.pose, i);
      ss += r * r;
      ++k;
    }
  best.stats.inliers = k;
  best.stats.inlier_rms = k ? std::sqrt(ss / static_cast<double>(k)) : 0.0;
  return best;
}

std::vector<std::size_t> reference_indices(std::size_t j) {
  std::vector<std::size_t> r;
  for (std::size_t back : {1u, 5u, 21u})
    if (j >= back) r.push_back(j - back);
  return r;
}

Tensor aligned_point_map(const Prediction& pred, const AffineAlignment& a) {
  Tensor out = pred.point_map;
  const std::size_t hw = out.size() / 3;
  for (double& v : out.data()) v *= a.scale;
  for (std::size_t i = 0; i < hw; ++i) out[2 * hw + i] += a.shift;
  return out;
}

namespace {

Tensor to_world(const Tensor& pm, const PoseSE3& pose) {
  const std::size_t hw = pm.size() / 3;
  return apply_pose(pm.reshaped({3, hw}), pose).reshaped(pm.shape());
}

}  // namespace

std::vector<ReferenceFrame> build_references(const Sequence& seq, std::size_t j,
                                             const std::vector<PoseSE3>& poses,
                                             const std::vector<bool>& known,
                                             const AffineAlignment& alignment) {
  std::vector<ReferenceFrame> out;
  for (std::size_t k : reference_indices(j)) {
    if (k >= known.size() || !known[k]) continue;
    const auto& fr = seq.frames.at(k);
    require(fr.pred.has_value(), ErrorKind::Validation, "reference frame has no prediction");
    ReferenceFrame r;
    r.index = k;
    r.pose = poses[k];
    r.world_points = to_world(aligned_point_map(*fr.pred, alignment), r.pose);
    r.mask = fr.pred->binary_mask();
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

double median_depth(const FrameSample& f) {
  std::vector<double> d;
  for (std::size_t i = 0; i < f.depth.size(); ++i)
    if (f.valid_mask[i] > 0.5) d.push_back(f.depth[i]);
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

void append_cloud(Reconstruction& r, const Tensor& world, const Tensor& mask) {
  const std::size_t h = mask.dim(0), w = mask.dim(1), hw = h * w;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (mask[i] < 0.5) continue;
      for (int c = 0; c < 3; ++c) r.xyz.push_back(static_cast<float>(world[static_cast<std::size_t>(c) * hw + i]));
      r.uv.push_back(static_cast<std::uint16_t>(x));
      r.uv.push_back(static_cast<std::uint16_t>(y));
    }
}

}  // namespace

Reconstruction fuse_stream(const Sequence& seq, const AffineAlignment& alignment,
                           const CorrespondenceProvider& provider, const FuseConfig& cfg) {
  require(seq.has_predictions(), ErrorKind::Validation, "reconstruction needs predictions");
  const std::size_t n = seq.frames.size();
  if (cfg.mode == ReferenceMode::GroundTruth)
    require(seq.poses.size() == n, ErrorKind::Validation, "ground-truth reference mode needs poses");

  Reconstruction r;
  std::vector<PoseSE3> solved(n);
  std::vector<bool> known(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    FrameResult fr;
    if (j == 0) {
      fr.solved = true;
      fr.pose = PoseSE3::identity();
    } else {
      fr.references = reference_indices(j);
      std::vector<std::size_t> refs;
      std::vector<PoseSE3> ref_poses;
      for (std::size_t k : fr.references) {
        if (cfg.mode == ReferenceMode::GroundTruth) {
          refs.push_back(k);
          ref_poses.push_back(seq.poses[k]);
        } else if (known[k]) {
          refs.push_back(k);
          ref_poses.push_back(solved[k]);
        }
      }
      fr.references = refs;
      try {
        require(!refs.empty(), ErrorKind::InsufficientData, "no usable reference frame");
        const CorrespondenceSet c = provider(j, refs, ref_poses);
        fr.correspondences = c.size();
        RansacConfig rc = cfg.ransac;
        if (cfg.relative_threshold > 0.0)
          rc.inlier_threshold = cfg.relative_threshold * median_depth(seq.frames[j].gt);
        rc.seed = derive_seed(cfg.ransac.seed, "ransac", j);
        const RansacResult rr = solve_pose_ransac(c, rc);
        fr.solved = true;
        fr.pose = rr.pose;
        fr.inliers = rr.stats.inliers;
      } catch (const Error& e) {
        fr.solved = false;
        fr.message = std::string(to_string(e.kind())) + ": " + e.what();
      }
    }
    if (fr.solved) {
      solved[j] = fr.pose;
      known[j] = true;
      ++r.solved;
      const auto& p = *seq.frames[j].pred;
      append_cloud(r, to_world(aligned_point_map(p, alignment), fr.pose), p.binary_mask());
    }
    r.frames.push_back(std::move(fr));
  }
  return r;
}

std::string ply_bytes(const Reconstruction& r) {
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                    std::to_string(r.points()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n"
                    "property ushort u\nproperty ushort v\nend_header\n";
  auto put = [&out](const void* p, std::size_t bytes) {
    const auto* b = static_cast<const unsigned char*>(p);
    // Emit little-endian regardless of host order.
    if constexpr (std::endian::native == std::endian::little) {
      out.append(reinterpret_cast<const char*>(b), bytes);
    } else {
      for (std::size_t i = bytes; i-- > 0;) out.push_back(static_cast<char>(b[i]));
    }
  };
  for (std::size_t i = 0; i < r.points(); ++i) {
    for (int c = 0; c < 3; ++c) put(&r.xyz[3 * i + static_cast<std::size_t>(c)], 4);
    put(&r.uv[2 * i], 2);
    put(&r.uv[2 * i + 1], 2);
  }
  return out;
}

nlohmann::json poses_json(const Reconstruction& r) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t j = 0; j < r.frames.size(); ++j) {
    const auto& f = r.frames[j];
    nlohmann::json e = {{"frame", j}, {"solved", f.solved}};
    if (f.solved) {
      const auto p = pose_to_json(f.pose);
      e["R"] = p["R"];
      e["t"] = p["t"];
    }
    e["references"] = f.references;
    e["correspondences"] = f.correspondences;
    e["inliers"] = f.inliers;
    if (!f.message.empty()) e["message"] = f.message;
    frames.push_back(std::move(e));
  }
  return {{"frames", frames}, {"solved", r.solved}, {"total", r.frames.size()}};
}

double rotation_error(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d d = a.transpose() * b;
  // atan2 form stays accurate for tiny angles.
  const Eigen::Vector3d axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (d.trace() - 1.0));
}

}  // namespace dyfn
