#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "dyfn/error.hpp"
#include "dyfn/pose_recon.hpp"
#include "dyfn/simulator.hpp"
#include "support.hpp"

using namespace dyfn;

namespace {

CorrespondenceSet make_set(const std::vector<Eigen::Vector3d>& src, const PoseSE3& pose,
                           Rng* noise = nullptr, double sigma = 0.0) {
  const std::size_t n = src.size();
  CorrespondenceSet c{Tensor(Shape{3, n}), Tensor(Shape{3, n}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d d = pose.apply(src[i]);
    if (noise)
      for (int a = 0; a < 3; ++a) d(a) += sigma * noise->normal();
    for (std::size_t a = 0; a < 3; ++a) {
      c.src[a * n + i] = src[i](static_cast<Eigen::Index>(a));
      c.dst[a * n + i] = d(static_cast<Eigen::Index>(a));
    }
  }
  return c;
}

std::vector<Eigen::Vector3d> random_points(Rng& rng, std::size_t n) {
  std::vector<Eigen::Vector3d> p;
  for (std::size_t i = 0; i < n; ++i) p.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3));
  return p;
}

Eigen::Matrix3d expmap(const Eigen::Vector3d& w) {
  const double a = w.norm();
  if (a == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

double objective_with_best_t(const CorrespondenceSet& c, const Eigen::Matrix3d& r) {
  const std::size_t n = c.size();
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cs += Eigen::Vector3d(c.src[i], c.src[n + i], c.src[2 * n + i]);
    cd += Eigen::Vector3d(c.dst[i], c.dst[n + i], c.dst[2 * n + i]);
  }
  PoseSE3 p;
  p.rotation = r;
  p.translation = (cd - r * cs) / static_cast<double>(n);
  return procrustes_objective(c, p);
}

}  // namespace

TEST(Procrustes, IdentityOnEqualSets) {
  Rng rng(1);
  const auto p = solve_procrustes(make_set(random_points(rng, 10), PoseSE3::identity()));
  EXPECT_LT((p.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  EXPECT_LT(p.translation.norm(), 1e-12);
}

TEST(Procrustes, RecoversPlantedPoseExactly) {
  PoseSE3 planted;
  planted.rotation = Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  planted.translation = {1, 2, 3};
  const std::vector<Eigen::Vector3d> src = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const auto p = solve_procrustes(make_set(src, planted));
  EXPECT_LT((p.rotation - planted.rotation).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((p.translation - planted.translation).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Procrustes, NoisyMatchesRotationGridOracle) {
  Rng rng(2);
  PoseSE3 planted;
  planted.rotation = expmap({0.1, -0.15, 0.2});
  planted.translation = {0.3, -0.2, 0.5};
  const auto c = make_set(random_points(rng, 30), planted, &rng, 0.01);
  const auto p = solve_procrustes(c);
  const double step = 2.0 * M_PI / 180.0;
  double best = INFINITY;
  Eigen::Matrix3d best_r;
  for (int i = -12; i <= 12; ++i)
    for (int j = -12; j <= 12; ++j)
      for (int k = -12; k <= 12; ++k) {
        const Eigen::Matrix3d r = expmap(Eigen::Vector3d(0.1 + i * step / 4, -0.15 + j * step / 4, 0.2 + k * step / 4));
        const double o = objective_with_best_t(c, r);
        if (o < best) { best = o; best_r = r; }
      }
  const double solved = procrustes_objective(c, p);
  EXPECT_LE(solved, best + 1e-12);
  EXPECT_LT(rotation_error(best_r, p.rotation), step);
}

TEST(Procrustes, LocallyOptimalAndRigid) {
  Rng rng(3);
  PoseSE3 planted;
  planted.rotation = expmap({0.4, 0.3, -0.8});
  planted.translation = {1, 0, -1};
  const auto c = make_set(random_points(rng, 25), planted, &rng, 0.05);
  const auto p = solve_procrustes(c);
  EXPECT_TRUE(p.is_rigid(1e-9));
  const double base = procrustes_objective(c, p);
  for (int k = 0; k < 100; ++k) {
    Eigen::Vector3d w(rng.normal(), rng.normal(), rng.normal());
    w *= 1e-3 / w.norm();
    PoseSE3 q = p;
    q.rotation = p.rotation * expmap(w);
    EXPECT_GE(procrustes_objective(c, q), base);
    EXPECT_GE(objective_with_best_t(c, q.rotation), base - 1e-12);
  }
}

TEST(Procrustes, NeverReturnsReflection) {
  Rng rng(4);
  auto src = random_points(rng, 12);
  const std::size_t n = src.size();
  CorrespondenceSet c{Tensor(Shape{3, n}), Tensor(Shape{3, n}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) c.src[a * n + i] = src[i](static_cast<Eigen::Index>(a));
    c.dst[i] = -src[i].x();  // mirror image
    c.dst[n + i] = src[i].y();
    c.dst[2 * n + i] = src[i].z();
  }
  const auto p = solve_procrustes(c);
  EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-9);
  EXPECT_TRUE(p.is_rigid(1e-9));
}

TEST(Procrustes, DegenerateInputs) {
  std::vector<Eigen::Vector3d> line = {{0, 0, 1}, {1, 1, 2}, {2, 2, 3}, {3, 3, 4}};
  try {
    solve_procrustes(make_set(line, PoseSE3::identity()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateGeometry);
  }
  std::vector<Eigen::Vector3d> two = {{0, 0, 1}, {1, 0, 1}};
  try {
    solve_procrustes(make_set(two, PoseSE3::identity()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
  }
}

TEST(Ransac, OutlierFreeEqualsProcrustes) {
  Rng rng(5);
  PoseSE3 planted;
  planted.rotation = expmap({0.2, 0.1, 0.0});
  planted.translation = {0, 1, 0};
  const auto c = make_set(random_points(rng, 40), planted);
  RansacConfig cfg;
  const auto r = solve_pose_ransac(c, cfg);
  EXPECT_EQ(r.stats.inliers, 40u);
  const auto p = solve_procrustes(c);
  EXPECT_LT((r.pose.rotation - p.rotation).norm(), 1e-12);
  EXPECT_LT((r.pose.translation - p.translation).norm(), 1e-12);
}

TEST(Ransac, RecoversPlantedMaskOnSimulatedMatches) {
  SceneSpec sc;
  sc.frames = 6;
  Sequence seq = simulate(sc, DriftSpec{}, 3).sequence;
  for (auto& f : seq.frames) f.pred = make_prediction(f.gt.point_map, f.gt.valid_mask);
  const auto pc = generate_correspondences(seq, 5, {4}, {seq.poses[4]}, {}, {200, 0.3}, 8);
  RansacConfig cfg;
  cfg.inlier_threshold = 0.01;
  cfg.seed = 12;
  const auto r = solve_pose_ransac(pc.set, cfg);
  EXPECT_LT(rotation_error(r.pose.rotation, seq.poses[5].rotation), 1e-6);
  EXPECT_EQ(r.inlier, pc.inlier);
  const auto again = solve_pose_ransac(pc.set, cfg);
  EXPECT_EQ(again.inlier, r.inlier);
  EXPECT_EQ(again.pose.rotation, r.pose.rotation);
  EXPECT_EQ(again.pose.translation, r.pose.translation);
}

TEST(Ransac, CoincidentPointsAreDegenerate) {
  std::vector<Eigen::Vector3d> same(10, Eigen::Vector3d(1, 2, 3));
  try {
    solve_pose_ransac(make_set(same, PoseSE3::identity()), RansacConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateGeometry);
  }
}

TEST(Ransac, NoConsensus) {
  Rng rng(6);
  const std::size_t n = 12;
  CorrespondenceSet c{test::random_tensor({3, n}, rng, -5, 5), test::random_tensor({3, n}, rng, -5, 5), {}};
  RansacConfig cfg;
  cfg.inlier_threshold = 1e-9;
  try {
    solve_pose_ransac(c, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoConsensus);
  }
}

TEST(References, ClampedIndexSets) {
  EXPECT_EQ(reference_indices(3), (std::vector<std::size_t>{2}));
  EXPECT_EQ(reference_indices(30), (std::vector<std::size_t>{29, 25, 9}));
  EXPECT_TRUE(reference_indices(0).empty());
  EXPECT_EQ(reference_indices(21), (std::vector<std::size_t>{20, 16, 0}));
}

namespace {

Sequence perfect_sequence(std::size_t frames) {
  SceneSpec sc;
  sc.frames = frames;
  Sequence seq = simulate(sc, DriftSpec{}, 7).sequence;
  for (auto& f : seq.frames) f.pred = make_prediction(f.gt.point_map, f.gt.valid_mask);
  return seq;
}

CorrespondenceProvider sim_provider(const Sequence& seq, double outliers, std::size_t count = 200) {
  return [&seq, outliers, count](std::size_t j, const std::vector<std::size_t>& refs,
                                 const std::vector<PoseSE3>& poses) {
    return generate_correspondences(seq, j, refs, poses, {}, {count, outliers}, 100 + j).set;
  };
}

}  // namespace

TEST(Fuse, PerfectInputsRecoverGroundTruth) {
  const Sequence seq = perfect_sequence(25);
  for (ReferenceMode mode : {ReferenceMode::GroundTruth, ReferenceMode::Odometry}) {
    FuseConfig cfg;
    cfg.mode = mode;
    const auto r = fuse_stream(seq, {}, sim_provider(seq, 0.0), cfg);
    EXPECT_EQ(r.solved, 25u);
    for (std::size_t j = 0; j < 25; ++j) {
      EXPECT_LT((r.frames[j].pose.rotation - seq.poses[j].rotation).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT((r.frames[j].pose.translation - seq.poses[j].translation).cwiseAbs().maxCoeff(), 1e-9);
    }
    // Fused cloud equals the ground-truth world points.
    std::size_t k = 0;
    for (std::size_t j = 0; j < 25; ++j) {
      const auto& f = seq.frames[j].gt;
      const std::size_t hw = f.depth.size();
      for (std::size_t i = 0; i < hw; ++i) {
        if (f.valid_mask[i] < 0.5) continue;
        const Eigen::Vector3d w = seq.poses[j].apply({f.point_map[i], f.point_map[hw + i], f.point_map[2 * hw + i]});
        for (int a = 0; a < 3; ++a) EXPECT_NEAR(r.xyz[3 * k + static_cast<std::size_t>(a)], w(a), 1e-5);
        ++k;
      }
    }
    EXPECT_EQ(k, r.points());
  }
}

TEST(Fuse, SparseFramesSkippedAndIdempotentPly) {
  const Sequence seq = perfect_sequence(6);
  auto provider = [&seq](std::size_t j, const std::vector<std::size_t>& refs, const std::vector<PoseSE3>& poses) {
    return generate_correspondences(seq, j, refs, poses, {}, {j == 3 ? 2u : 100u, 0.0}, j).set;
  };
  const auto r = fuse_stream(seq, {}, provider, FuseConfig{});
  EXPECT_FALSE(r.frames[3].solved);
  EXPECT_FALSE(r.frames[3].message.empty());
  EXPECT_EQ(r.solved, 5u);
  const auto again = fuse_stream(seq, {}, provider, FuseConfig{});
  EXPECT_EQ(ply_bytes(r), ply_bytes(again));
  const std::string ply = ply_bytes(r);
  EXPECT_EQ(ply.rfind("ply\nformat binary_little_endian 1.0\n", 0), 0u);
  const auto header_end = ply.find("end_header\n") + 11;
  EXPECT_EQ(ply.size() - header_end, r.points() * 16);
  const auto j = poses_json(r);
  EXPECT_EQ(j["frames"].size(), 6u);
  EXPECT_EQ(j["frames"][3]["solved"], false);
  EXPECT_EQ(j["frames"][2]["R"].size(), 9u);
}
