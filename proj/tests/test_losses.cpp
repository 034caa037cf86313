#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "dyfn/error.hpp"
#include "dyfn/gradcheck.hpp"
#include "dyfn/losses.hpp"
#include "support.hpp"

using namespace dyfn;

namespace {

Sequence random_sequence(std::size_t frames, std::size_t h, std::size_t w, std::uint64_t seed,
                         double valid_fraction = 0.8) {
  Rng rng(seed);
  Sequence seq;
  for (std::size_t j = 0; j < frames; ++j) {
    Tensor depth = test::random_tensor({h, w}, rng, 1.0, 3.0);
    Tensor mask(Shape{h, w});
    for (double& m : mask.data()) m = rng.uniform() < valid_fraction ? 1.0 : 0.0;
    mask[0] = 1.0;
    mask[1] = 1.0;
    Tensor pred(Shape{h, w});
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = 0.5 * depth[i] + 0.2 + rng.uniform(-0.1, 0.1);
    seq.frames.push_back(test::make_frame(depth, mask, pred));
    // Perturb x/y too so predictions are not exact back-projections.
    for (std::size_t i = 0; i < 2 * h * w; ++i) seq.frames.back().pred->point_map[i] += rng.uniform(-0.05, 0.05);
  }
  return seq;
}

struct Clip {
  Tape tape;
  std::vector<LossFrame> frames;
  Clip(const Sequence& seq, bool leaves) {
    for (const auto& f : seq.frames)
      frames.push_back({leaves ? tape.leaf(f.pred->point_map) : tape.constant(f.pred->point_map),
                        tape.constant(f.pred->mask_logits), &f.gt});
  }
};

// Weighted L2 normal equations solved by Cramer's rule.
AffineAlignment cramer_fit(const std::vector<double>& x, const std::vector<double>& y,
                           const std::vector<double>& w) {
  double a = 0, b = 0, c = 0, d = 0, e = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    a += w[i] * x[i] * x[i];
    b += w[i] * x[i];
    c += w[i];
    d += w[i] * x[i] * y[i];
    e += w[i] * y[i];
  }
  const double det = a * c - b * b;
  return {(d * c - b * e) / det, (a * e - b * d) / det};
}

double naive_align(const Sequence& seq, bool global, bool uniform_shift) {
  std::vector<double> x, y, w;
  for (std::size_t j = 0; j < (global ? seq.length() : 1); ++j) {
    const auto& f = seq.frames[j];
    const std::size_t hw = f.gt.depth.size();
    for (std::size_t i = 0; i < hw; ++i)
      if (f.gt.valid_mask[i] == 1.0) {
        x.push_back(f.pred->point_map[2 * hw + i]);
        y.push_back(f.gt.depth[i]);
        w.push_back(1.0 / f.gt.depth[i]);
      }
  }
  const AffineAlignment a = cramer_fit(x, y, w);
  double total = 0.0;
  for (const auto& f : seq.frames) {
    const std::size_t hw = f.gt.depth.size();
    for (std::size_t i = 0; i < hw; ++i) {
      if (f.gt.valid_mask[i] != 1.0) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        const double t = (uniform_shift || c == 2) ? a.shift : 0.0;
        total += std::abs(a.scale * f.pred->point_map[c * hw + i] + t - f.gt.point_map[c * hw + i]) /
                 f.gt.depth[i];
      }
    }
  }
  return total;
}

/// Gradient check with every affine fit frozen at the base point.
template <class F>
GradCheckResult frozen_check(const Sequence& seq, F&& loss) {
  AlignmentMemo memo;
  std::vector<Tensor> inputs;
  for (const auto& f : seq.frames) inputs.push_back(f.pred->point_map);
  auto fn = [&](Tape& tape, const std::vector<Var>& leaves) {
    if (memo.replay) memo.rewind();
    std::vector<LossFrame> frames;
    for (std::size_t j = 0; j < leaves.size(); ++j)
      frames.push_back({leaves[j], tape.constant(seq.frames[j].pred->mask_logits), &seq.frames[j].gt});
    Var v = loss(std::span<const LossFrame>(frames), &memo);
    memo.replay = true;
    return v;
  };
  return check_gradients(fn, inputs, 1e-6);
}

Sequence smooth_sequence(std::size_t frames, std::size_t h, std::size_t w, double phase) {
  Sequence seq;
  for (std::size_t j = 0; j < frames; ++j) {
    Tensor depth(Shape{h, w}), pred(Shape{h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y), fj = static_cast<double>(j);
        depth.at(y, x) = 2.0 + 0.3 * std::sin(fx / 2.0 + fj * 0.1) * std::cos(fy / 3.0);
        pred.at(y, x) = 1.0 + 0.2 * std::sin(fx / 2.5 + phase) * std::cos(fy / 2.0 + fj * 0.2);
      }
    seq.frames.push_back(test::make_frame(depth, Tensor(Shape{h, w}, 1.0), pred));
  }
  return seq;
}

}  // namespace

// --- align -------------------------------------------------------------------

TEST(LossAlign, PerfectPredictionsAreZero) {
  Sequence seq = random_sequence(3, 5, 5, 1);
  for (auto& f : seq.frames) f.pred->point_map = f.gt.point_map;
  for (AlignStrategy s : {AlignStrategy::FirstFrame, AlignStrategy::Global}) {
    const auto [v, a] = loss_align(seq, s);
    EXPECT_NEAR(v, 0.0, 1e-12);
    EXPECT_NEAR(a.scale, 1.0, 1e-12);
    EXPECT_NEAR(a.shift, 0.0, 1e-12);
  }
}

TEST(LossAlign, SinglePointHandCase) {
  Sequence seq;
  for (int j = 0; j < 2; ++j) {
    SequenceFrame f;
    f.gt.depth = Tensor(Shape{1, 1}, 2.0);
    f.gt.valid_mask = Tensor(Shape{1, 1}, 1.0);
    f.gt.point_map = Tensor(Shape{3, 1, 1}, std::vector<double>{0, 0, 2});
    f.pred = make_prediction(Tensor(Shape{3, 1, 1}, std::vector<double>{0, 0, 1}), f.gt.valid_mask);
    seq.frames.push_back(f);
  }
  const auto [v, a] = loss_align(seq, AlignStrategy::FirstFrame);
  EXPECT_EQ(a.scale, 2.0);
  EXPECT_EQ(a.shift, 0.0);
  EXPECT_EQ(v, 0.0);
}

TEST(LossAlign, MatchesNaiveLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sequence seq = random_sequence(3, 6, 5, seed);
    for (bool uniform : {false, true}) {
      const ShiftMode m = uniform ? ShiftMode::Uniform : ShiftMode::Depth;
      const double ff = loss_align(seq, AlignStrategy::FirstFrame, m).first;
      const double gl = loss_align(seq, AlignStrategy::Global, m).first;
      EXPECT_NEAR(ff, naive_align(seq, false, uniform), 1e-9 * std::max(1.0, ff));
      EXPECT_NEAR(gl, naive_align(seq, true, uniform), 1e-9 * std::max(1.0, gl));
    }
  }
}

TEST(LossAlign, AffineInvariance) {
  const Sequence seq = random_sequence(4, 6, 6, 3);
  const double base_g = loss_align(seq, AlignStrategy::Global).first;
  const double base_f = loss_align(seq, AlignStrategy::FirstFrame).first;
  Sequence moved = seq;
  for (auto& f : moved.frames) {
    const std::size_t hw = f.gt.depth.size();
    for (std::size_t i = 0; i < 3 * hw; ++i) f.pred->point_map[i] *= 1.7;
    for (std::size_t i = 0; i < hw; ++i) f.pred->point_map[2 * hw + i] += 0.3;
  }
  EXPECT_NEAR(loss_align(moved, AlignStrategy::Global).first, base_g, 1e-9);
  EXPECT_NEAR(loss_align(moved, AlignStrategy::FirstFrame).first, base_f, 1e-9);
  // Perturbing every frame except frame 0 breaks the first-frame invariance.
  Sequence partial = moved;
  partial.frames[0] = seq.frames[0];
  EXPECT_GT(std::abs(loss_align(partial, AlignStrategy::FirstFrame).first - base_f), 1e-3);
}

TEST(LossAlign, SolverErrorsPropagate) {
  Sequence seq = random_sequence(2, 4, 4, 5, 1.0);
  const std::size_t hw = 16;
  for (std::size_t i = 0; i < hw; ++i) seq.frames[0].pred->point_map[2 * hw + i] = 1.0;
  try {
    loss_align(seq, AlignStrategy::FirstFrame);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateFit);
  }
  try {
    loss_total(seq, LossWeights{}, AlignStrategy::FirstFrame, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateFit);
    EXPECT_EQ(std::string(e.what()).rfind("align:", 0), 0u);
  }
}

// --- temp --------------------------------------------------------------------

TEST(LossTemp, StaticAndScaledCasesVanish) {
  Sequence seq = random_sequence(1, 5, 5, 2);
  seq.frames.resize(4, seq.frames[0]);
  EXPECT_EQ(loss_temp(seq, {1.3, 0.2}, {1, 2, 4}), 0.0);
  Sequence moving = random_sequence(6, 5, 5, 4, 1.0);
  const double s = 2.5;
  for (auto& f : moving.frames)
    for (std::size_t i = 0; i < f.gt.point_map.size(); ++i) f.pred->point_map[i] = f.gt.point_map[i] / s;
  EXPECT_NEAR(loss_temp(moving, {s, 0.0}, {1, 2, 4}), 0.0, 1e-12);
}

TEST(LossTemp, HandLoopOracle) {
  Rng rng(6);
  Sequence seq;
  for (int j = 0; j < 3; ++j) {
    SequenceFrame f;
    const double z = rng.uniform(1.0, 3.0);
    f.gt.depth = Tensor(Shape{1, 1}, z);
    f.gt.valid_mask = Tensor(Shape{1, 1}, 1.0);
    f.gt.point_map = Tensor(Shape{3, 1, 1}, std::vector<double>{rng.uniform(-1, 1), rng.uniform(-1, 1), z});
    f.pred = make_prediction(test::random_tensor({3, 1, 1}, rng), f.gt.valid_mask);
    seq.frames.push_back(f);
  }
  const double s = 1.4;
  auto l1 = [](const Tensor& a, const Tensor& b) {
    return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
  };
  const auto& F = seq.frames;
  auto term = [&](int a, int b) {
    return std::abs(s * l1(F[a].pred->point_map, F[b].pred->point_map) - l1(F[a].gt.point_map, F[b].gt.point_map)) /
           F[a].gt.depth[0];
  };
  const double expect = term(0, 1) + term(1, 2) + term(0, 2);
  EXPECT_NEAR(loss_temp(seq, {s, 0.7}, {1, 2}), expect, 1e-12);
}

TEST(LossTemp, EmptyWindowFlag) {
  const Sequence one = random_sequence(1, 4, 4, 1);
  bool empty = false;
  EXPECT_EQ(loss_temp(one, {1.0, 0.0}, {1, 2, 4}, &empty), 0.0);
  EXPECT_TRUE(empty);
  const Sequence two = random_sequence(2, 4, 4, 1);
  EXPECT_GT(loss_temp(two, {1.0, 0.0}, {1, 2, 4}, &empty), 0.0);
  EXPECT_FALSE(empty);
  const auto report = loss_total(one, LossWeights{}, AlignStrategy::FirstFrame, 0);
  EXPECT_TRUE(report.temp_empty_window);
  EXPECT_EQ(report.components.at("temp"), 0.0);
}

// --- local -------------------------------------------------------------------

TEST(LossLocal, AnchorsAndRadius) {
  Tensor mask(Shape{6, 6}, 1.0);
  mask[3] = 0.0;
  const auto a = sample_anchors(mask, 0.25, 64, 9);
  EXPECT_EQ(a.size(), 9u);  // ceil(0.25 * 35)
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  for (std::size_t i : a) EXPECT_EQ(mask[i], 1.0);
  EXPECT_EQ(sample_anchors(mask, 0.25, 4, 9).size(), 4u);
  EXPECT_EQ(sample_anchors(mask, 0.25, 64, 9), a);
  EXPECT_DOUBLE_EQ(local_radius(0.5, 2.0, 3, 4, 10.0), 0.5 * 2.0 * 5.0 / 20.0);
}

TEST(LossLocal, GlobalAffineIsAbsorbed) {
  const Sequence seq = smooth_sequence(1, 10, 10, 0.0);
  const auto& gt = seq.frames[0].gt;
  Prediction p = *seq.frames[0].pred;
  p.point_map = gt.point_map;
  EXPECT_EQ(loss_local(p, gt, {0.25, 1.0 / 16, 1.0 / 32}, 64, 1), 0.0);
  for (double& v : p.point_map.data()) v = 5.0 * v + 1.0;
  for (std::size_t i = 0; i < p.point_map.size(); ++i)
    if (gt.valid_mask[i % gt.depth.size()] < 0.5) p.point_map[i] = 0.0;
  EXPECT_NEAR(loss_local(p, gt, {0.25, 1.0 / 16, 1.0 / 32}, 64, 1), 0.0, 1e-9);
  // A depth-only shift is absorbed as well.
  const std::size_t hw = gt.depth.size();
  for (std::size_t i = 0; i < hw; ++i) p.point_map[2 * hw + i] += 0.7 * gt.valid_mask[i];
  EXPECT_NEAR(loss_local(p, gt, {0.25, 1.0 / 16, 1.0 / 32}, 64, 1), 0.0, 1e-9);
}

namespace {

// Grid + refine over the scale; for a fixed scale the best per-axis shift is
// the weighted mean residual.
struct OracleFit {
  double s;
  std::array<double, 3> t;
};
OracleFit grid_fit(const std::vector<std::array<double, 3>>& x, const std::vector<std::array<double, 3>>& y,
                   const std::vector<double>& w) {
  auto shifts = [&](double s) {
    std::array<double, 3> t{};
    double sw = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sw += w[i];
      for (int c = 0; c < 3; ++c) t[c] += w[i] * (y[i][c] - s * x[i][c]);
    }
    for (double& v : t) v /= sw;
    return t;
  };
  auto obj = [&](double s) {
    const auto t = shifts(s);
    double o = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (int c = 0; c < 3; ++c) o += w[i] * std::pow(s * x[i][c] + t[c] - y[i][c], 2);
    return o;
  };
  double cs = 0.0, half = 20.0;
  for (int it = 0; it < 40; ++it) {
    double bs = cs, bo = obj(cs);
    for (int i = -40; i <= 40; ++i) {
      const double s = cs + half * i / 40.0;
      const double o = obj(s);
      if (o < bo) { bo = o; bs = s; }
    }
    cs = bs;
    half /= 4.0;
  }
  return {cs, shifts(cs)};
}

}  // namespace

TEST(LossLocal, BruteForceOracle) {
  const Sequence seq = random_sequence(1, 6, 6, 11);
  const auto& gt = seq.frames[0].gt;
  const Tensor& p = seq.frames[0].pred->point_map;
  const double alpha = 0.5;
  const std::size_t hw = 36;
  const auto anchors = sample_anchors(gt.valid_mask, alpha, 2, derive_seed(5, "anchors", 0));
  ASSERT_EQ(anchors.size(), 2u);
  double expect = 0.0;
  for (std::size_t a : anchors) {
    const double r = alpha * gt.depth[a] * std::sqrt(72.0) / (2.0 * gt.intrinsics.f);
    std::vector<std::array<double, 3>> x, y;
    std::vector<double> w;
    for (std::size_t i = 0; i < hw; ++i) {
      if (gt.valid_mask[i] != 1.0) continue;
      double d2 = 0;
      for (std::size_t c = 0; c < 3; ++c) d2 += std::pow(gt.point_map[c * hw + i] - gt.point_map[c * hw + a], 2);
      if (std::sqrt(d2) > r) continue;
      x.push_back({p[i], p[hw + i], p[2 * hw + i]});
      y.push_back({gt.point_map[i], gt.point_map[hw + i], gt.point_map[2 * hw + i]});
      w.push_back(1.0 / gt.depth[i]);
    }
    ASSERT_GT(x.size(), 1u);
    const OracleFit f = grid_fit(x, y, w);
    for (std::size_t k = 0; k < x.size(); ++k)
      for (int c = 0; c < 3; ++c) expect += w[k] * std::abs(f.s * x[k][c] + f.t[c] - y[k][c]);
  }
  const double got = loss_local(*seq.frames[0].pred, gt, {alpha}, 2, 5);
  EXPECT_NEAR(got, expect, 1e-7 * std::max(1.0, expect));
}

TEST(LossLocal, NoAnchorsIsAnError) {
  Sequence seq = random_sequence(1, 4, 4, 1);
  seq.frames[0].gt.valid_mask = Tensor(Shape{4, 4});
  try {
    loss_local(*seq.frames[0].pred, seq.frames[0].gt, {0.25}, 64, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
  }
}

// --- normal ------------------------------------------------------------------

TEST(LossNormal, IdenticalMapsAreZero) {
  const Sequence seq = smooth_sequence(1, 8, 8, 0.0);
  Prediction p = *seq.frames[0].pred;
  p.point_map = seq.frames[0].gt.point_map;
  EXPECT_EQ(loss_normal(p, seq.frames[0].gt), 0.0);
}

TEST(LossNormal, TiltedPlane) {
  const std::size_t h = 5, w = 7;
  const Sequence seq = [&] {
    Sequence s;
    s.frames.push_back(test::make_frame(Tensor(Shape{h, w}, 2.0), Tensor(Shape{h, w}, 1.0), Tensor(Shape{h, w}, 2.0)));
    return s;
  }();
  const auto& gt = seq.frames[0].gt;
  const Eigen::Matrix3d r = Eigen::AngleAxisd(M_PI / 6, Eigen::Vector3d::UnitX()).toRotationMatrix();
  Prediction p = *seq.frames[0].pred;
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < hw; ++i) {
    const Eigen::Vector3d q(gt.point_map[i], gt.point_map[hw + i], gt.point_map[2 * hw + i]);
    const Eigen::Vector3d v = r * q;
    for (std::size_t c = 0; c < 3; ++c) p.point_map[c * hw + i] = v(static_cast<Eigen::Index>(c));
  }
  EXPECT_NEAR(loss_normal(p, gt), static_cast<double>((h - 1) * (w - 1)) * M_PI / 6, 1e-9);
}

TEST(LossNormal, SmoothSurfacesMatchLoopOracle) {
  const Sequence seq = smooth_sequence(1, 9, 8, 0.7);
  const auto& gt = seq.frames[0].gt;
  const Tensor& p = seq.frames[0].pred->point_map;
  const std::size_t h = 9, w = 8, hw = h * w;
  auto normal = [&](const Tensor& t, std::size_t y, std::size_t x) {
    auto pt = [&](std::size_t yy, std::size_t xx) {
      const std::size_t i = yy * w + xx;
      return Eigen::Vector3d(t[i], t[hw + i], t[2 * hw + i]);
    };
    return (pt(y, x + 1) - pt(y, x)).cross(pt(y + 1, x) - pt(y, x)).normalized();
  };
  double expect = 0.0;
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x)
      expect += std::acos(std::clamp(normal(p, y, x).dot(normal(gt.point_map, y, x)), -1.0, 1.0));
  EXPECT_NEAR(loss_normal(*seq.frames[0].pred, gt), expect, 1e-7);
}

// --- mask --------------------------------------------------------------------

TEST(LossMask, Examples) {
  Rng rng(3);
  Tensor inf(Shape{4, 5});
  for (double& v : inf.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  Tensor target = inf;
  for (double& v : target.data()) v = 1.0 - v;
  EXPECT_EQ(loss_mask(target, inf), 0.0);
  EXPECT_EQ(loss_mask(inf, inf), 1.0);
  const Tensor m = test::random_tensor({4, 5}, rng, 0.0, 1.0);
  double expect = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) expect += (m[i] - (1.0 - inf[i])) * (m[i] - (1.0 - inf[i]));
  EXPECT_NEAR(loss_mask(m, inf), expect / 20.0, 1e-15);
  inf[0] = 0.5;
  EXPECT_THROW(loss_mask(m, inf), Error);
}

// --- total -------------------------------------------------------------------

TEST(LossTotal, PerfectPredictionsGiveZero) {
  Sequence seq = smooth_sequence(5, 8, 8, 0.0);
  for (auto& f : seq.frames) f.pred->point_map = f.gt.point_map;
  const auto r = loss_total(seq, LossWeights{}, AlignStrategy::FirstFrame, 0);
  for (const auto& [k, v] : r.components) EXPECT_NEAR(v, 0.0, 1e-12) << k;
  EXPECT_NEAR(r.total, 0.0, 1e-12);
  EXPECT_EQ(r.components.size(), 5u);
}

TEST(LossTotal, WeightedSumAndDefaults) {
  const LossWeights w;
  EXPECT_EQ(w.w_align, 1.0);
  EXPECT_EQ(w.w_temp, 0.1);
  EXPECT_EQ(w.windows, (std::vector<int>{1, 2, 4}));
  const Sequence seq = random_sequence(5, 6, 6, 12);
  for (AlignStrategy s : {AlignStrategy::FirstFrame, AlignStrategy::Global}) {
    const auto r = loss_total(seq, w, s, 3);
    const auto& c = r.components;
    EXPECT_NEAR(r.total, c.at("local") + c.at("normal") + c.at("mask") + c.at("align") + 0.1 * c.at("temp"), 1e-12);
    for (const auto& [k, v] : c) EXPECT_GE(v, 0.0) << k;
    LossWeights no_align = w;
    no_align.w_align = 0.0;
    const auto r0 = loss_total(seq, no_align, s, 3);
    EXPECT_NEAR(r0.total, r.total - c.at("align"), 1e-12);
  }
  LossWeights bad;
  bad.local_scales = {1.5};
  EXPECT_THROW(loss_total(seq, bad, AlignStrategy::FirstFrame, 0), Error);
  EXPECT_EQ(loss_weights_from_json(to_json(w)).windows, w.windows);
}

TEST(LossTotal, AllInvalidGivesZeroGradients) {
  Sequence seq = random_sequence(3, 5, 5, 2);
  for (auto& f : seq.frames) {
    f.gt.valid_mask = Tensor(f.gt.valid_mask.shape());
    f.pred->mask_logits = Tensor(f.gt.valid_mask.shape());
  }
  Clip c(seq, true);
  auto r = loss_total(c.frames, LossWeights{}, AlignStrategy::FirstFrame, 0);
  EXPECT_EQ(r.report.total, 0.0);
  c.tape.backward(r.total);
  for (const auto& f : c.frames) {
    const Tensor g = c.tape.grad(f.points);
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
  }
}

// --- gradients ----------------------------------------------------------------

TEST(LossGradients, EveryTermMatchesFiniteDifferences) {
  const Sequence seq = random_sequence(3, 6, 6, 21);
  const Sequence smooth = smooth_sequence(3, 6, 6, 0.4);
  using Span = std::span<const LossFrame>;
  struct Case {
    const char* name;
    const Sequence* seq;
    std::function<Var(Span, AlignmentMemo*)> fn;
  };
  const std::vector<Case> cases = {
      {"align_first", &seq, [](Span c, AlignmentMemo* m) { return loss_align(c, AlignStrategy::FirstFrame, ShiftMode::Depth, nullptr, m); }},
      {"align_global", &seq, [](Span c, AlignmentMemo* m) { return loss_align(c, AlignStrategy::Global, ShiftMode::Uniform, nullptr, m); }},
      {"temp", &seq, [](Span c, AlignmentMemo*) { return loss_temp(c, {1.3, 0.1}, {1, 2}); }},
      {"local", &seq, [](Span c, AlignmentMemo* m) { return loss_local(c[1].points, *c[1].gt, {0.25, 0.5}, 64, 4, m); }},
      {"normal", &smooth, [](Span c, AlignmentMemo*) { return loss_normal(c[0].points, *c[0].gt); }},
      {"total", &seq, [](Span c, AlignmentMemo* m) { return loss_total(c, LossWeights{}, AlignStrategy::Global, 2, m).total; }},
  };
  for (const auto& k : cases) {
    const auto r = frozen_check(*k.seq, k.fn);
    EXPECT_LT(r.max_rel_error, 1e-4) << k.name;
  }
}

TEST(LossGradients, MaskMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor inf(Shape{4, 4});
  for (double& v : inf.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const auto r = check_gradients([&](Tape&, const std::vector<Var>& l) { return loss_mask(l[0], inf); },
                                 {test::random_tensor({4, 4}, rng, 0.0, 1.0)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}
