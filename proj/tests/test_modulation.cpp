#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dyfn/error.hpp"
#include "dyfn/gradcheck.hpp"
#include "dyfn/modulation.hpp"
#include "dyfn/simulator.hpp"
#include "support.hpp"

using namespace dyfn;
using dyfn::test::random_tensor;

namespace {

Simulation small_sim(double geometry_noise = 0.0) {
  SceneSpec sc;
  sc.height = 8;
  sc.width = 8;
  sc.frames = 3;
  DriftSpec d;
  d.channels = 4;
  d.geometry_noise = geometry_noise;
  return simulate(sc, d, 5);
}

class Failing final : public Decoder {
 public:
  Prediction decode(const Tensor& f) const override {
    return make_prediction(Tensor(Shape{3, f.dim(1), f.dim(2)}, 1.0), Tensor(Shape{f.dim(1), f.dim(2)}, 1.0));
  }
};

}  // namespace

TEST(Normalize, ConstantFeature) {
  const auto n = normalize(Tensor(Shape{2, 3, 3}, 7.0), 1e-6);
  for (double v : n.f_norm.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_EQ(n.mu[0], 7.0);
  EXPECT_EQ(n.sigma[1], 0.0);
}

TEST(Normalize, StandardizedChannelIsFixedPoint) {
  Tensor f(Shape{1, 2, 2}, {1.0, -1.0, 1.0, -1.0});
  const auto n = normalize(f, 1e-15);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(n.f_norm[i], f[i], 1e-9);
}

TEST(Normalize, RecomputedStatistics) {
  Rng rng(1);
  const Tensor f = random_tensor({8, 6, 6}, rng, -4, 9);
  const auto n = normalize(f, kDefaultEpsilon);
  const auto st = channel_stats(n.f_norm);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_LT(std::abs(st.mean[c]), 1e-12);
    EXPECT_LE(st.stddev[c], 1.0);
    EXPECT_GE(st.stddev[c], 1.0 - 1e-6 / n.sigma[c]);
  }
}

TEST(Modulate, IdentityAndLinearity) {
  Rng rng(2);
  const Tensor f = random_tensor({4, 5, 5}, rng, -2, 6);
  const auto n = normalize(f);
  double fmax = 0.0;
  for (double v : f.data()) fmax = std::max(fmax, std::abs(v));
  const Tensor back = modulate(n.f_norm, n.mu, n.sigma, {1, 1, kDefaultEpsilon});
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_LT(std::abs(back[i] - f[i]), 1e-6 * fmax);

  const auto s1 = channel_stats(back);
  const auto s2 = channel_stats(modulate(n.f_norm, n.mu, n.sigma, {2, 1, kDefaultEpsilon}));
  const auto s3 = channel_stats(modulate(n.f_norm, n.mu, n.sigma, {1, 0.5, kDefaultEpsilon}));
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(s2.mean[c], 2.0 * s1.mean[c], 1e-9 * std::max(1.0, std::abs(s1.mean[c])));
    EXPECT_NEAR(s2.stddev[c], s1.stddev[c], 1e-9);
    EXPECT_NEAR(s3.stddev[c], 0.5 * s1.stddev[c], 1e-6);
  }
}

TEST(Normalize, TapeVersionMatchesAndDifferentiates) {
  Rng rng(3);
  const Tensor f = random_tensor({3, 4, 4}, rng, -1, 2);
  Tape t;
  const auto nv = normalize(t.leaf(f));
  const auto n = normalize(f);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(nv.f_norm.value()[i], n.f_norm[i], 1e-14);
  const auto r = check_gradients(
      [](Tape& tape, const std::vector<Var>& v) {
        Rng w(9);
        Var wt = tape.constant(random_tensor({3, 4, 4}, w));
        return ops::sum(ops::mul(normalize(v[0]).f_norm, wt));
      },
      {f});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Sweep, UnitGridRecoversCanonicalCoupling) {
  const Simulation sim = small_sim();
  const Tensor& f = *sim.sequence.frames[0].feature;
  const auto st = channel_stats(f);
  const auto [s0, t0] = sim.decoder.coupling(st.mean, st.stddev);
  const FrameDecoder dec(sim.decoder, 0);
  const auto recs = run_sweep(f, dec, sim.sequence.frames[0].gt, {{1.0, 1.0}});
  ASSERT_EQ(recs.size(), 1u);
  ASSERT_TRUE(recs[0].ok);
  // Records hold the prediction -> ground-truth fit, the inverse of the coupling.
  EXPECT_NEAR(recs[0].fitted_scale, 1.0 / s0, 1e-6);
  EXPECT_NEAR(recs[0].fitted_shift, -t0 / s0, 1e-6);
}

TEST(Sweep, BetaMonotoneAndAbsRelConstant) {
  const Simulation sim = small_sim(0.05);
  const FrameDecoder dec(sim.decoder, 1);
  SweepGrid g;
  for (int k = 0; k < 7; ++k) g.emplace_back(1.0, 0.5 + 0.25 * k);
  const auto recs = run_sweep(*sim.sequence.frames[1].feature, dec, sim.sequence.frames[1].gt, g);
  for (std::size_t k = 1; k < recs.size(); ++k) EXPECT_LT(recs[k].fitted_scale, recs[k - 1].fitted_scale);
  const auto s = summarize(recs);
  EXPECT_LT(s.abs_rel_spread(), 1e-9);
  EXPECT_GT(s.abs_rel_min, 0.0);
}

TEST(Sweep, DefaultGridRangeAndCsv) {
  const Simulation sim = small_sim();
  const FrameDecoder dec(sim.decoder, 0);
  const auto grid = uniform_grid();
  ASSERT_EQ(grid.size(), 49u);
  EXPECT_EQ(grid.front(), std::make_pair(0.5, 0.5));
  EXPECT_EQ(grid.back(), std::make_pair(2.0, 2.0));
  const auto recs = run_sweep(*sim.sequence.frames[0].feature, dec, sim.sequence.frames[0].gt, grid);
  const auto s = summarize(recs);
  EXPECT_GE(s.scale_ratio(), 2.0);
  EXPECT_LT(s.abs_rel_spread(), 1e-9);
  const std::string csv = sweep_csv(recs);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "alpha,beta,scale,shift,abs_rel");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 49);
}

TEST(Sweep, SolverFailuresAreRecorded) {
  const Simulation sim = small_sim();
  const auto recs = run_sweep(*sim.sequence.frames[0].feature, Failing{}, sim.sequence.frames[0].gt,
                              uniform_grid(2));
  ASSERT_EQ(recs.size(), 4u);
  for (const auto& r : recs) {
    EXPECT_FALSE(r.ok);
    EXPECT_FALSE(r.error.empty());
  }
  EXPECT_EQ(summarize(recs).failures, 4u);
}
