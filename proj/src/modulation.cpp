#include "dyfn/modulation.hpp"

#include <algorithm>
#include <cstdio>

#include "dyfn/alignment.hpp"
#include "dyfn/error.hpp"

namespace dyfn {

Normalized normalize(const Tensor& f, double epsilon) {
  require(f.rank() >= 2, ErrorKind::InvalidInput, "normalize expects C x H x W");
  require(epsilon > 0.0, ErrorKind::InvalidInput, "epsilon must be positive");
  auto st = channel_stats(f);
  const std::size_t c = f.dim(0), n = f.size() / c;
  Tensor out(f.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double m = st.mean[ch], d = st.stddev[ch] + epsilon;
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = (f[ch * n + i] - m) / d;
  }
  return {std::move(out), std::move(st.mean), std::move(st.stddev)};
}

Tensor modulate(const Tensor& f_norm, const Tensor& mu, const Tensor& sigma,
                const ModulationParams& p) {
  require(f_norm.rank() >= 2 && mu.size() == f_norm.dim(0) && sigma.size() == f_norm.dim(0),
          ErrorKind::InvalidInput, "modulate: statistics do not match feature channels");
  const std::size_t c = f_norm.dim(0), n = f_norm.size() / c;
  Tensor out(f_norm.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double s = p.beta * sigma[ch], m = p.alpha * mu[ch];
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = f_norm[ch * n + i] * s + m;
  }
  return out;
}

NormalizedVar normalize(Var f, double epsilon) {
  auto [mu, sigma] = ops::channel_stats(f);
  Var centered = ops::channel_broadcast(BinaryOp::Sub, f, mu);
  Var denom = ops::affine(sigma, 1.0, epsilon);
  return {ops::channel_broadcast(BinaryOp::Div, centered, denom), mu, sigma};
}

SweepGrid uniform_grid(int n, double lo, double hi) {
  require(n >= 1, ErrorKind::InvalidInput, "grid size must be >= 1");
  SweepGrid g;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double a = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
      const double b = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
      g.emplace_back(a, b);
    }
  return g;
}

std::vector<SweepRecord> run_sweep(const Tensor& feature, const Decoder& decoder,
                                   const FrameSample& gt, const SweepGrid& grid, double epsilon) {
  const Normalized nf = normalize(feature, epsilon);
  std::vector<SweepRecord> out(grid.size());
  const auto n = static_cast<std::ptrdiff_t>(grid.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    SweepRecord& r = out[static_cast<std::size_t>(i)];
    r.alpha = grid[static_cast<std::size_t>(i)].first;
    r.beta = grid[static_cast<std::size_t>(i)].second;
    try {
      const Tensor f = modulate(nf.f_norm, nf.mu, nf.sigma, {r.alpha, r.beta, epsilon});
      const Prediction p = decoder.decode(f);
      const AffineAlignment a = solve_affine_frame(p.depth, gt.depth, gt.valid_mask);
      r.fitted_scale = a.scale;
      r.fitted_shift = a.shift;
      r.aligned_abs_rel = compute_metrics(p.depth, gt.depth, gt.valid_mask, a).abs_rel;
    } catch (const Error& e) {
      r.ok = false;
      r.error = e.what();
    }
  }
  return out;
}

SweepSummary summarize(const std::vector<SweepRecord>& records) {
  SweepSummary s;
  s.points = records.size();
  bool first = true;
  for (const auto& r : records) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    if (first) {
      s.scale_min = s.scale_max = r.fitted_scale;
      s.shift_min = s.shift_max = r.fitted_shift;
      s.abs_rel_min = s.abs_rel_max = r.aligned_abs_rel;
      first = false;
      continue;
    }
    s.scale_min = std::min(s.scale_min, r.fitted_scale);
    s.scale_max = std::max(s.scale_max, r.fitted_scale);
    s.shift_min = std::min(s.shift_min, r.fitted_shift);
    s.shift_max = std::max(s.shift_max, r.fitted_shift);
    s.abs_rel_min = std::min(s.abs_rel_min, r.aligned_abs_rel);
    s.abs_rel_max = std::max(s.abs_rel_max, r.aligned_abs_rel);
  }
  return s;
}

nlohmann::json to_json(const SweepSummary& s) {
  return {{"points", s.points},
          {"failures", s.failures},
          {"scale_range", {s.scale_min, s.scale_max}},
          {"shift_range", {s.shift_min, s.shift_max}},
          {"abs_rel_range", {s.abs_rel_min, s.abs_rel_max}},
          {"abs_rel_spread", s.abs_rel_spread()},
          {"scale_ratio", s.failures == s.points ? 0.0 : s.scale_ratio()}};
}

std::string sweep_csv(const std::vector<SweepRecord>& records) {
  std::string out = "alpha,beta,scale,shift,abs_rel\n";
  char buf[256];
  for (const auto& r : records) {
    if (r.ok)
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g\n", r.alpha, r.beta, r.fitted_scale,
                    r.fitted_shift, r.aligned_abs_rel);
    else
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,nan,nan,nan\n", r.alpha, r.beta);
    out += buf;
  }
  return out;
}

}  // namespace dyfn
