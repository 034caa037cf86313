#pragma once

// Feature statistic normalization and re-modulation, and the (alpha, beta)
// sweep that measures how feature statistics couple to output scale/shift.

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/autodiff.hpp"
#include "dyfn/geometry.hpp"
#include "dyfn/tensor.hpp"

namespace dyfn {

inline constexpr double kDefaultEpsilon = 1e-6;

struct ModulationParams {
  double alpha = 1.0;  // mean multiplier
  double beta = 1.0;   // std multiplier
  double epsilon = kDefaultEpsilon;
};

struct Normalized {
  Tensor f_norm;
  Tensor mu;     // {C}
  Tensor sigma;  // {C}
};

/// f_norm = (f - mu) / (sigma + eps), channel-wise.
Normalized normalize(const Tensor& f, double epsilon = kDefaultEpsilon);
/// f_norm * (beta * sigma) + alpha * mu, channel-wise.
Tensor modulate(const Tensor& f_norm, const Tensor& mu, const Tensor& sigma,
                const ModulationParams& params);

struct NormalizedVar {
  Var f_norm;
  Var mu;
  Var sigma;
};
NormalizedVar normalize(Var f, double epsilon = kDefaultEpsilon);

/// Frozen feature -> prediction map.
class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual Prediction decode(const Tensor& feature) const = 0;
};

struct SweepRecord {
  double alpha = 1.0;
  double beta = 1.0;
  double fitted_scale = 0.0;
  double fitted_shift = 0.0;
  double aligned_abs_rel = 0.0;
  bool ok = true;
  std::string error;
};

using SweepGrid = std::vector<std::pair<double, double>>;  // (alpha, beta)

/// n x n grid over [lo, hi]^2, alpha-major.
SweepGrid uniform_grid(int n = 7, double lo = 0.5, double hi = 2.0);

/// Decodes each modulated feature and fits its depth onto `gt`. Per-point
/// solver failures are recorded and the sweep continues.
std::vector<SweepRecord> run_sweep(const Tensor& feature, const Decoder& decoder,
                                   const FrameSample& gt, const SweepGrid& grid,
                                   double epsilon = kDefaultEpsilon);

struct SweepSummary {
  std::size_t points = 0;
  std::size_t failures = 0;
  double scale_min = 0.0, scale_max = 0.0;
  double shift_min = 0.0, shift_max = 0.0;
  double abs_rel_min = 0.0, abs_rel_max = 0.0;

  double abs_rel_spread() const { return abs_rel_max - abs_rel_min; }
  double scale_ratio() const { return scale_max / scale_min; }
};

SweepSummary summarize(const std::vector<SweepRecord>& records);
nlohmann::json to_json(const SweepSummary& s);
/// Header `alpha,beta,scale,shift,abs_rel`, 9 significant digits.
std::string sweep_csv(const std::vector<SweepRecord>& records);

}  // namespace dyfn
