#pragma once

// Training objective over a clip of predicted point maps.
//
//   total = L_local + L_normal + L_mask + w_align * L_align + w_temp * L_temp
//
// (the first three carry unit weights by default)
//
// Every term is a sum over valid pixels weighted by inverse ground-truth
// depth, except L_mask (mean squared error). Affine fits inside the losses
// are treated as constants when differentiating.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/alignment.hpp"
#include "dyfn/autodiff.hpp"
#include "dyfn/geometry.hpp"

namespace dyfn {

enum class AlignStrategy { FirstFrame, Global };
std::string_view to_string(AlignStrategy s) noexcept;
AlignStrategy parse_strategy(std::string_view s);

/// How the scalar shift of the clip-level fit is applied to a 3-vector.
enum class ShiftMode { Depth, Uniform };

struct LossWeights {
  double w_align = 1.0;
  double w_temp = 0.1;
  double w_local = 1.0;
  double w_normal = 1.0;
  double w_mask = 1.0;
  std::vector<int> windows = {1, 2, 4};
  std::vector<double> local_scales = {1.0 / 4, 1.0 / 16, 1.0 / 32};
  std::size_t local_neighborhood_cap = 64;  // anchors per scale
  ShiftMode shift = ShiftMode::Depth;
};

void validate_weights(const LossWeights& w);
nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;  // align, temp, local, normal, mask
  AffineAlignment alignment_used;
  bool temp_empty_window = false;
};
nlohmann::json to_json(const LossReport& r);

/// Records every affine fit made while evaluating the losses so a second
/// evaluation can reuse them (finite differences of the graph with the fits
/// held constant).
/// Neighborhood fit q ~ scale * p + shift with a 3-vector shift.
struct LocalFit {
  double scale = 1.0;
  std::array<double, 3> shift = {0.0, 0.0, 0.0};
};

struct AlignmentMemo {
  bool replay = false;
  std::optional<AffineAlignment> clip;
  std::vector<std::optional<LocalFit>> local;  // per anchor, nullopt = skipped
  std::size_t cursor = 0;

  void rewind() {
    replay = true;
    cursor = 0;
  }
};

/// One predicted frame of a clip with its ground truth.
struct LossFrame {
  Var points;       // 3 x H x W
  Var mask_logits;  // H x W
  const FrameSample* gt = nullptr;
};

/// With a single valid sample in the fitted frames the fit is scale-only.
Var loss_align(std::span<const LossFrame> clip, AlignStrategy strategy, ShiftMode shift,
               AffineAlignment* used = nullptr, AlignmentMemo* memo = nullptr);
Var loss_temp(std::span<const LossFrame> clip, const AffineAlignment& alignment,
              const std::vector<int>& windows, bool* empty_window = nullptr);
/// Neighborhoods with fewer than two points, or a singular fit, are skipped.
Var loss_local(Var points, const FrameSample& gt, const std::vector<double>& scales,
               std::size_t anchor_cap, std::uint64_t seed, AlignmentMemo* memo = nullptr);
Var loss_normal(Var points, const FrameSample& gt);
Var loss_mask(Var mask_logits, const Tensor& infinity_mask);

struct LossResult {
  Var total;
  LossReport report;
};
LossResult loss_total(std::span<const LossFrame> clip, const LossWeights& weights,
                      AlignStrategy strategy, std::uint64_t seed, AlignmentMemo* memo = nullptr);

// Value-only forms over a sequence with predictions.
std::pair<double, AffineAlignment> loss_align(const Sequence& seq, AlignStrategy strategy,
                                              ShiftMode shift = ShiftMode::Depth);
double loss_temp(const Sequence& seq, const AffineAlignment& alignment,
                 const std::vector<int>& windows, bool* empty_window = nullptr);
double loss_local(const Prediction& pred, const FrameSample& gt, const std::vector<double>& scales,
                  std::size_t anchor_cap, std::uint64_t seed);
double loss_normal(const Prediction& pred, const FrameSample& gt);
double loss_mask(const Tensor& mask_logits, const Tensor& infinity_mask);
LossReport loss_total(const Sequence& seq, const LossWeights& weights, AlignStrategy strategy,
                      std::uint64_t seed);

/// Anchor pixels for one scale: min(ceil(scale * n_valid), cap) distinct
/// valid pixels, sorted.
std::vector<std::size_t> sample_anchors(const Tensor& valid_mask, double scale, std::size_t cap,
                                        std::uint64_t seed);

/// Depth-adaptive neighborhood radius: scale * z * sqrt(W^2 + H^2) / (2 f).
double local_radius(double scale, double z, std::size_t height, std::size_t width, double focal);

}  // namespace dyfn
