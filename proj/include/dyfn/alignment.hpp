#pragma once

// Scale/shift alignment of predicted depth onto ground truth and the depth
// metrics built on it.
//
// Fits minimize sum_i w_i (s * pred_i + t - gt_i)^2 with w_i = 1 / gt_i over
// valid pixels. The IRLS mode reweights by 1 / max(|r_i|, 1e-6) to
// approximate the L1 form of the same objective.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/geometry.hpp"
#include "dyfn/tensor.hpp"

namespace dyfn {

struct AffineAlignment {
  double scale = 1.0;
  double shift = 0.0;

  double apply(double d) const { return scale * d + shift; }
};

struct DepthMetrics {
  double abs_rel = 0.0;
  double delta1 = 0.0;
  std::size_t n_valid = 0;
};

enum class AlignMode { WeightedL2, IrlsL1 };

struct AlignOptions {
  AlignMode mode = AlignMode::WeightedL2;
  int irls_iterations = 10;
};

/// One frame's worth of depth samples. Tensors are borrowed.
struct DepthView {
  const Tensor* pred;
  const Tensor* gt;
  const Tensor* mask;
};

AffineAlignment solve_affine_frame(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                                   const AlignOptions& opts = {});
/// One fit over the pooled samples of all views.
AffineAlignment solve_affine_pooled(std::span<const DepthView> views, const AlignOptions& opts = {});
AffineAlignment solve_affine_global(const Sequence& seq, const AlignOptions& opts = {});
AffineAlignment solve_affine_firstframe(const Sequence& seq, const AlignOptions& opts = {});

/// sum_i (1 / gt_i) (s * pred_i + t - gt_i)^2 over valid pixels.
double weighted_objective(std::span<const DepthView> views, const AffineAlignment& a);

DepthMetrics compute_metrics(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                             const std::optional<AffineAlignment>& align = std::nullopt);

enum class Protocol { Metric, Video, Image };
std::string_view to_string(Protocol p) noexcept;
Protocol parse_protocol(std::string_view s);

struct IntervalRecord {
  std::size_t prefix = 0;
  DepthMetrics pooled;
  std::optional<AffineAlignment> alignment;  // video protocol only
};

struct SequenceEvaluation {
  Protocol protocol = Protocol::Video;
  std::optional<AffineAlignment> global_alignment;
  std::vector<DepthMetrics> per_frame;
  std::vector<AffineAlignment> frame_alignments;  // image protocol only
  DepthMetrics pooled;
  std::vector<IntervalRecord> intervals;
};

/// Evaluates the sequence's predictions. Each interval prefix re-solves the
/// protocol's alignment on frames [0, prefix).
SequenceEvaluation evaluate_sequence(const Sequence& seq, Protocol protocol,
                                     const std::vector<std::size_t>& intervals = {},
                                     const AlignOptions& opts = {});

nlohmann::json to_json(const DepthMetrics& m);
nlohmann::json to_json(const SequenceEvaluation& e);

}  // namespace dyfn
