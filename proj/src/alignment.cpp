#include "dyfn/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "dyfn/error.hpp"

namespace dyfn {

namespace {

struct Samples {
  std::vector<double> x, y;
};

Samples gather(std::span<const DepthView> views) {
  Samples s;
  for (const DepthView& v : views) {
    require(v.pred->shape() == v.gt->shape() && v.mask->shape() == v.gt->shape(),
            ErrorKind::InvalidInput,
            "alignment shape mismatch: pred " + shape_string(v.pred->shape()) + ", gt " +
                shape_string(v.gt->shape()));
    for (std::size_t i = 0; i < v.gt->size(); ++i) {
      if ((*v.mask)[i] < 0.5) continue;
      s.x.push_back((*v.pred)[i]);
      s.y.push_back((*v.gt)[i]);
    }
  }
  return s;
}

AffineAlignment weighted_fit(const Samples& s, const std::vector<double>& w) {
  double sw = 0.0, sx = 0.0, sy = 0.0, sxx_raw = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    sw += w[i];
    sx += w[i] * s.x[i];
    sy += w[i] * s.y[i];
    sxx_raw += w[i] * s.x[i] * s.x[i];
  }
  const double xm = sx / sw, ym = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    const double dx = s.x[i] - xm;
    sxx += w[i] * dx * dx;
    sxy += w[i] * dx * (s.y[i] - ym);
  }
  if (!(sxx > 1e-20 * sxx_raw) || !(sxx > 0.0))
    fail(ErrorKind::DegenerateFit, "singular alignment system (predictions are constant)");
  AffineAlignment a;
  a.scale = sxy / sxx;
  a.shift = ym - a.scale * xm;
  return a;
}

AffineAlignment solve(const Samples& s, const AlignOptions& opts) {
  if (s.x.size() < 2)
    fail(ErrorKind::InsufficientData,
         "alignment needs at least 2 valid pixels, got " + std::to_string(s.x.size()));
  std::vector<double> base(s.x.size());
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    require(s.y[i] > 0.0, ErrorKind::Validation, "ground-truth depth must be positive");
    base[i] = 1.0 / s.y[i];
  }
  AffineAlignment a = weighted_fit(s, base);
  if (opts.mode == AlignMode::IrlsL1) {
    std::vector<double> w(base.size());
    for (int it = 0; it < opts.irls_iterations; ++it) {
      for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = base[i] / std::max(std::abs(a.apply(s.x[i]) - s.y[i]), 1e-6);
      a = weighted_fit(s, w);
    }
  }
  if (!(a.scale > 0.0) || !std::isfinite(a.shift))
    fail(ErrorKind::DegenerateFit, "fitted scale " + std::to_string(a.scale) + " is not positive");
  return a;
}

std::vector<DepthView> views_of(const Sequence& seq, std::size_t count) {
  std::vector<DepthView> v;
  for (std::size_t j = 0; j < count; ++j) {
    const auto& fr = seq.frames[j];
    require(fr.pred.has_value(), ErrorKind::Validation,
            "frame " + std::to_string(j) + " has no prediction");
    v.push_back({&fr.pred->depth, &fr.gt.depth, &fr.gt.valid_mask});
  }
  return v;
}

}  // namespace

AffineAlignment solve_affine_frame(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                                   const AlignOptions& opts) {
  const DepthView v{&pred, &gt, &mask};
  return solve_affine_pooled(std::span(&v, 1), opts);
}

AffineAlignment solve_affine_pooled(std::span<const DepthView> views, const AlignOptions& opts) {
  return solve(gather(views), opts);
}

AffineAlignment solve_affine_global(const Sequence& seq, const AlignOptions& opts) {
  require(!seq.frames.empty(), ErrorKind::InsufficientData, "empty sequence");
  const auto v = views_of(seq, seq.frames.size());
  return solve_affine_pooled(v, opts);
}

AffineAlignment solve_affine_firstframe(const Sequence& seq, const AlignOptions& opts) {
  require(!seq.frames.empty(), ErrorKind::InsufficientData, "empty sequence");
  const auto v = views_of(seq, 1);
  return solve_affine_pooled(v, opts);
}

double weighted_objective(std::span<const DepthView> views, const AffineAlignment& a) {
  double obj = 0.0;
  for (const DepthView& v : views)
    for (std::size_t i = 0; i < v.gt->size(); ++i) {
      if ((*v.mask)[i] < 0.5) continue;
      const double r = a.apply((*v.pred)[i]) - (*v.gt)[i];
      obj += r * r / (*v.gt)[i];
    }
  return obj;
}

namespace {

struct MetricSums {
  double abs_rel = 0.0;
  std::size_t good = 0;
  std::size_t n = 0;

  void add(const Tensor& pred, const Tensor& gt, const Tensor& mask,
           const std::optional<AffineAlignment>& align) {
    require(pred.shape() == gt.shape() && mask.shape() == gt.shape(), ErrorKind::InvalidInput,
            "metric shape mismatch");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (mask[i] < 0.5) continue;
      const double d = gt[i];
      const double p = align ? align->apply(pred[i]) : pred[i];
      abs_rel += std::abs(d - p) / d;
      if (p > 0.0 && std::max(d / p, p / d) < 1.25) ++good;
      ++n;
    }
  }

  DepthMetrics finish() const {
    if (n == 0) fail(ErrorKind::InsufficientData, "no valid pixels to evaluate");
    return {abs_rel / static_cast<double>(n),
            static_cast<double>(good) / static_cast<double>(n), n};
  }
};

}  // namespace

DepthMetrics compute_metrics(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                             const std::optional<AffineAlignment>& align) {
  MetricSums s;
  s.add(pred, gt, mask, align);
  return s.finish();
}

std::string_view to_string(Protocol p) noexcept {
  switch (p) {
    case Protocol::Metric: return "metric";
    case Protocol::Video: return "video";
    case Protocol::Image: return "image";
  }
  return "?";
}

Protocol parse_protocol(std::string_view s) {
  if (s == "metric") return Protocol::Metric;
  if (s == "video") return Protocol::Video;
  if (s == "image") return Protocol::Image;
  fail(ErrorKind::InvalidInput, "unknown protocol '" + std::string(s) + "'");
}

namespace {

// Pooled metrics over frames [0, count) under the protocol.
DepthMetrics pooled_prefix(const Sequence& seq, std::size_t count, Protocol protocol,
                           const std::optional<AffineAlignment>& global,
                           const std::vector<AffineAlignment>& per_frame) {
  MetricSums s;
  for (std::size_t j = 0; j < count; ++j) {
    const auto& fr = seq.frames[j];
    std::optional<AffineAlignment> a;
    if (protocol == Protocol::Video) a = global;
    if (protocol == Protocol::Image) a = per_frame[j];
    s.add(fr.pred->depth, fr.gt.depth, fr.gt.valid_mask, a);
  }
  return s.finish();
}

}  // namespace

SequenceEvaluation evaluate_sequence(const Sequence& seq, Protocol protocol,
                                     const std::vector<std::size_t>& intervals,
                                     const AlignOptions& opts) {
  require(!seq.frames.empty(), ErrorKind::InsufficientData, "empty sequence");
  const auto views = views_of(seq, seq.frames.size());
  SequenceEvaluation e;
  e.protocol = protocol;
  if (protocol == Protocol::Video) e.global_alignment = solve_affine_pooled(views, opts);
  if (protocol == Protocol::Image)
    for (const DepthView& v : views) e.frame_alignments.push_back(solve_affine_pooled(std::span(&v, 1), opts));

  for (std::size_t j = 0; j < seq.frames.size(); ++j) {
    std::optional<AffineAlignment> a;
    if (protocol == Protocol::Video) a = e.global_alignment;
    if (protocol == Protocol::Image) a = e.frame_alignments[j];
    e.per_frame.push_back(compute_metrics(*views[j].pred, *views[j].gt, *views[j].mask, a));
  }
  e.pooled = pooled_prefix(seq, seq.frames.size(), protocol, e.global_alignment, e.frame_alignments);

  for (std::size_t prefix : intervals) {
    require(prefix >= 1 && prefix <= seq.frames.size(), ErrorKind::InvalidInput,
            "interval prefix " + std::to_string(prefix) + " outside [1, " +
                std::to_string(seq.frames.size()) + "]");
    IntervalRecord r;
    r.prefix = prefix;
    if (protocol == Protocol::Video)
      r.alignment = solve_affine_pooled(std::span(views.data(), prefix), opts);
    r.pooled = pooled_prefix(seq, prefix, protocol, r.alignment, e.frame_alignments);
    e.intervals.push_back(r);
  }
  return e;
}

nlohmann::json to_json(const DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel}, {"delta1", m.delta1}, {"n_valid", m.n_valid}};
}

nlohmann::json to_json(const SequenceEvaluation& e) {
  nlohmann::json j;
  j["protocol"] = std::string(to_string(e.protocol));
  if (e.global_alignment)
    j["global_alignment"] = {{"s", e.global_alignment->scale}, {"t", e.global_alignment->shift}};
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t k = 0; k < e.per_frame.size(); ++k) {
    nlohmann::json f = to_json(e.per_frame[k]);
    if (!e.frame_alignments.empty())
      f["alignment"] = {{"s", e.frame_alignments[k].scale}, {"t", e.frame_alignments[k].shift}};
    frames.push_back(std::move(f));
  }
  j["per_frame"] = std::move(frames);
  j["pooled"] = to_json(e.pooled);
  nlohmann::json iv = nlohmann::json::array();
  for (const auto& r : e.intervals) {
    nlohmann::json x = to_json(r.pooled);
    x["prefix"] = r.prefix;
    if (r.alignment) x["alignment"] = {{"s", r.alignment->scale}, {"t", r.alignment->shift}};
    iv.push_back(std::move(x));
  }
  j["intervals"] = std::move(iv);
  return j;
}

}  // namespace dyfn
