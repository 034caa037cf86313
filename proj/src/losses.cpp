#include "dyfn/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dyfn/error.hpp"
#include "dyfn/rng.hpp"

namespace dyfn {

std::string_view to_string(AlignStrategy s) noexcept {
  return s == AlignStrategy::Global ? "global" : "first_frame";
}

AlignStrategy parse_strategy(std::string_view s) {
  if (s == "first_frame") return AlignStrategy::FirstFrame;
  if (s == "global") return AlignStrategy::Global;
  fail(ErrorKind::InvalidInput, "unknown alignment strategy '" + std::string(s) + "'");
}

void validate_weights(const LossWeights& w) {
  require(w.w_align >= 0.0 && w.w_temp >= 0.0 && w.w_local >= 0.0 && w.w_normal >= 0.0 && w.w_mask >= 0.0,
          ErrorKind::InvalidInput, "loss weights must be >= 0");
  for (int k : w.windows) require(k > 0, ErrorKind::InvalidInput, "temporal windows must be positive");
  for (double a : w.local_scales)
    require(a > 0.0 && a < 1.0, ErrorKind::InvalidInput, "local scales must lie in (0, 1)");
  require(w.local_neighborhood_cap >= 1, ErrorKind::InvalidInput, "anchor cap must be >= 1");
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"w_align", w.w_align},
          {"w_temp", w.w_temp},
          {"w_local", w.w_local},
          {"w_normal", w.w_normal},
          {"w_mask", w.w_mask},
          {"windows", w.windows},
          {"local_scales", w.local_scales},
          {"local_neighborhood_cap", w.local_neighborhood_cap},
          {"shift", w.shift == ShiftMode::Depth ? "depth" : "uniform"}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  try {
    w.w_align = j.value("w_align", w.w_align);
    w.w_temp = j.value("w_temp", w.w_temp);
    w.w_local = j.value("w_local", w.w_local);
    w.w_normal = j.value("w_normal", w.w_normal);
    w.w_mask = j.value("w_mask", w.w_mask);
    w.windows = j.value("windows", w.windows);
    w.local_scales = j.value("local_scales", w.local_scales);
    w.local_neighborhood_cap = j.value("local_neighborhood_cap", w.local_neighborhood_cap);
    const std::string shift = j.value("shift", std::string("depth"));
    require(shift == "depth" || shift == "uniform", ErrorKind::InvalidInput, "shift must be depth|uniform");
    w.shift = shift == "depth" ? ShiftMode::Depth : ShiftMode::Uniform;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("bad loss weights: ") + e.what());
  }
  validate_weights(w);
  return w;
}

nlohmann::json to_json(const LossReport& r) {
  return {{"total", r.total},
          {"components", r.components},
          {"alignment", {{"s", r.alignment_used.scale}, {"t", r.alignment_used.shift}}},
          {"temp_empty_window", r.temp_empty_window}};
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void add_scaled(Tensor* dst, const Tensor& src, double g) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += g * src[i];
}

void check_frame(const LossFrame& f) {
  require(f.gt != nullptr, ErrorKind::InvalidInput, "loss frame without ground truth");
  require(f.points.shape() == f.gt->point_map.shape(), ErrorKind::ShapeMismatch,
          "predicted point map " + shape_string(f.points.shape()) + " vs ground truth " +
              shape_string(f.gt->point_map.shape()));
}

Tape& tape_of(std::span<const LossFrame> clip) {
  require(!clip.empty(), ErrorKind::InvalidInput, "empty clip");
  return *clip.front().points.tape();
}

Tensor z_channel(const Tensor& points) {
  const std::size_t hw = points.size() / 3;
  Tensor z(Shape{points.dim(1), points.dim(2)});
  for (std::size_t i = 0; i < hw; ++i) z[i] = points[2 * hw + i];
  return z;
}

std::size_t total_valid(std::span<const LossFrame> clip) {
  std::size_t n = 0;
  for (const auto& f : clip) n += f.gt->valid_count();
  return n;
}

// Depth fit over the given frames; one sample pins the scale only.
AffineAlignment fit_clip(std::span<const LossFrame> frames) {
  std::vector<Tensor> depths;
  depths.reserve(frames.size());
  for (const auto& f : frames) depths.push_back(z_channel(f.points.value()));
  if (total_valid(frames) == 1) {
    for (std::size_t j = 0; j < frames.size(); ++j)
      for (std::size_t i = 0; i < depths[j].size(); ++i)
        if (frames[j].gt->valid_mask[i] >= 0.5) {
          require(depths[j][i] > 0.0, ErrorKind::DegenerateFit, "single-sample fit needs a positive depth");
          return {frames[j].gt->depth[i] / depths[j][i], 0.0};
        }
  }
  std::vector<DepthView> views;
  for (std::size_t j = 0; j < frames.size(); ++j)
    views.push_back({&depths[j], &frames[j].gt->depth, &frames[j].gt->valid_mask});
  return solve_affine_pooled(views);
}

}  // namespace

Var loss_align(std::span<const LossFrame> clip, AlignStrategy strategy, ShiftMode shift,
               AffineAlignment* used, AlignmentMemo* memo) {
  Tape& tape = tape_of(clip);
  for (const auto& f : clip) check_frame(f);

  AffineAlignment a;
  if (memo && memo->replay) {
    require(memo->clip.has_value(), ErrorKind::InvalidInput, "alignment memo has no clip fit");
    a = *memo->clip;
  } else if (total_valid(clip) > 0) {
    const std::size_t n = strategy == AlignStrategy::FirstFrame ? 1 : clip.size();
    a = fit_clip(clip.first(n));
  }
  if (memo && !memo->replay) memo->clip = a;
  if (used) *used = a;

  // residual weights: d/dp of |s p + t e - q| / z
  std::vector<Tensor> dres;
  std::vector<Var> inputs;
  double value = 0.0;
  for (const auto& f : clip) {
    const Tensor& p = f.points.value();
    const Tensor& q = f.gt->point_map;
    const Tensor& m = f.gt->valid_mask;
    const std::size_t hw = m.size();
    Tensor d(p.shape());
    for (std::size_t i = 0; i < hw; ++i) {
      if (m[i] < 0.5) continue;
      const double w = 1.0 / f.gt->depth[i];
      for (std::size_t c = 0; c < 3; ++c) {
        const double t = (shift == ShiftMode::Uniform || c == 2) ? a.shift : 0.0;
        const double r = a.scale * p[c * hw + i] + t - q[c * hw + i];
        value += w * std::abs(r);
        d[c * hw + i] = w * a.scale * sign(r);
      }
    }
    dres.push_back(std::move(d));
    inputs.push_back(f.points);
  }
  return tape.record(Tensor::scalar(value), std::move(inputs),
                     [dres = std::move(dres)](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t j = 0; j < dres.size(); ++j) add_scaled(gi[j], dres[j], g[0]);
  });
}

Var loss_temp(std::span<const LossFrame> clip, const AffineAlignment& alignment,
              const std::vector<int>& windows, bool* empty_window) {
  Tape& tape = tape_of(clip);
  for (const auto& f : clip) check_frame(f);
  const std::size_t len = clip.size();
  const int kmin = windows.empty() ? 1 : *std::min_element(windows.begin(), windows.end());
  if (empty_window) *empty_window = windows.empty() || len <= static_cast<std::size_t>(kmin);

  const double s = alignment.scale;
  std::vector<Tensor> grads;
  std::vector<Var> inputs;
  for (const auto& f : clip) {
    grads.emplace_back(f.points.shape());
    inputs.push_back(f.points);
  }
  double value = 0.0;
  for (int k : windows) {
    require(k > 0, ErrorKind::InvalidInput, "temporal windows must be positive");
    const std::size_t ku = static_cast<std::size_t>(k);
    for (std::size_t j = 0; j + ku < len; ++j) {
      const Tensor& pa = clip[j].points.value();
      const Tensor& pb = clip[j + ku].points.value();
      const Tensor& qa = clip[j].gt->point_map;
      const Tensor& qb = clip[j + ku].gt->point_map;
      const Tensor& ma = clip[j].gt->valid_mask;
      const Tensor& mb = clip[j + ku].gt->valid_mask;
      const std::size_t hw = ma.size();
      for (std::size_t i = 0; i < hw; ++i) {
        if (ma[i] < 0.5 || mb[i] < 0.5) continue;
        const double w = 1.0 / clip[j].gt->depth[i];
        double dp = 0.0, dq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          dp += std::abs(pa[c * hw + i] - pb[c * hw + i]);
          dq += std::abs(qa[c * hw + i] - qb[c * hw + i]);
        }
        const double r = s * dp - dq;
        value += w * std::abs(r);
        const double outer = w * sign(r) * s;
        for (std::size_t c = 0; c < 3; ++c) {
          const double inner = sign(pa[c * hw + i] - pb[c * hw + i]);
          grads[j][c * hw + i] += outer * inner;
          grads[j + ku][c * hw + i] -= outer * inner;
        }
      }
    }
  }
  return tape.record(Tensor::scalar(value), std::move(inputs),
                     [grads = std::move(grads)](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t j = 0; j < grads.size(); ++j) add_scaled(gi[j], grads[j], g[0]);
  });
}

std::vector<std::size_t> sample_anchors(const Tensor& valid_mask, double scale, std::size_t cap,
                                        std::uint64_t seed) {
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < valid_mask.size(); ++i)
    if (valid_mask[i] >= 0.5) valid.push_back(i);
  const std::size_t want = std::min<std::size_t>(
      static_cast<std::size_t>(std::ceil(scale * static_cast<double>(valid.size()))), cap);
  Rng rng(seed);
  for (std::size_t k = 0; k < want; ++k) std::swap(valid[k], valid[k + rng.index(valid.size() - k)]);
  valid.resize(want);
  std::sort(valid.begin(), valid.end());
  return valid;
}

double local_radius(double scale, double z, std::size_t height, std::size_t width, double focal) {
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  return scale * z * std::sqrt(w * w + h * h) / (2.0 * focal);
}

namespace {

// Weighted fit of q ~ s p + t (t a 3-vector) over the neighborhood.
std::optional<LocalFit> fit_neighborhood(const Tensor& p, const Tensor& q, const Tensor& depth,
                                         const std::vector<std::size_t>& hood) {
  const std::size_t hw = depth.size();
  double sw = 0.0;
  std::array<double, 3> xm{}, ym{};
  for (std::size_t i : hood) {
    const double w = 1.0 / depth[i];
    sw += w;
    for (std::size_t c = 0; c < 3; ++c) {
      xm[c] += w * p[c * hw + i];
      ym[c] += w * q[c * hw + i];
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    xm[c] /= sw;
    ym[c] /= sw;
  }
  double sxx = 0.0, sxy = 0.0, sxx_raw = 0.0;
  for (std::size_t i : hood) {
    const double w = 1.0 / depth[i];
    for (std::size_t c = 0; c < 3; ++c) {
      const double dx = p[c * hw + i] - xm[c];
      sxx += w * dx * dx;
      sxy += w * dx * (q[c * hw + i] - ym[c]);
      sxx_raw += w * p[c * hw + i] * p[c * hw + i];
    }
  }
  if (!(sxx > 1e-20 * sxx_raw) || !(sxx > 0.0)) return std::nullopt;
  LocalFit f;
  f.scale = sxy / sxx;
  for (std::size_t c = 0; c < 3; ++c) f.shift[c] = ym[c] - f.scale * xm[c];
  return f;
}

}  // namespace

Var loss_local(Var points, const FrameSample& gt, const std::vector<double>& scales,
               std::size_t anchor_cap, std::uint64_t seed, AlignmentMemo* memo) {
  Tape& tape = *points.tape();
  require(points.shape() == gt.point_map.shape(), ErrorKind::ShapeMismatch, "local loss shape mismatch");
  require(gt.intrinsics.f > 0.0, ErrorKind::InvalidInput, "local loss needs a positive focal length");
  const Tensor& p = points.value();
  const Tensor& q = gt.point_map;
  const Tensor& m = gt.valid_mask;
  const std::size_t hw = m.size();
  auto gt_point = [&](std::size_t i) {
    return std::array<double, 3>{q[i], q[hw + i], q[2 * hw + i]};
  };

  Tensor grad(p.shape());
  double value = 0.0;
  std::size_t anchors_total = 0;
  for (std::size_t si = 0; si < scales.size(); ++si) {
    const double alpha = scales[si];
    const auto anchors = sample_anchors(m, alpha, anchor_cap, derive_seed(seed, "anchors", si));
    anchors_total += anchors.size();
    for (std::size_t a : anchors) {
      const double r = local_radius(alpha, gt.depth[a], gt.height(), gt.width(), gt.intrinsics.f);
      const auto pa = gt_point(a);
      std::vector<std::size_t> hood;
      for (std::size_t i = 0; i < hw; ++i) {
        if (m[i] < 0.5) continue;
        const auto pi = gt_point(i);
        const double dx = pi[0] - pa[0], dy = pi[1] - pa[1], dz = pi[2] - pa[2];
        if (std::sqrt(dx * dx + dy * dy + dz * dz) <= r) hood.push_back(i);
      }
      if (hood.size() < 2) continue;  // a lone point has no local shape
      std::optional<LocalFit> fit;
      if (memo && memo->replay) {
        require(memo->cursor < memo->local.size(), ErrorKind::InvalidInput, "alignment memo exhausted");
        fit = memo->local[memo->cursor++];
      } else {
        fit = fit_neighborhood(p, q, gt.depth, hood);
        if (memo) memo->local.push_back(fit);
      }
      if (!fit) continue;
      const double s = fit->scale;
      for (std::size_t i : hood) {
        const double w = 1.0 / gt.depth[i];
        for (std::size_t c = 0; c < 3; ++c) {
          const double res = s * p[c * hw + i] + fit->shift[c] - q[c * hw + i];
          value += w * std::abs(res);
          grad[c * hw + i] += w * s * sign(res);
        }
      }
    }
  }
  require(anchors_total > 0, ErrorKind::InsufficientData, "local loss found no valid anchors");
  return tape.record(Tensor::scalar(value), {points},
                     [grad = std::move(grad)](const Tensor& g, std::span<Tensor* const> gi) {
    add_scaled(gi[0], grad, g[0]);
  });
}

namespace {

using V3 = std::array<double, 3>;

V3 sub3(const V3& a, const V3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
V3 cross(const V3& a, const V3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const V3& a, const V3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const V3& a) { return std::sqrt(dot(a, a)); }

}  // namespace

Var loss_normal(Var points, const FrameSample& gt) {
  Tape& tape = *points.tape();
  require(points.shape() == gt.point_map.shape(), ErrorKind::ShapeMismatch, "normal loss shape mismatch");
  const std::size_t h = gt.height(), w = gt.width();
  require(h >= 2 && w >= 2, ErrorKind::InvalidInput, "normal loss needs H, W >= 2");
  const Tensor& p = points.value();
  const Tensor& q = gt.point_map;
  const Tensor& m = gt.valid_mask;
  const std::size_t hw = h * w;
  auto at = [hw](const Tensor& t, std::size_t i) { return V3{t[i], t[hw + i], t[2 * hw + i]}; };

  Tensor grad(p.shape());
  auto push = [&](std::size_t i, const V3& g) {
    for (std::size_t c = 0; c < 3; ++c) grad[c * hw + i] += g[c];
  };
  double value = 0.0;
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const std::size_t i = y * w + x, ir = i + 1, id = i + w;
      if (m[i] < 0.5 || m[ir] < 0.5 || m[id] < 0.5) continue;
      const V3 e1 = sub3(at(p, ir), at(p, i)), e2 = sub3(at(p, id), at(p, i));
      const V3 a = cross(e1, e2);
      const V3 b = cross(sub3(at(q, ir), at(q, i)), sub3(at(q, id), at(q, i)));
      const double na = norm(a), nb = norm(b);
      if (na < 1e-12 || nb < 1e-12) continue;
      const V3 c = cross(a, b);
      const double u = dot(a, b), v = norm(c);
      value += std::atan2(v, u);
      if (v < 1e-12 * na * nb) continue;  // non-differentiable at zero angle
      // d theta / d a = (u (b x c) / v - v b) / (|a|^2 |b|^2)
      const V3 bc = cross(b, c);
      const double den = na * na * nb * nb;
      V3 g;
      for (std::size_t k = 0; k < 3; ++k) g[k] = (u * bc[k] / v - v * b[k]) / den;
      const V3 gr = cross(e2, g);  // d/d p_right
      const V3 gd = cross(g, e1);  // d/d p_down
      push(ir, gr);
      push(id, gd);
      push(i, {-gr[0] - gd[0], -gr[1] - gd[1], -gr[2] - gd[2]});
    }
  return tape.record(Tensor::scalar(value), {points},
                     [grad = std::move(grad)](const Tensor& g, std::span<Tensor* const> gi) {
    add_scaled(gi[0], grad, g[0]);
  });
}

Var loss_mask(Var mask_logits, const Tensor& infinity_mask) {
  Tape& tape = *mask_logits.tape();
  require(mask_logits.shape() == infinity_mask.shape(), ErrorKind::ShapeMismatch, "mask loss shape mismatch");
  for (double v : infinity_mask.data())
    require(v == 0.0 || v == 1.0, ErrorKind::InvalidInput, "infinity mask must be binary");
  Var target = tape.constant(elementwise(BinaryOp::Sub, Tensor(infinity_mask.shape(), 1.0), infinity_mask));
  return ops::mean(ops::unary(ops::UnaryOp::Square, ops::sub(mask_logits, target)));
}

namespace {

template <class F>
auto term(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  }
}

Tensor infinity_mask(const FrameSample& gt) {
  return elementwise(BinaryOp::Sub, Tensor(gt.valid_mask.shape(), 1.0), gt.valid_mask);
}

}  // namespace

LossResult loss_total(std::span<const LossFrame> clip, const LossWeights& weights,
                      AlignStrategy strategy, std::uint64_t seed, AlignmentMemo* memo) {
  validate_weights(weights);
  Tape& tape = tape_of(clip);
  LossReport report;
  Var align = term("align", [&] { return loss_align(clip, strategy, weights.shift, &report.alignment_used, memo); });
  Var temp = term("temp", [&] {
    return loss_temp(clip, report.alignment_used, weights.windows, &report.temp_empty_window);
  });
  Var local = tape.constant(Tensor::scalar(0.0));
  Var normal = tape.constant(Tensor::scalar(0.0));
  Var mask = tape.constant(Tensor::scalar(0.0));
  for (std::size_t j = 0; j < clip.size(); ++j) {
    const LossFrame& f = clip[j];
    mask = ops::add(mask, term("mask", [&] { return loss_mask(f.mask_logits, infinity_mask(*f.gt)); }));
    if (f.gt->valid_count() == 0) continue;
    local = ops::add(local, term("local", [&] {
      return loss_local(f.points, *f.gt, weights.local_scales, weights.local_neighborhood_cap,
                        derive_seed(seed, "local", j), memo);
    }));
    normal = ops::add(normal, term("normal", [&] { return loss_normal(f.points, *f.gt); }));
  }
  Var moge = ops::add(ops::add(ops::affine(local, weights.w_local, 0.0), ops::affine(normal, weights.w_normal, 0.0)),
                      ops::affine(mask, weights.w_mask, 0.0));
  Var total = ops::add(moge,
                       ops::add(ops::affine(align, weights.w_align, 0.0), ops::affine(temp, weights.w_temp, 0.0)));
  report.components = {{"align", align.value().item()},
                       {"temp", temp.value().item()},
                       {"local", local.value().item()},
                       {"normal", normal.value().item()},
                       {"mask", mask.value().item()}};
  report.total = total.value().item();
  return {total, report};
}

namespace {

struct ConstClip {
  Tape tape;
  std::vector<LossFrame> frames;

  explicit ConstClip(const Sequence& seq) {
    require(seq.has_predictions(), ErrorKind::InvalidInput, "sequence has no predictions");
    for (const auto& f : seq.frames)
      frames.push_back({tape.constant(f.pred->point_map), tape.constant(f.pred->mask_logits), &f.gt});
  }
};

}  // namespace

std::pair<double, AffineAlignment> loss_align(const Sequence& seq, AlignStrategy strategy, ShiftMode shift) {
  ConstClip c(seq);
  AffineAlignment a;
  const double v = loss_align(c.frames, strategy, shift, &a).value().item();
  return {v, a};
}

double loss_temp(const Sequence& seq, const AffineAlignment& alignment, const std::vector<int>& windows,
                 bool* empty_window) {
  ConstClip c(seq);
  return loss_temp(c.frames, alignment, windows, empty_window).value().item();
}

double loss_local(const Prediction& pred, const FrameSample& gt, const std::vector<double>& scales,
                  std::size_t anchor_cap, std::uint64_t seed) {
  Tape tape;
  return loss_local(tape.constant(pred.point_map), gt, scales, anchor_cap, seed).value().item();
}

double loss_normal(const Prediction& pred, const FrameSample& gt) {
  Tape tape;
  return loss_normal(tape.constant(pred.point_map), gt).value().item();
}

double loss_mask(const Tensor& mask_logits, const Tensor& infinity_mask) {
  Tape tape;
  return loss_mask(tape.constant(mask_logits), infinity_mask).value().item();
}

LossReport loss_total(const Sequence& seq, const LossWeights& weights, AlignStrategy strategy,
                      std::uint64_t seed) {
  ConstClip c(seq);
  return loss_total(c.frames, weights, strategy, seed).report;
}

}  // namespace dyfn
