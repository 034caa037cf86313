#include "dyfn/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Geometry>

#include "dyfn/error.hpp"
#include "dyfn/io.hpp"
#include "dyfn/ntf.hpp"
#include "dyfn/rng.hpp"

namespace dyfn {

namespace fs = std::filesystem;

std::string_view to_string(SceneKind k) noexcept {
  switch (k) {
    case SceneKind::PlaneRoom: return "plane-room";
    case SceneKind::SineTerrain: return "sine-terrain";
    case SceneKind::SphereField: return "sphere-field";
  }
  return "?";
}

SceneKind parse_scene_kind(std::string_view s) {
  if (s == "plane-room") return SceneKind::PlaneRoom;
  if (s == "sine-terrain") return SceneKind::SineTerrain;
  if (s == "sphere-field") return SceneKind::SphereField;
  fail(ErrorKind::InvalidInput, "unknown scene kind '" + std::string(s) + "'");
}

nlohmann::json to_json(const SceneSpec& s) {
  return {{"kind", std::string(to_string(s.kind))},
          {"extent", s.extent},
          {"height", s.height},
          {"width", s.width},
          {"focal", s.focal},
          {"frames", s.frames},
          {"stride", s.stride},
          {"path",
           {{"translation", {s.path.translation.x(), s.path.translation.y(), s.path.translation.z()}},
            {"yaw_rate", s.path.yaw_rate},
            {"sway_amplitude", s.path.sway_amplitude},
            {"sway_period", s.path.sway_period}}},
          {"seed", s.seed}};
}

nlohmann::json to_json(const DriftSpec& d) {
  return {{"channels", d.channels},
          {"scale_volatility", d.scale_volatility},
          {"shift_volatility", d.shift_volatility},
          {"scale_trend", d.scale_trend},
          {"shift_trend", d.shift_trend},
          {"drift_bound", d.drift_bound},
          {"feature_noise", d.feature_noise},
          {"geometry_noise", d.geometry_noise},
          {"pattern_variation", d.pattern_variation},
          {"smoothing", d.smoothing},
          {"sigma0_range", {d.sigma0_lo, d.sigma0_hi}},
          {"mu0_range", {d.mu0_lo, d.mu0_hi}},
          {"a_s", d.a_s},
          {"a_t", d.a_t}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  if (j.contains("kind")) s.kind = parse_scene_kind(j["kind"].get<std::string>());
  s.extent = j.value("extent", s.extent);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.focal = j.value("focal", s.focal);
  s.frames = j.value("frames", s.frames);
  s.stride = j.value("stride", s.stride);
  s.seed = j.value("seed", s.seed);
  if (j.contains("path")) {
    const auto& p = j["path"];
    if (p.contains("translation")) {
      const auto& t = p["translation"];
      require(t.is_array() && t.size() == 3, ErrorKind::InvalidInput, "path.translation needs 3 values");
      s.path.translation = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
    }
    s.path.yaw_rate = p.value("yaw_rate", s.path.yaw_rate);
    s.path.sway_amplitude = p.value("sway_amplitude", s.path.sway_amplitude);
    s.path.sway_period = p.value("sway_period", s.path.sway_period);
  }
  return s;
}

DriftSpec drift_from_json(const nlohmann::json& j) {
  DriftSpec d;
  d.channels = j.value("channels", d.channels);
  d.scale_volatility = j.value("scale_volatility", d.scale_volatility);
  d.shift_volatility = j.value("shift_volatility", d.shift_volatility);
  d.scale_trend = j.value("scale_trend", d.scale_trend);
  d.shift_trend = j.value("shift_trend", d.shift_trend);
  d.drift_bound = j.value("drift_bound", d.drift_bound);
  d.feature_noise = j.value("feature_noise", d.feature_noise);
  d.geometry_noise = j.value("geometry_noise", d.geometry_noise);
  d.pattern_variation = j.value("pattern_variation", d.pattern_variation);
  d.smoothing = j.value("smoothing", d.smoothing);
  if (j.contains("sigma0_range")) {
    d.sigma0_lo = j["sigma0_range"][0].get<double>();
    d.sigma0_hi = j["sigma0_range"][1].get<double>();
  }
  if (j.contains("mu0_range")) {
    d.mu0_lo = j["mu0_range"][0].get<double>();
    d.mu0_hi = j["mu0_range"][1].get<double>();
  }
  d.a_s = j.value("a_s", d.a_s);
  d.a_t = j.value("a_t", d.a_t);
  return d;
}

namespace {

void validate_scene(const SceneSpec& s) {
  require(s.frames >= 1, ErrorKind::InvalidInput, "camera path has zero length (frames = 0)");
  require(s.height >= 2 && s.width >= 2, ErrorKind::InvalidInput, "resolution must be at least 2 x 2");
  require(s.height <= 65535 && s.width <= 65535, ErrorKind::InvalidInput, "resolution too large");
  require(s.extent > 0.0, ErrorKind::InvalidInput, "extent must be positive");
  require(s.focal >= 0.0, ErrorKind::InvalidInput, "focal must be >= 0");
  require(s.stride >= 1, ErrorKind::InvalidInput, "stride must be >= 1");
  require(s.path.sway_period > 0.0, ErrorKind::InvalidInput, "sway period must be positive");
}

Intrinsics intrinsics_of(const SceneSpec& s) {
  return {s.focal > 0.0 ? s.focal : static_cast<double>(s.width),
          0.5 * static_cast<double>(s.width - 1), 0.5 * static_cast<double>(s.height - 1)};
}

PoseSE3 pose_at(const SceneSpec& s, std::size_t frame) {
  const double t = static_cast<double>(frame);
  PoseSE3 p;
  p.rotation = Eigen::AngleAxisd(s.path.yaw_rate * t, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const double sway = s.path.sway_amplitude * std::sin(2.0 * M_PI * t / s.path.sway_period);
  p.translation = s.path.translation * t + Eigen::Vector3d(sway, 0.0, 0.0);
  return p;
}

struct Sphere {
  Eigen::Vector3d c;
  double r;
};

std::vector<Sphere> spheres_of(const SceneSpec& s) {
  Rng rng(derive_seed(s.seed, "spheres"));
  std::vector<Sphere> out;
  const double e = s.extent;
  for (int i = 0; i < 7; ++i)
    out.push_back({{rng.uniform(-0.45 * e, 0.45 * e), rng.uniform(-0.25 * e, 0.25 * e),
                    rng.uniform(0.45 * e, 0.9 * e)},
                   rng.uniform(0.08 * e, 0.18 * e)});
  return out;
}

struct TerrainParams {
  double height, amp, kx, kz, px, pz;
};

TerrainParams terrain_of(const SceneSpec& s) {
  Rng rng(derive_seed(s.seed, "terrain"));
  const double e = s.extent;
  return {0.25 * e, 0.06 * e, rng.uniform(1.0, 2.5) * 2.0 * M_PI / e,
          rng.uniform(1.0, 2.5) * 2.0 * M_PI / e, rng.uniform(0, 2 * M_PI), rng.uniform(0, 2 * M_PI)};
}

// Smallest positive ray parameter hitting the inside of the room box
// [-0.35e, 0.35e] x [-0.25e, 0.25e] x [-e, e].
double hit_room(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double e) {
  double best = std::numeric_limits<double>::infinity();
  const double lim[3] = {0.35 * e, 0.25 * e, e};
  for (int a = 0; a < 3; ++a) {
    if (d(a) == 0.0) continue;
    const double t = ((d(a) > 0.0 ? lim[a] : -lim[a]) - o(a)) / d(a);
    if (t > 0.0) best = std::min(best, t);
  }
  return best;
}

double hit_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Sphere& s) {
  const Eigen::Vector3d oc = o - s.c;
  const double a = d.squaredNorm(), b = oc.dot(d), c = oc.squaredNorm() - s.r * s.r;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::numeric_limits<double>::infinity();
  const double sq = std::sqrt(disc);
  // Numerically stable pair of roots.
  const double q = b > 0.0 ? -(b + sq) : -(b - sq);
  double t0 = q / a, t1 = c / q;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > 1e-12) return t0;
  if (t1 > 1e-12) return t1;
  return std::numeric_limits<double>::infinity();
}

double hit_terrain(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const TerrainParams& tp,
                   double e) {
  // y points down; the ground is y = height + amp * sin(kx x + px) sin(kz z + pz).
  auto g = [&](double t) {
    const Eigen::Vector3d p = o + t * d;
    return p.y() - (tp.height + tp.amp * std::sin(tp.kx * p.x() + tp.px) * std::sin(tp.kz * p.z() + tp.pz));
  };
  const double t_max = 4.0 * e;
  const int steps = 400;
  double t0 = 0.0, g0 = g(0.0);
  for (int i = 1; i <= steps; ++i) {
    const double t1 = t_max * i / steps;
    const double g1 = g(t1);
    if (g0 < 0.0 && g1 >= 0.0) {
      double lo = t0, hi = t1;
      for (int k = 0; k < 100; ++k) {
        const double mid = 0.5 * (lo + hi);
        if (g(mid) < 0.0) lo = mid; else hi = mid;
      }
      return 0.5 * (lo + hi);
    }
    t0 = t1;
    g0 = g1;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace

namespace {

struct SceneGeometry {
  std::vector<Sphere> spheres;
  TerrainParams terrain;
};

double cast(const SceneSpec& spec, const SceneGeometry& geo, const PoseSE3& pose, double u,
            double v) {
  const Intrinsics k = intrinsics_of(spec);
  // Unnormalized camera ray with unit z, so the hit parameter is the depth.
  const Eigen::Vector3d dc((u - k.cx) / k.f, (v - k.cy) / k.f, 1.0);
  const Eigen::Vector3d d = pose.rotation * dc;
  const Eigen::Vector3d& o = pose.translation;
  double t = std::numeric_limits<double>::infinity();
  switch (spec.kind) {
    case SceneKind::PlaneRoom:
      t = hit_room(o, d, spec.extent);
      break;
    case SceneKind::SphereField:
      // Back wall at z = extent behind the spheres.
      if (spec.extent - o.z() > 0.0 && d.z() > 0.0) t = (spec.extent - o.z()) / d.z();
      for (const Sphere& s : geo.spheres) t = std::min(t, hit_sphere(o, d, s));
      break;
    case SceneKind::SineTerrain:
      t = hit_terrain(o, d, geo.terrain, spec.extent);
      break;
  }
  return std::isfinite(t) ? t : 0.0;
}

}  // namespace

double cast_ray(const SceneSpec& spec, const PoseSE3& pose, double u, double v) {
  return cast(spec, {spheres_of(spec), terrain_of(spec)}, pose, u, v);
}

Sequence generate_scene(const SceneSpec& spec) {
  validate_scene(spec);
  const Intrinsics k = intrinsics_of(spec);
  const std::size_t h = spec.height, w = spec.width, hw = h * w;
  const SceneGeometry geo{spheres_of(spec), terrain_of(spec)};

  Sequence seq;
  seq.stride = spec.stride;
  seq.intrinsics = k;
  seq.frames.resize(spec.frames);
  seq.poses.resize(spec.frames);
  const auto n = static_cast<std::ptrdiff_t>(spec.frames);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jj = 0; jj < n; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    const PoseSE3 pose = pose_at(spec, j);
    FrameSample f;
    f.intrinsics = k;
    f.point_map = Tensor(Shape{3, h, w});
    f.depth = Tensor(Shape{h, w});
    f.valid_mask = Tensor(Shape{h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double z = cast(spec, geo, pose, static_cast<double>(x), static_cast<double>(y));
        if (!(z > 0.0)) continue;
        const std::size_t i = y * w + x;
        f.point_map[i] = (static_cast<double>(x) - k.cx) / k.f * z;
        f.point_map[hw + i] = (static_cast<double>(y) - k.cy) / k.f * z;
        f.point_map[2 * hw + i] = z;
        f.depth[i] = z;
        f.valid_mask[i] = 1.0;
      }
    seq.frames[j].gt = std::move(f);
    seq.poses[j] = pose;
  }
  for (std::size_t j = 0; j < seq.frames.size(); ++j) {
    const double frac = static_cast<double>(seq.frames[j].gt.valid_count()) / static_cast<double>(hw);
    require(frac >= 0.3, ErrorKind::Validation,
            "frame " + std::to_string(j) + " sees only " + std::to_string(frac * 100.0) +
                "% valid geometry");
  }
  seq.metadata["scene"] = to_json(spec);
  return seq;
}

// ---------------------------------------------------------------------------

SyntheticDecoder::SyntheticDecoder(std::vector<Tensor> canonical, std::vector<Tensor> masks,
                                   double a_s, double a_t)
    : canonical_(std::move(canonical)), masks_(std::move(masks)), a_s_(a_s), a_t_(a_t) {
  require(canonical_.size() == masks_.size(), ErrorKind::InvalidInput,
          "decoder needs one mask per canonical frame");
}

std::pair<double, double> SyntheticDecoder::coupling(const Tensor& mu, const Tensor& sigma) const {
  double ms = 0.0, mm = 0.0;
  for (double v : sigma.data()) ms += v;
  for (double v : mu.data()) mm += v;
  ms /= static_cast<double>(sigma.size());
  mm /= static_cast<double>(mu.size());
  return {std::exp(a_s_ * ms), a_t_ * mm};
}

Prediction SyntheticDecoder::decode(const Tensor& feature, std::size_t frame) const {
  const Tensor& g = canonical_.at(frame);
  const Tensor& m = masks_.at(frame);
  require(feature.rank() == 3 && feature.dim(1) == m.dim(0) && feature.dim(2) == m.dim(1),
          ErrorKind::InvalidInput,
          "feature " + shape_string(feature.shape()) + " does not match decoder resolution");
  const auto st = channel_stats(feature);
  const auto [s, t] = coupling(st.mean, st.stddev);
  const std::size_t hw = m.size();
  Tensor pm(g.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      if (m[i] < 0.5) continue;
      pm[c * hw + i] = s * g[c * hw + i] + (c == 2 ? t : 0.0);
    }
  return make_prediction(std::move(pm), m);
}

Var SyntheticDecoder::decode(Var feature, std::size_t frame) const {
  Tape& tape = *feature.tape();
  const Tensor& g = canonical_.at(frame);
  const Tensor& m = masks_.at(frame);
  auto [mu, sigma] = ops::channel_stats(feature);
  Var scale = ops::exp(ops::affine(ops::mean(sigma), a_s_, 0.0));
  Var shift = ops::affine(ops::mean(mu), a_t_, 0.0);
  const std::size_t hw = m.size();
  Tensor zhat(g.shape());
  for (std::size_t i = 0; i < hw; ++i) zhat[2 * hw + i] = m[i] > 0.5 ? 1.0 : 0.0;
  Tensor gm = g;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      if (m[i] < 0.5) gm[c * hw + i] = 0.0;
  return ops::add(ops::mul(tape.constant(std::move(gm)), scale),
                  ops::mul(tape.constant(std::move(zhat)), shift));
}

std::string SyntheticDecoder::checksum() const {
  std::string bytes;
  auto put = [&bytes](const Tensor& t) {
    bytes.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  };
  for (const auto& t : canonical_) put(t);
  for (const auto& t : masks_) put(t);
  bytes.append(reinterpret_cast<const char*>(&a_s_), sizeof a_s_);
  bytes.append(reinterpret_cast<const char*>(&a_t_), sizeof a_t_);
  return io::fnv1a_hex(bytes);
}

// ---------------------------------------------------------------------------

namespace {

// Separable Gaussian filter with clamped borders.
Tensor smooth(const Tensor& x, double sigma) {
  if (sigma <= 0.0) return x;
  const std::size_t h = x.dim(0), w = x.dim(1);
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double ks = 0.0;
  for (int i = -r; i <= r; ++i) ks += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= ks;
  auto clamp = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  Tensor tmp(x.shape()), out(x.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * x.at(y, clamp(static_cast<long>(xx) + i, w));
      tmp.at(y, xx) = acc;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp.at(clamp(static_cast<long>(y) + i, h), xx);
      out.at(y, xx) = acc;
    }
  return out;
}

Tensor white(std::size_t h, std::size_t w, Rng& rng) {
  Tensor t(Shape{h, w});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// Zero mean, unit population std (left as zeros if constant).
void standardize(Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m += v;
  m /= static_cast<double>(t.size());
  double var = 0.0;
  for (double v : t.data()) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / static_cast<double>(t.size()));
  for (double& v : t.data()) v = sd > 0.0 ? (v - m) / sd : 0.0;
}

double reflect(double x, double bound) {
  if (bound <= 0.0) return 0.0;
  for (int i = 0; i < 64 && (x > bound || x < -bound); ++i) x = x > bound ? 2.0 * bound - x : -2.0 * bound - x;
  return x;
}

}  // namespace

EncodedStream encode_with_drift(const Sequence& gt, const DriftSpec& d, std::uint64_t seed) {
  require(!gt.frames.empty(), ErrorKind::InvalidInput, "cannot encode an empty sequence");
  require(d.channels >= 1, ErrorKind::InvalidInput, "drift needs >= 1 channel");
  require(d.scale_volatility >= 0.0 && d.shift_volatility >= 0.0 && d.feature_noise >= 0.0 &&
              d.geometry_noise >= 0.0,
          ErrorKind::InvalidInput, "volatilities and noise levels must be >= 0");
  require(d.sigma0_lo > 0.0 && d.sigma0_hi >= d.sigma0_lo, ErrorKind::InvalidInput, "sigma0 range must be positive");
  require(d.a_s > 0.0 && d.a_t != 0.0, ErrorKind::InvalidInput, "decoder coupling constants must be nonzero");
  require(d.sigma0_lo - d.drift_bound / d.a_s > 0.0, ErrorKind::InvalidInput,
          "drift bound would drive channel std to zero");

  const std::size_t L = gt.frames.size(), h = gt.frames[0].gt.height(), w = gt.frames[0].gt.width();
  const std::size_t C = d.channels, hw = h * w;

  Rng base_rng(derive_seed(seed, "channel-init"));
  std::vector<double> sigma0(C), mu0(C);
  for (std::size_t c = 0; c < C; ++c) {
    sigma0[c] = base_rng.uniform(d.sigma0_lo, d.sigma0_hi);
    mu0[c] = base_rng.uniform(d.mu0_lo, d.mu0_hi);
  }
  std::vector<Tensor> base(C);
  for (std::size_t c = 0; c < C; ++c) {
    Rng r(derive_seed(seed, "pattern-base", c));
    base[c] = smooth(white(h, w, r), d.smoothing);
    standardize(base[c]);
  }

  // Walks: offsets of log-scale and shift relative to frame 0.
  std::vector<double> dlog(L, 0.0), dshift(L, 0.0);
  Rng walk(derive_seed(seed, "drift-walk"));
  for (std::size_t t = 1; t < L; ++t) {
    const double a = walk.normal(), b = walk.normal();
    dlog[t] = reflect(dlog[t - 1] + d.scale_trend + d.scale_volatility * a, d.drift_bound);
    dshift[t] = reflect(dshift[t - 1] + d.shift_trend + d.shift_volatility * b, d.drift_bound);
  }

  EncodedStream out;
  out.features.resize(L);
  out.trace.scale.resize(L);
  out.trace.shift.resize(L);
  std::vector<Tensor> canonical(L), masks(L);
  const auto nL = static_cast<std::ptrdiff_t>(L);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t tt = 0; tt < nL; ++tt) {
    const auto t = static_cast<std::size_t>(tt);
    Tensor f(Shape{C, h, w});
    double sig_mean = 0.0, mu_mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      Rng r(derive_seed(seed, "pattern-frame", t * C + c));
      Tensor p = smooth(white(h, w, r), d.smoothing);
      standardize(p);
      for (std::size_t i = 0; i < hw; ++i) p[i] = base[c][i] + d.pattern_variation * p[i];
      standardize(p);
      const double sc = sigma0[c] + dlog[t] / d.a_s;
      const double mc = mu0[c] + dshift[t] / d.a_t;
      sig_mean += sc;
      mu_mean += mc;
      for (std::size_t i = 0; i < hw; ++i) f[c * hw + i] = mc + sc * p[i];
    }
    if (d.feature_noise > 0.0) {
      Rng r(derive_seed(seed, "feature-noise", t));
      for (double& v : f.data()) v += d.feature_noise * r.normal();
    }
    sig_mean /= static_cast<double>(C);
    mu_mean /= static_cast<double>(C);
    out.trace.scale[t] = std::exp(d.a_s * sig_mean);
    out.trace.shift[t] = d.a_t * mu_mean;
    out.features[t] = std::move(f);

    const FrameSample& g = gt.frames[t].gt;
    Tensor can = g.point_map;
    if (d.geometry_noise > 0.0) {
      Rng r(derive_seed(seed, "geometry-noise", t));
      Tensor gamma = smooth(white(h, w, r), d.smoothing);
      standardize(gamma);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < hw; ++i) can[c * hw + i] *= 1.0 + d.geometry_noise * gamma[i];
    }
    canonical[t] = std::move(can);
    masks[t] = g.valid_mask;
  }
  out.decoder = SyntheticDecoder(std::move(canonical), std::move(masks), d.a_s, d.a_t);
  return out;
}

Simulation simulate(const SceneSpec& scene, const DriftSpec& drift, std::uint64_t seed) {
  SceneSpec sc = scene;
  sc.seed = derive_seed(seed, "scene");
  Simulation sim;
  sim.scene = scene;
  sim.drift = drift;
  sim.seed = seed;
  sim.sequence = generate_scene(sc);
  EncodedStream enc = encode_with_drift(sim.sequence, drift, derive_seed(seed, "encoder"));
  for (std::size_t j = 0; j < enc.features.size(); ++j) sim.sequence.frames[j].feature = std::move(enc.features[j]);
  sim.decoder = std::move(enc.decoder);
  sim.trace = std::move(enc.trace);
  return sim;
}

namespace {

std::string canonical_name(std::size_t j) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "frame_%04zu_canonical.ntf", j);
  return buf;
}

}  // namespace

void write_decoder(const fs::path& dir, const SyntheticDecoder& dec) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["a_s"] = dec.a_s();
  j["a_t"] = dec.a_t();
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t k = 0; k < dec.frames(); ++k) {
    const std::string c = canonical_name(k);
    ntf::write_tensor(dir / c, "canonical", dec.canonical(k));
    frames.push_back(c);
  }
  j["canonical"] = std::move(frames);
  io::write_json(dir / "decoder.json", j);
}

SyntheticDecoder load_decoder(const fs::path& decoder_json) {
  if (!fs::exists(decoder_json)) fail(ErrorKind::MissingFile, "missing decoder " + decoder_json.string());
  const auto j = io::read_json(decoder_json);
  const fs::path base = decoder_json.parent_path();
  const fs::path manifest = base / "manifest.json";
  const Sequence gt = load_sequence(manifest);
  require(j.contains("canonical") && j["canonical"].size() == gt.frames.size(), ErrorKind::Validation,
          "decoder frame count differs from its sequence");
  std::vector<Tensor> canonical, masks;
  for (std::size_t k = 0; k < gt.frames.size(); ++k) {
    canonical.push_back(ntf::read_tensor(base / j["canonical"][k].get<std::string>()));
    require(canonical.back().shape() == gt.frames[k].gt.point_map.shape(), ErrorKind::ShapeMismatch,
            "canonical geometry shape mismatch");
    masks.push_back(gt.frames[k].gt.valid_mask);
  }
  return SyntheticDecoder(std::move(canonical), std::move(masks), j.at("a_s").get<double>(),
                          j.at("a_t").get<double>());
}

void write_simulation(const fs::path& dir, const Simulation& sim) {
  Sequence seq = sim.sequence;
  seq.metadata["scene"] = to_json(sim.scene);
  seq.metadata["drift"] = to_json(sim.drift);
  seq.metadata["seed"] = sim.seed;
  seq.metadata["trace"] = {{"scale", sim.trace.scale}, {"shift", sim.trace.shift}};
  seq.metadata["decoder"] = "decoder.json";
  write_sequence(dir, seq);
  write_decoder(dir, sim.decoder);
}

Simulation load_simulation(const fs::path& dir) {
  Simulation sim;
  sim.sequence = load_sequence(dir / "manifest.json");
  const auto& m = sim.sequence.metadata;
  require(m.contains("trace") && m.contains("drift") && m.contains("scene"), ErrorKind::Validation,
          "manifest in " + dir.string() + " is not a simulator output");
  for (const auto& f : sim.sequence.frames)
    require(f.feature.has_value(), ErrorKind::Validation, "simulation frames need features");
  sim.scene = scene_from_json(m["scene"]);
  sim.drift = drift_from_json(m["drift"]);
  sim.seed = m.value("seed", std::uint64_t{0});
  sim.trace.scale = m["trace"]["scale"].get<std::vector<double>>();
  sim.trace.shift = m["trace"]["shift"].get<std::vector<double>>();
  sim.decoder = load_decoder(dir / m.value("decoder", std::string("decoder.json")));
  return sim;
}

Sequence decode_stream(const Simulation& sim) {
  Sequence out = sim.sequence;
  for (std::size_t j = 0; j < out.frames.size(); ++j) {
    out.frames[j].pred = sim.decoder.decode(*out.frames[j].feature, j);
    out.frames[j].feature.reset();
  }
  return out;
}

// ---------------------------------------------------------------------------

PlantedCorrespondences generate_correspondences(const Sequence& seq, std::size_t j,
                                                const std::vector<std::size_t>& refs,
                                                const std::vector<PoseSE3>& ref_poses,
                                                const AffineAlignment& alignment,
                                                const CorrespondenceSpec& spec, std::uint64_t seed) {
  require(refs.size() == ref_poses.size(), ErrorKind::InvalidInput, "one pose per reference");
  require(seq.poses.size() == seq.frames.size(), ErrorKind::Validation,
          "correspondence generation needs ground-truth poses");
  require(spec.outlier_fraction >= 0.0 && spec.outlier_fraction <= 1.0, ErrorKind::InvalidInput,
          "outlier fraction must lie in [0, 1]");
  const auto& frame = seq.frames.at(j);
  require(frame.pred.has_value(), ErrorKind::Validation, "query frame has no prediction");
  const Intrinsics& K = seq.intrinsics;
  const std::size_t h = frame.gt.height(), w = frame.gt.width(), hw = h * w;

  // Affine model of each reference prediction vs its ground truth, so that a
  // reference can "predict" any physical point, not only its pixel centres.
  std::vector<AffineAlignment> ref_fit;
  for (std::size_t k : refs) {
    const auto& rf = seq.frames.at(k);
    require(rf.pred.has_value(), ErrorKind::Validation, "reference frame has no prediction");
    ref_fit.push_back(solve_affine_frame(rf.pred->depth, rf.gt.depth, rf.gt.valid_mask));
  }

  const Tensor src_pm = aligned_point_map(*frame.pred, alignment);
  const Tensor query_mask = frame.pred->binary_mask();
  struct Candidate {
    std::size_t pixel;
    std::vector<std::size_t> refs;  // positions in `refs` that see the point
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < hw; ++i) {
    if (frame.gt.valid_mask[i] < 0.5 || query_mask[i] < 0.5) continue;
    const Eigen::Vector3d cam(frame.gt.point_map[i], frame.gt.point_map[hw + i], frame.gt.point_map[2 * hw + i]);
    const Eigen::Vector3d world = seq.poses[j].apply(cam);
    Candidate c{i, {}};
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const Eigen::Vector3d x = seq.poses[refs[r]].inverse().apply(world);
      if (x.z() <= 0.0) continue;
      const double u = K.f * x.x() / x.z() + K.cx, v = K.f * x.y() / x.z() + K.cy;
      if (u < -0.5 || v < -0.5 || u > static_cast<double>(w) - 0.5 || v > static_cast<double>(h) - 0.5) continue;
      c.refs.push_back(r);
    }
    if (!c.refs.empty()) cands.push_back(std::move(c));
  }
  require(!cands.empty(), ErrorKind::InsufficientData,
          "frame " + std::to_string(j) + " has no overlap with its references");

  const std::size_t n = spec.count;
  const auto n_out = static_cast<std::size_t>(std::llround(spec.outlier_fraction * static_cast<double>(n)));
  Rng rng(seed);
  PlantedCorrespondences out;
  out.set.src = Tensor(Shape{3, n});
  out.set.dst = Tensor(Shape{3, n});
  out.inlier.assign(n, 1);

  auto ref_world = [&](const Candidate& c, std::size_t r) {
    const std::size_t i = c.pixel;
    const Eigen::Vector3d cam(frame.gt.point_map[i], frame.gt.point_map[hw + i], frame.gt.point_map[2 * hw + i]);
    const Eigen::Vector3d x = seq.poses[refs[r]].inverse().apply(seq.poses[j].apply(cam));
    // Reference prediction of x: gt = a * pred + b on depth, xy scaled alike.
    const AffineAlignment& fit = ref_fit[r];
    Eigen::Vector3d p = x / fit.scale;
    p.z() -= fit.shift / fit.scale;
    Eigen::Vector3d aligned = alignment.scale * p;
    aligned.z() += alignment.shift;
    return ref_poses[r].apply(aligned);
  };
  auto put = [&](std::size_t col, std::size_t pixel, const Eigen::Vector3d& dst) {
    for (std::size_t a = 0; a < 3; ++a) {
      out.set.src[a * n + col] = src_pm[a * hw + pixel];
      out.set.dst[a * n + col] = dst(static_cast<Eigen::Index>(a));
    }
  };

  // Outlier positions: a uniformly random subset of the columns.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  for (std::size_t k = 0; k < n_out; ++k) out.inlier[order[k]] = 0;

  for (std::size_t col = 0; col < n; ++col) {
    const Candidate& c = cands[rng.index(cands.size())];
    const std::size_t r = c.refs[rng.index(c.refs.size())];
    if (out.inlier[col]) {
      put(col, c.pixel, ref_world(c, r));
    } else {
      // Pair the query pixel with the world point of a different pixel.
      const Candidate* other = &cands[rng.index(cands.size())];
      for (int tries = 0; other->pixel == c.pixel && cands.size() > 1 && tries < 100; ++tries)
        other = &cands[rng.index(cands.size())];
      put(col, c.pixel, ref_world(*other, other->refs[rng.index(other->refs.size())]));
    }
  }
  return out;
}

}  // namespace dyfn
