#pragma once

// Synthetic stand-in for a frozen geometry backbone: analytic scenes seen by
// a moving pinhole camera, an "encoder" whose feature statistics drift along
// planted random walks, and a decoder whose output scale and shift are exact
// functions of those statistics.
//
//   decode(F) = exp(a_s * mean_c sigma_F) * G + a_t * mean_c mu_F * z_hat

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/alignment.hpp"
#include "dyfn/autodiff.hpp"
#include "dyfn/geometry.hpp"
#include "dyfn/modulation.hpp"
#include "dyfn/pose_recon.hpp"

namespace dyfn {

enum class SceneKind { PlaneRoom, SineTerrain, SphereField };
std::string_view to_string(SceneKind k) noexcept;
SceneKind parse_scene_kind(std::string_view s);

/// Camera centre moves by `translation` per frame plus a lateral sway; the
/// camera yaws by `yaw_rate` radians per frame.
struct CameraPath {
  Eigen::Vector3d translation = Eigen::Vector3d(0.01, 0.0, 0.004);
  double yaw_rate = 0.004;
  double sway_amplitude = 0.05;
  double sway_period = 40.0;  // frames
};

struct SceneSpec {
  SceneKind kind = SceneKind::SphereField;
  double extent = 4.0;
  std::size_t height = 16;
  std::size_t width = 16;
  double focal = 0.0;  // 0 selects focal = width
  std::size_t frames = 96;
  int stride = 1;
  CameraPath path;
  std::uint64_t seed = 0;
};

struct DriftSpec {
  std::size_t channels = 8;
  double scale_volatility = 0.05;  // std of log-scale steps
  double shift_volatility = 0.05;  // std of shift steps
  double scale_trend = 0.0;        // mean log-scale step
  double shift_trend = 0.0;        // mean shift step
  double drift_bound = 1.5;        // walks reflect at +-bound around frame 0
  double feature_noise = 0.0;      // i.i.d. jitter added to features
  double geometry_noise = 0.0;     // smooth multiplicative error of the decoder geometry
  double pattern_variation = 0.3;  // per-frame change of the spatial pattern
  double smoothing = 2.0;          // Gaussian filter std in pixels
  double sigma0_lo = 1.8, sigma0_hi = 2.2;
  double mu0_lo = 0.5, mu0_hi = 1.5;
  double a_s = 1.0;
  double a_t = 0.5;
};

nlohmann::json to_json(const SceneSpec& s);
nlohmann::json to_json(const DriftSpec& d);
SceneSpec scene_from_json(const nlohmann::json& j);
DriftSpec drift_from_json(const nlohmann::json& j);

/// Ground-truth sequence with camera-to-world poses (frame 0 = identity).
Sequence generate_scene(const SceneSpec& spec);

/// Exact ray/surface depth along pixel (u, v) of a camera with the given
/// camera-to-world pose; 0 when the ray misses.
double cast_ray(const SceneSpec& spec, const PoseSE3& cam_to_world, double u, double v);

class SyntheticDecoder {
 public:
  SyntheticDecoder() = default;
  SyntheticDecoder(std::vector<Tensor> canonical, std::vector<Tensor> masks, double a_s, double a_t);

  std::size_t frames() const { return canonical_.size(); }
  const Tensor& canonical(std::size_t j) const { return canonical_.at(j); }
  const Tensor& mask(std::size_t j) const { return masks_.at(j); }
  double a_s() const { return a_s_; }
  double a_t() const { return a_t_; }

  Prediction decode(const Tensor& feature, std::size_t frame) const;
  /// Differentiable decode; returns the 3 x H x W point map.
  Var decode(Var feature, std::size_t frame) const;
  /// (scale, shift) the decoder applies for a feature with these statistics.
  std::pair<double, double> coupling(const Tensor& mu, const Tensor& sigma) const;

  /// Hash over every frozen constant.
  std::string checksum() const;

 private:
  std::vector<Tensor> canonical_;
  std::vector<Tensor> masks_;
  double a_s_ = 1.0;
  double a_t_ = 0.5;
};

/// Decoder bound to one frame, for the modulation sweep.
class FrameDecoder final : public Decoder {
 public:
  FrameDecoder(const SyntheticDecoder& dec, std::size_t frame) : dec_(&dec), frame_(frame) {}
  Prediction decode(const Tensor& feature) const override { return dec_->decode(feature, frame_); }

 private:
  const SyntheticDecoder* dec_;
  std::size_t frame_;
};

struct DriftTrace {
  std::vector<double> scale;  // s_t applied by the decoder
  std::vector<double> shift;  // t_t applied by the decoder
};

struct EncodedStream {
  std::vector<Tensor> features;  // C x H x W per frame
  DriftTrace trace;
  SyntheticDecoder decoder;
};

/// Features whose channel statistics follow the drift walks, plus the decoder
/// (with per-frame canonical geometry) that maps them back to point maps.
EncodedStream encode_with_drift(const Sequence& gt, const DriftSpec& drift, std::uint64_t seed);

/// A simulated dataset: ground truth, features, decoder and planted trace.
struct Simulation {
  Sequence sequence;  // gt + features + poses
  SyntheticDecoder decoder;
  DriftTrace trace;
  SceneSpec scene;
  DriftSpec drift;
  std::uint64_t seed = 0;
};

Simulation simulate(const SceneSpec& scene, const DriftSpec& drift, std::uint64_t seed);
void write_simulation(const std::filesystem::path& dir, const Simulation& sim);
Simulation load_simulation(const std::filesystem::path& dir);
void write_decoder(const std::filesystem::path& dir, const SyntheticDecoder& dec);
SyntheticDecoder load_decoder(const std::filesystem::path& decoder_json);

/// Decodes raw (unstabilized) features into predictions.
Sequence decode_stream(const Simulation& sim);

struct CorrespondenceSpec {
  std::size_t count = 200;
  double outlier_fraction = 0.0;
};

struct PlantedCorrespondences {
  CorrespondenceSet set;
  std::vector<std::uint8_t> inlier;
};

/// Matches between frame j's (aligned) prediction and the world-frame
/// predictions of its reference frames. Inliers observe the same physical
/// point; exactly round(fraction * count) entries are random pairings.
/// `ref_poses[k]` is the camera-to-world pose used for reference k.
PlantedCorrespondences generate_correspondences(const Sequence& seq, std::size_t j,
                                                const std::vector<std::size_t>& refs,
                                                const std::vector<PoseSE3>& ref_poses,
                                                const AffineAlignment& alignment,
                                                const CorrespondenceSpec& spec, std::uint64_t seed);

}  // namespace dyfn
