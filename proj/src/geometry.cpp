#include "dyfn/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include <Eigen/LU>

#include "dyfn/error.hpp"
#include "dyfn/io.hpp"
#include "dyfn/ntf.hpp"

namespace dyfn {

namespace fs = std::filesystem;

std::size_t FrameSample::valid_count() const {
  std::size_t n = 0;
  for (double m : valid_mask.data()) n += m > 0.5 ? 1 : 0;
  return n;
}

Tensor Prediction::binary_mask() const {
  Tensor out(mask_logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask_logits[i] >= 0.5 ? 1.0 : 0.0;
  return out;
}

PoseSE3 PoseSE3::inverse() const {
  PoseSE3 inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

PoseSE3 PoseSE3::operator*(const PoseSE3& rhs) const {
  PoseSE3 out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

bool PoseSE3::is_rigid(double tol) const {
  const Eigen::Matrix3d e = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
  return e.cwiseAbs().maxCoeff() <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

bool Sequence::has_predictions() const {
  if (frames.empty()) return false;
  for (const auto& f : frames)
    if (!f.pred) return false;
  return true;
}

Tensor apply_pose(const Tensor& points, const PoseSE3& pose) {
  require(points.rank() == 2 && points.dim(0) == 3, ErrorKind::InvalidInput,
          "apply_pose expects 3 x N points, got " + shape_string(points.shape()));
  const std::size_t n = points.dim(1);
  Tensor out(points.shape());
  const Eigen::Matrix3d& r = pose.rotation;
  const Eigen::Vector3d& t = pose.translation;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = points[i], y = points[n + i], z = points[2 * n + i];
    for (int row = 0; row < 3; ++row)
      out[static_cast<std::size_t>(row) * n + i] = r(row, 0) * x + r(row, 1) * y + r(row, 2) * z + t(row);
  }
  return out;
}

Tensor depth_of(const Tensor& point_map) {
  require(point_map.rank() == 3 && point_map.dim(0) == 3, ErrorKind::InvalidInput,
          "point map must be 3 x H x W, got " + shape_string(point_map.shape()));
  const std::size_t h = point_map.dim(1), w = point_map.dim(2);
  Tensor d(Shape{h, w});
  for (std::size_t i = 0; i < h * w; ++i) d[i] = point_map[2 * h * w + i];
  return d;
}

Prediction make_prediction(Tensor point_map, Tensor mask_logits) {
  Prediction p;
  p.depth = depth_of(point_map);
  p.point_map = std::move(point_map);
  p.mask_logits = std::move(mask_logits);
  return p;
}

void validate_frame(const FrameSample& frame) {
  const Tensor& d = frame.depth;
  require(d.rank() == 2, ErrorKind::ShapeMismatch, "depth must be H x W, got " + shape_string(d.shape()));
  const std::size_t h = d.dim(0), w = d.dim(1);
  require(frame.point_map.shape() == Shape{3, h, w}, ErrorKind::ShapeMismatch,
          "point map " + shape_string(frame.point_map.shape()) + " does not match depth " +
              shape_string(d.shape()));
  require(frame.valid_mask.shape() == d.shape(), ErrorKind::ShapeMismatch,
          "mask " + shape_string(frame.valid_mask.shape()) + " does not match depth " +
              shape_string(d.shape()));
  for (std::size_t i = 0; i < h * w; ++i) {
    const double m = frame.valid_mask[i];
    require(m == 0.0 || m == 1.0, ErrorKind::Validation,
            "valid mask is not binary (value " + std::to_string(m) + ")");
    if (m == 0.0) continue;
    require(d[i] > 0.0, ErrorKind::Validation, "valid pixel with non-positive depth");
    const double z = frame.point_map[2 * h * w + i];
    require(std::abs(z - d[i]) <= 1e-6 * std::max(1.0, std::abs(d[i])), ErrorKind::Validation,
            "depth differs from point-map z channel");
  }
}

void validate_sequence(const Sequence& seq) {
  require(!seq.frames.empty(), ErrorKind::Validation, "sequence has no frames");
  require(seq.stride >= 1, ErrorKind::Validation, "stride must be >= 1");
  const Shape hw = seq.frames.front().gt.depth.shape();
  for (std::size_t j = 0; j < seq.frames.size(); ++j) {
    const auto& fr = seq.frames[j];
    require(fr.gt.depth.shape() == hw, ErrorKind::ShapeMismatch,
            "frame " + std::to_string(j) + " depth shape " + shape_string(fr.gt.depth.shape()) +
                " differs from " + shape_string(hw));
    validate_frame(fr.gt);
    if (fr.pred) {
      require(fr.pred->point_map.shape() == fr.gt.point_map.shape() &&
                  fr.pred->depth.shape() == hw && fr.pred->mask_logits.shape() == hw,
              ErrorKind::ShapeMismatch, "frame " + std::to_string(j) + " prediction shape mismatch");
      require(fr.pred->point_map.all_finite() && fr.pred->depth.all_finite(), ErrorKind::Validation,
              "frame " + std::to_string(j) + " prediction is not finite");
    }
    if (fr.feature)
      require(fr.feature->rank() == 3 && fr.feature->dim(1) == hw[0] && fr.feature->dim(2) == hw[1],
              ErrorKind::ShapeMismatch, "frame " + std::to_string(j) + " feature shape mismatch");
  }
  require(seq.poses.empty() || seq.poses.size() == seq.frames.size(), ErrorKind::Validation,
          "pose count differs from frame count");
}

nlohmann::json pose_to_json(const PoseSE3& pose) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(pose.rotation(i, k));
  return {{"R", r}, {"t", {pose.translation(0), pose.translation(1), pose.translation(2)}}};
}

PoseSE3 pose_from_json(const nlohmann::json& j) {
  require(j.contains("R") && j["R"].size() == 9 && j.contains("t") && j["t"].size() == 3,
          ErrorKind::Validation, "pose needs R[9] and t[3]");
  PoseSE3 p;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) p.rotation(i, k) = j["R"][static_cast<std::size_t>(3 * i + k)].get<double>();
    p.translation(i) = j["t"][static_cast<std::size_t>(i)].get<double>();
  }
  return p;
}

namespace {

std::string frame_file(std::size_t j, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%04zu_%s.ntf", j, what);
  return buf;
}

Tensor load_entry(const fs::path& base, const nlohmann::json& entry, const char* key) {
  require(entry.contains(key) && entry[key].is_string(), ErrorKind::Validation,
          std::string("manifest frame lacks \"") + key + "\"");
  const fs::path p = base / entry[key].get<std::string>();
  if (!fs::exists(p)) fail(ErrorKind::MissingFile, "missing tensor file " + p.string());
  return ntf::read_tensor(p);
}

}  // namespace

Sequence load_sequence(const fs::path& manifest_or_dir) {
  fs::path manifest = manifest_or_dir;
  if (fs::is_directory(manifest)) manifest /= "manifest.json";
  if (!fs::exists(manifest)) fail(ErrorKind::MissingFile, "missing manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  const nlohmann::json m = io::read_json(manifest);

  require(m.contains("frames") && m["frames"].is_array(), ErrorKind::Validation, "manifest lacks frames");
  Sequence seq;
  seq.stride = m.value("stride", 1);
  if (m.contains("intrinsics")) {
    const auto& k = m["intrinsics"];
    seq.intrinsics = {k.at("f").get<double>(), k.at("cx").get<double>(), k.at("cy").get<double>()};
  }
  for (const auto& e : m["frames"]) {
    SequenceFrame fr;
    fr.gt.point_map = load_entry(base, e, "point_map");
    fr.gt.depth = load_entry(base, e, "depth");
    fr.gt.valid_mask = load_entry(base, e, "mask");
    fr.gt.intrinsics = seq.intrinsics;
    if (e.contains("pred_point_map")) {
      Prediction p;
      p.point_map = load_entry(base, e, "pred_point_map");
      p.depth = e.contains("pred_depth") ? load_entry(base, e, "pred_depth") : depth_of(p.point_map);
      p.mask_logits = e.contains("pred_mask") ? load_entry(base, e, "pred_mask") : fr.gt.valid_mask;
      fr.pred = std::move(p);
    }
    if (e.contains("feature")) fr.feature = load_entry(base, e, "feature");
    seq.frames.push_back(std::move(fr));
  }
  if (m.contains("length"))
    require(m["length"].get<std::size_t>() == seq.frames.size(), ErrorKind::Validation,
            "manifest length disagrees with frame list");
  if (m.contains("poses"))
    for (const auto& p : m["poses"]) seq.poses.push_back(pose_from_json(p));
  if (m.contains("metadata")) seq.metadata = m["metadata"];
  validate_sequence(seq);
  return seq;
}

void write_sequence(const fs::path& dir, const Sequence& seq) {
  fs::create_directories(dir);
  nlohmann::json m;
  m["length"] = seq.frames.size();
  m["stride"] = seq.stride;
  m["intrinsics"] = {{"f", seq.intrinsics.f}, {"cx", seq.intrinsics.cx}, {"cy", seq.intrinsics.cy}};
  if (!seq.frames.empty()) {
    m["height"] = seq.frames.front().gt.height();
    m["width"] = seq.frames.front().gt.width();
  }
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t j = 0; j < seq.frames.size(); ++j) {
    const auto& fr = seq.frames[j];
    nlohmann::json e;
    auto put = [&](const char* key, const char* what, const Tensor& t) {
      const std::string name = frame_file(j, what);
      ntf::write_tensor(dir / name, what, t);
      e[key] = name;
    };
    put("point_map", "point_map", fr.gt.point_map);
    put("depth", "depth", fr.gt.depth);
    put("mask", "mask", fr.gt.valid_mask);
    if (fr.pred) {
      put("pred_point_map", "pred_point_map", fr.pred->point_map);
      put("pred_depth", "pred_depth", fr.pred->depth);
      put("pred_mask", "pred_mask", fr.pred->mask_logits);
    }
    if (fr.feature) put("feature", "feature", *fr.feature);
    frames.push_back(std::move(e));
  }
  m["frames"] = std::move(frames);
  if (!seq.poses.empty()) {
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& p : seq.poses) poses.push_back(pose_to_json(p));
    m["poses"] = std::move(poses);
  }
  if (!seq.metadata.empty()) m["metadata"] = seq.metadata;
  io::write_json(dir / "manifest.json", m);
}

}  // namespace dyfn
