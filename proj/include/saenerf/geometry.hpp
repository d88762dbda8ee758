// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pinhole camera (x right, y down, z forward), camera-to-world poses, and
// continuous-time pose supply along a trajectory.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace saenerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (width < 1 || height < 1) throw std::invalid_argument("intrinsics: resolution must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw std::invalid_argument("intrinsics: principal point outside the image");
    }
  }
  bool operator==(const CameraIntrinsics&) const = default;
};

/// Camera-to-world rigid transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 forward() const { return rotation.col(2); }
};

inline bool is_valid_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

/// Ray through continuous pixel coordinate `u`; pixel centers sit at
/// half-integers.
inline Ray pixel_ray(const CameraIntrinsics& k, const Pose& pose, const Vec2& u) {
  if (!(u.x() >= 0.0 && u.x() < k.width && u.y() >= 0.0 && u.y() < k.height)) {
    throw std::out_of_range("pixel_ray: pixel outside the image");
  }
  const Vec3 cam((u.x() + 0.5 - k.cx) / k.fx, (u.y() + 0.5 - k.cy) / k.fy, 1.0);
  return {pose.translation, (pose.rotation * cam).normalized()};
}

inline Ray pixel_ray(const CameraIntrinsics& k, const Pose& pose, int x, int y) {
  return pixel_ray(k, pose, Vec2(x, y));
}

/// Pose looking from `eye` at `target` with world up +z.
inline Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 to_target = target - eye;
  if (to_target.norm() < 1e-12) throw std::invalid_argument("degenerate look-at");
  const Vec3 forward = to_target.normalized();
  const Vec3 right_raw = forward.cross(Vec3::UnitZ());
  if (right_raw.norm() < 1e-9) throw std::invalid_argument("degenerate look-at");
  const Vec3 right = right_raw.normalized();
  const Vec3 down = forward.cross(right);
  Pose pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = eye;
  return pose;
}

struct OrbitSpec {
  double radius = 4.0;
  double height = 1.0;
  double period = 4.0;
  Vec3 target = Vec3::Zero();
};

inline Pose orbit_pose(double t, double radius, double height, double period, const Vec3& target) {
  if (!(period > 0.0)) throw std::invalid_argument("orbit_pose: period must be positive");
  const double angle = 2.0 * std::numbers::pi * t / period;
  return look_at(Vec3(radius * std::cos(angle), radius * std::sin(angle), height), target);
}

inline Pose orbit_pose(double t, const OrbitSpec& o) { return orbit_pose(t, o.radius, o.height, o.period, o.target); }

struct Keyframe {
  double t = 0.0;  // seconds
  Pose pose;
};

/// Time-sorted keyframes with slerp/lerp interpolation in between.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<Keyframe> keyframes) : keyframes_(std::move(keyframes)) {
    if (keyframes_.size() < 2) throw std::invalid_argument("trajectory: need at least two keyframes");
    for (std::size_t i = 1; i < keyframes_.size(); ++i) {
      if (!(keyframes_[i].t > keyframes_[i - 1].t)) throw std::invalid_argument("trajectory: keyframes not sorted");
    }
    for (const Keyframe& k : keyframes_) {
      if (!is_valid_rotation(k.pose.rotation, 1e-6)) throw std::invalid_argument("trajectory: invalid rotation");
    }
  }

  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  double start() const { return keyframes_.front().t; }
  double end() const { return keyframes_.back().t; }

  Pose at(double t) const;

 private:
  std::vector<Keyframe> keyframes_;
};

inline Pose interpolate_pose(const std::vector<Keyframe>& keyframes, double t) {
  if (keyframes.size() < 2) throw std::invalid_argument("interpolate_pose: need at least two keyframes");
  if (!(t >= keyframes.front().t && t <= keyframes.back().t)) throw std::out_of_range("extrapolation refused");
  auto hi = std::upper_bound(keyframes.begin(), keyframes.end(), t,
                             [](double v, const Keyframe& k) { return v < k.t; });
  if (hi == keyframes.end()) return keyframes.back().pose;
  const auto lo = std::prev(hi);
  if (t == lo->t) return lo->pose;

  const double s = (t - lo->t) / (hi->t - lo->t);
  const Eigen::Quaterniond qa(lo->pose.rotation);
  Eigen::Quaterniond qb(hi->pose.rotation);
  if (qa.dot(qb) < 0.0) qb.coeffs() = -qb.coeffs();  // shortest arc
  Pose out;
  out.rotation = qa.slerp(s, qb).normalized().toRotationMatrix();
  out.translation = (1.0 - s) * lo->pose.translation + s * hi->pose.translation;
  return out;
}

inline Pose Trajectory::at(double t) const { return interpolate_pose(keyframes_, t); }

/// Keyframes sampled from an orbit at `count` + 1 evenly spaced times over
/// one period, so the first and last poses coincide.
inline Trajectory orbit_trajectory(const OrbitSpec& orbit, int count) {
  if (count < 1) throw std::invalid_argument("orbit_trajectory: need at least one interval");
  std::vector<Keyframe> frames;
  frames.reserve(static_cast<std::size_t>(count) + 1);
  for (int i = 0; i <= count; ++i) {
    const double t = orbit.period * static_cast<double>(i) / count;
    frames.push_back({t, orbit_pose(t, orbit)});
  }
  return Trajectory(std::move(frames));
}

// JSON: [{t_seconds, rotation: [9, row-major], translation: [3]}, ...]

inline nlohmann::json to_json(const Trajectory& traj) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Keyframe& k : traj.keyframes()) {
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(3 * i + j)] = k.pose.rotation(i, j);
    const Vec3& p = k.pose.translation;
    arr.push_back({{"t_seconds", k.t}, {"rotation", r}, {"translation", {p.x(), p.y(), p.z()}}});
  }
  return arr;
}

inline Trajectory trajectory_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw std::invalid_argument("trajectory: expected a JSON array");
  std::vector<Keyframe> frames;
  for (const auto& item : arr) {
    const auto r = item.at("rotation").get<std::vector<double>>();
    const auto p = item.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || p.size() != 3) throw std::invalid_argument("trajectory: bad rotation/translation length");
    Keyframe k;
    k.t = item.at("t_seconds").get<double>();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) k.pose.rotation(i, j) = r[static_cast<std::size_t>(3 * i + j)];
    k.pose.translation = Vec3(p[0], p[1], p[2]);
    frames.push_back(k);
  }
  return Trajectory(std::move(frames));
}

inline void write_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json(traj).dump(2) << '\n';
}

inline Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return trajectory_from_json(nlohmann::json::parse(in));
}

inline nlohmann::json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                     j.at("cy").get<double>(), j.at("width").get<int>(),  j.at("height").get<int>()};
  k.validate();
  return k;
}

/// Square camera of `res` pixels with focal length `focal` (pixels) and the
/// principal point at the image center.
inline CameraIntrinsics square_camera(int res, double focal) {
  CameraIntrinsics k{focal, focal, 0.5 * res, 0.5 * res, res, res};
  k.validate();
  return k;
}

}  // namespace saenerf
