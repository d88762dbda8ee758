// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "saenerf/geometry.hpp"

using namespace saenerf;

namespace {

void expect_valid(const Pose& p) { EXPECT_TRUE(is_valid_rotation(p.rotation, 1e-9)); }

Mat3 rot_z(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

}  // namespace

TEST(Geometry, PrincipalRay) {
  const CameraIntrinsics k{100, 100, 50, 50, 100, 100};
  const Ray r = pixel_ray(k, Pose{}, Vec2(49.5, 49.5));
  EXPECT_NEAR((r.direction - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
  EXPECT_EQ(r.origin, Vec3::Zero());
}

TEST(Geometry, OffsetRayAt45Degrees) {
  const CameraIntrinsics k{100, 100, 50, 50, 200, 100};
  const Ray r = pixel_ray(k, Pose{}, Vec2(149.5, 49.5));
  const Vec3 oracle = Vec3(1, 0, 1) / std::sqrt(2.0);
  EXPECT_NEAR((r.direction - oracle).norm(), 0.0, 1e-15);
  EXPECT_NEAR(r.direction.x(), 0.7071, 1e-4);
}

TEST(Geometry, UnitDirectionsAndBounds) {
  const CameraIntrinsics k = square_camera(32, 40.0);
  const Pose p = orbit_pose(0.7, 4.0, 1.0, 4.0, Vec3::Zero());
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_NEAR(pixel_ray(k, p, x, y).direction.norm(), 1.0, 1e-9);
  EXPECT_THROW((void)pixel_ray(k, p, 32, 0), std::out_of_range);
  EXPECT_THROW((void)pixel_ray(k, p, Vec2(-0.1, 0)), std::out_of_range);
}

TEST(Geometry, FrustumContainsPrincipalRay) {
  const CameraIntrinsics k = square_camera(64, 112.0);
  const Pose p = orbit_pose(1.3, 4.0, 1.0, 4.0, Vec3::Zero());
  for (auto [x, y] : {std::pair{0, 0}, {63, 0}, {0, 63}, {63, 63}}) {
    EXPECT_GT(pixel_ray(k, p, x, y).direction.dot(p.forward()), 0.0);
  }
}

TEST(Geometry, OrbitPose) {
  const Pose p0 = orbit_pose(0.0, 3.0, 1.0, 4.0, Vec3::Zero());
  EXPECT_NEAR((p0.translation - Vec3(3, 0, 1)).norm(), 0.0, 1e-15);
  expect_valid(p0);
  const Pose pt = orbit_pose(4.0, 3.0, 1.0, 4.0, Vec3::Zero());
  EXPECT_LE((pt.translation - p0.translation).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((pt.rotation - p0.rotation).cwiseAbs().maxCoeff(), 1e-12);

  const Pose q = orbit_pose(1.0, 2.0, 0.0, 4.0, Vec3::Zero());
  EXPECT_NEAR((q.translation - Vec3(0, 2, 0)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((q.forward() - Vec3(0, -1, 0)).norm(), 0.0, 1e-12);
  expect_valid(q);

  EXPECT_THROW((void)orbit_pose(0.0, 0.0, 0.0, 4.0, Vec3::Zero()), std::invalid_argument);
  EXPECT_THROW((void)orbit_pose(0.0, 1.0, 0.0, 0.0, Vec3::Zero()), std::invalid_argument);
}

TEST(Geometry, InterpolatePose) {
  Pose a;
  Pose b;
  b.rotation = rot_z(std::numbers::pi / 2.0);
  b.translation = Vec3(2, 0, 0);
  const std::vector<Keyframe> keys = {{0.0, a}, {1.0, b}};

  const Pose at_key = interpolate_pose(keys, 1.0);
  EXPECT_EQ(at_key.rotation, b.rotation);
  EXPECT_EQ(at_key.translation, b.translation);
  EXPECT_EQ(interpolate_pose(keys, 0.0).rotation, a.rotation);

  const Pose mid = interpolate_pose(keys, 0.5);
  EXPECT_LE((mid.rotation - rot_z(std::numbers::pi / 4.0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR((mid.translation - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
  expect_valid(mid);

  EXPECT_THROW((void)interpolate_pose(keys, 1.5), std::out_of_range);
  EXPECT_THROW((void)interpolate_pose(keys, -0.1), std::out_of_range);
}

TEST(Geometry, ShortestArc) {
  Pose a;
  a.rotation = rot_z(0.9 * std::numbers::pi);
  Pose b;
  b.rotation = rot_z(-0.9 * std::numbers::pi);
  const Pose mid = interpolate_pose({{0.0, a}, {1.0, b}}, 0.5);
  EXPECT_LE((mid.rotation - rot_z(std::numbers::pi)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Geometry, OrbitTrajectoryIsValidAndContinuous) {
  const OrbitSpec orbit;
  const Trajectory traj = orbit_trajectory(orbit, 120);
  EXPECT_EQ(traj.keyframes().size(), 121u);
  for (double t = 0.0; t < 4.0; t += 0.0371) {
    const Pose p = traj.at(t);
    const Pose q = traj.at(std::min(t + 1e-6, 4.0));
    expect_valid(p);
    EXPECT_LE((p.rotation - q.rotation).cwiseAbs().maxCoeff(), 1e-4);
    EXPECT_LE((p.translation - q.translation).norm(), 1e-4);
  }
}

TEST(Geometry, TrajectoryJsonRoundTrip) {
  const Trajectory traj = orbit_trajectory(OrbitSpec{}, 8);
  const Trajectory back = trajectory_from_json(nlohmann::json::parse(to_json(traj).dump()));
  ASSERT_EQ(back.keyframes().size(), traj.keyframes().size());
  for (std::size_t i = 0; i < traj.keyframes().size(); ++i) {
    EXPECT_EQ(back.keyframes()[i].t, traj.keyframes()[i].t);
    EXPECT_EQ(back.keyframes()[i].pose.rotation, traj.keyframes()[i].pose.rotation);
    EXPECT_EQ(back.keyframes()[i].pose.translation, traj.keyframes()[i].pose.translation);
  }
  EXPECT_THROW((void)trajectory_from_json(nlohmann::json::object()), std::invalid_argument);
}

TEST(Geometry, IntrinsicsValidation) {
  EXPECT_THROW(square_camera(0, 10.0), std::invalid_argument);
  EXPECT_THROW((CameraIntrinsics{0, 1, 0, 0, 4, 4}.validate()), std::invalid_argument);
  EXPECT_THROW((CameraIntrinsics{1, 1, 4, 0, 4, 4}.validate()), std::invalid_argument);
}
