// SPDX-License-Identifier: Apache-2.0
#pragma once

// Glue between a toy scene, the simulator and the trainer: simulation runs,
// the sidecar file that travels with an event stream, held-out views and the
// background-artifact measure.

#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "saenerf/events.hpp"
#include "saenerf/geometry.hpp"
#include "saenerf/renderer.hpp"
#include "saenerf/scene.hpp"
#include "saenerf/trainer.hpp"

namespace saenerf {

struct SimulationSpec {
  std::string scene = "two-blobs";
  int frames = 120;
  double period = 4.0;
  double threshold = 0.25;
  double noise = 0.0;
  BayerPattern pattern = BayerPattern::rggb;
  std::uint64_t seed = 1;
  int resolution = 64;
  double focal_scale = 1.75;  // focal length in units of the resolution
  double orbit_radius = 4.0;
  double orbit_height = 1.0;
  int gt_samples = 128;

  void validate() const {
    if (frames < 2) throw std::invalid_argument("simulate: need at least two frames");
    if (!(period > 0.0)) throw std::invalid_argument("simulate: period must be positive");
    if (!(threshold > 0.0)) throw std::invalid_argument("simulate: threshold must be positive");
    if (!(noise >= 0.0)) throw std::invalid_argument("simulate: noise must be >= 0");
    if (resolution < 2 || resolution > 65535) throw std::invalid_argument("simulate: resolution out of range");
    if (gt_samples < 1) throw std::invalid_argument("simulate: need at least one ground-truth sample");
  }

  OrbitSpec orbit() const {
    OrbitSpec o;
    o.radius = orbit_radius;
    o.height = orbit_height;
    o.period = period;
    return o;
  }
  CameraIntrinsics camera() const { return square_camera(resolution, focal_scale * resolution); }
};

/// Everything the trainer and evaluator need next to the event stream.
struct Sidecar {
  CameraIntrinsics camera{};
  Trajectory trajectory;
  ToyScene scene;
  RenderConfig render;  // ground-truth render settings (midpoints)
  OrbitSpec orbit;
};

struct SimulationResult {
  EventStream stream;
  Sidecar sidecar;
};

inline RenderConfig ground_truth_config(const ToyScene& scene, int samples) {
  RenderConfig c = scene_render_config(scene, RenderConfig{});
  c.samples = samples;
  c.stratified = false;
  return c;
}

/// Renders frames+1 keyframes over one closed orbit period and converts the
/// Bayer-filtered log frames to events.
inline SimulationResult simulate_scene(const SimulationSpec& spec, const ToyScene& scene) {
  spec.validate();
  scene.validate();
  SimulationResult out;
  Sidecar& side = out.sidecar;
  side.camera = spec.camera();
  side.orbit = spec.orbit();
  side.trajectory = orbit_trajectory(side.orbit, spec.frames);
  side.scene = scene;
  side.render = ground_truth_config(scene, spec.gt_samples);
  std::vector<LogFrame> frames;
  frames.reserve(side.trajectory.keyframes().size());
  for (const Keyframe& k : side.trajectory.keyframes()) {
    frames.push_back(log_frame(render_ground_truth(scene, side.camera, k.pose, side.render), k.t, spec.pattern,
                               side.render.epsilon));
  }
  Rng rng(derive_seed(spec.seed, 0x5e7));
  out.stream = simulate_events(frames, spec.resolution, spec.resolution, spec.threshold, spec.noise, spec.pattern, rng);
  return out;
}

inline SimulationResult simulate_scene(const SimulationSpec& spec) { return simulate_scene(spec, load_scene(spec.scene)); }

inline nlohmann::json to_json(const Sidecar& s) {
  return {{"camera", to_json(s.camera)},
          {"trajectory", to_json(s.trajectory)},
          {"scene", to_json(s.scene)},
          {"render", to_json(s.render)},
          {"orbit", {{"radius", s.orbit.radius}, {"height", s.orbit.height}, {"period", s.orbit.period}}}};
}

inline Sidecar sidecar_from_json(const nlohmann::json& j) {
  Sidecar s;
  s.camera = intrinsics_from_json(j.at("camera"));
  s.trajectory = trajectory_from_json(j.at("trajectory"));
  s.scene = scene_from_json(j.at("scene"));
  s.render = render_config_from_json(j.at("render"));
  const auto& o = j.at("orbit");
  s.orbit.radius = o.at("radius").get<double>();
  s.orbit.height = o.at("height").get<double>();
  s.orbit.period = o.at("period").get<double>();
  return s;
}

inline std::string sidecar_path(const std::string& events_path) { return events_path + ".json"; }

inline void write_sidecar(const Sidecar& s, const std::string& events_path) {
  std::ofstream out(sidecar_path(events_path));
  if (!out) throw std::runtime_error("cannot open " + sidecar_path(events_path) + " for writing");
  out << to_json(s).dump(2) << '\n';
}

inline Sidecar read_sidecar(const std::string& events_path) {
  std::ifstream in(sidecar_path(events_path));
  if (!in) throw std::runtime_error("missing sidecar " + sidecar_path(events_path));
  return sidecar_from_json(nlohmann::json::parse(in));
}

/// Evaluation poses on the training orbit, offset half a step from the
/// evenly spaced view angles so none coincides with a simulator keyframe.
inline std::vector<Pose> held_out_views(const OrbitSpec& orbit, int count) {
  if (count < 1) throw std::invalid_argument("held_out_views: need at least one view");
  std::vector<Pose> poses;
  for (int i = 0; i < count; ++i) {
    const double t = (i + 0.5) * orbit.period / count + 0.37 * orbit.period / 120.0;
    poses.push_back(orbit_pose(t, orbit.radius, orbit.height, orbit.period, orbit.target));
  }
  return poses;
}

struct ArtifactReport {
  double mean_abs_delta = 0.0;  // mean |dL| over background zero-event pixels
  std::size_t pixels = 0;
  std::size_t windows = 0;
};

/// Mean |predicted dL| over pixels that have no events in the window and see
/// only background at both window poses. Windows are drawn from a seed
/// disjoint from training; rendering uses midpoints.
inline ArtifactReport background_artifact(const FieldParams& params, const EventStream& stream, const Sidecar& side,
                                          const RenderConfig& render, double l_max, double l_min, int windows,
                                          std::uint64_t seed, double background_weight = 0.999) {
  RenderConfig cfg = render;
  cfg.stratified = false;
  const FieldLayout layout = params.layout();
  const TrainingData data{stream, side.trajectory, side.camera};
  const auto t_gt = sample_along_ray(side.render.near, side.render.far, side.render.samples, false, nullptr);
  Rng rng(derive_seed(seed, 0xa27f));
  ArtifactReport rep;
  double sum = 0.0;
  const int w = side.camera.width;
  const int h = side.camera.height;
  for (int k = 0; k < windows; ++k) {
    const Window win = draw_window(stream.duration_seconds(), l_max, l_min, rng);
    const std::uint64_t t0 = to_microseconds(win.t0);
    const std::uint64_t t1 = std::max(to_microseconds(win.t), t0 + 1);
    const std::vector<int> e = accumulate(stream, t0, t1).dense();
    const Pose p0 = data.pose_at_us(t0);
    const Pose p1 = data.pose_at_us(t1);
    std::vector<DeltaQuery> queries;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (e[static_cast<std::size_t>(y * w + x)] != 0) continue;
        const auto a = render_scene_ray(side.scene, pixel_ray(side.camera, p0, x, y), t_gt, side.render);
        const auto b = render_scene_ray(side.scene, pixel_ray(side.camera, p1, x, y), t_gt, side.render);
        if (a.background_weight < background_weight || b.background_weight < background_weight) continue;
        queries.push_back({Vec2(x, y), bayer_channel(x, y, stream.header.pattern)});
      }
    }
    if (queries.empty()) continue;
    DeltaLogBatch batch;
    const auto delta = batch.forward(params, layout, side.camera, p0, p1, queries, cfg, nullptr);
    for (double d : delta) sum += std::abs(d);
    rep.pixels += queries.size();
    ++rep.windows;
  }
  rep.mean_abs_delta = rep.pixels > 0 ? sum / static_cast<double>(rep.pixels) : 0.0;
  return rep;
}

}  // namespace saenerf
