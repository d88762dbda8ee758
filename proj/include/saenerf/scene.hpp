// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural ground-truth scenes with analytic density and color. They feed
// the event simulator and provide evaluation targets.

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "saenerf/events.hpp"
#include "saenerf/geometry.hpp"
#include "saenerf/image.hpp"
#include "saenerf/renderer.hpp"

namespace saenerf {

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
  Vec3 color = Vec3::Constant(0.5);
  double density = 40.0;

  bool contains(const Vec3& x) const { return (x - center).squaredNorm() <= radius * radius; }
};

struct Box {
  Vec3 min = Vec3::Constant(-0.5);
  Vec3 max = Vec3::Constant(0.5);
  Vec3 color = Vec3::Constant(0.5);
  double density = 40.0;

  bool contains(const Vec3& x) const {
    return (x.array() >= min.array()).all() && (x.array() <= max.array()).all();
  }
};

using Primitive = std::variant<Sphere, Box>;

struct ToyScene {
  std::vector<Primitive> primitives;
  Vec3 background = Vec3::Constant(0.5);
  Vec3 box_min = Vec3::Constant(-1.5);
  Vec3 box_max = Vec3::Constant(1.5);

  void validate() const {
    auto in_unit = [](const Vec3& c) { return (c.array() >= 0.0).all() && (c.array() <= 1.0).all(); };
    if (!in_unit(background)) throw std::invalid_argument("scene: background outside [0,1]");
    auto in_box = [&](const Vec3& p) { return (p.array() >= box_min.array()).all() && (p.array() <= box_max.array()).all(); };
    for (const Primitive& prim : primitives) {
      std::visit(
          [&](const auto& s) {
            if (!(s.density >= 0.0)) throw std::invalid_argument("scene: negative density");
            if (!in_unit(s.color)) throw std::invalid_argument("scene: color outside [0,1]");
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Sphere>) {
              if (!in_box(s.center - Vec3::Constant(s.radius)) || !in_box(s.center + Vec3::Constant(s.radius))) {
                throw std::invalid_argument("scene: sphere outside bounding box");
              }
            } else {
              if (!in_box(s.min) || !in_box(s.max)) throw std::invalid_argument("scene: box outside bounding box");
            }
          },
          prim);
    }
  }
};

/// Density sum over containing primitives; density-weighted mean color,
/// background color where empty.
inline FieldOutput scene_eval(const ToyScene& scene, const Vec3& x) {
  double sigma = 0.0;
  Vec3 weighted = Vec3::Zero();
  for (const Primitive& prim : scene.primitives) {
    std::visit(
        [&](const auto& s) {
          if (s.contains(x)) {
            sigma += s.density;
            weighted += s.density * s.color;
          }
        },
        prim);
  }
  FieldOutput out;
  out.sigma = sigma;
  const Vec3 c = sigma > 0.0 ? Vec3(weighted / sigma) : scene.background;
  out.color = {c.x(), c.y(), c.z()};
  return out;
}

/// Render config matching the scene's bounds and background.
inline RenderConfig scene_render_config(const ToyScene& scene, RenderConfig base) {
  base.background = scene.background;
  base.box_min = scene.box_min;
  base.box_max = scene.box_max;
  return base;
}

inline RenderedPixel render_scene_ray(const ToyScene& scene, const Ray& ray, std::span<const double> distances,
                                      const RenderConfig& config) {
  return volume_render<double>([&](const Vec3& x, const Vec3&) { return scene_eval(scene, x); }, ray, distances,
                               config);
}

/// Same compositing as the field renderer with (sigma, c) from the scene.
inline Image render_ground_truth(const ToyScene& scene, const CameraIntrinsics& k, const Pose& pose,
                                 const RenderConfig& config) {
  config.validate();
  const auto t = sample_along_ray(config.near, config.far, config.samples, false, nullptr);
  Image img(k.width, k.height);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const RenderedPixel px = render_scene_ray(scene, pixel_ray(k, pose, x, y), t, config);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = px.intensity[static_cast<std::size_t>(c)];
    }
  }
  return img;
}

/// Two spheres of different colors on a gray background.
inline ToyScene two_blobs() {
  ToyScene s;
  s.primitives.push_back(Sphere{Vec3(0.45, -0.25, 0.0), 0.55, Vec3(0.9, 0.45, 0.2), 40.0});
  s.primitives.push_back(Sphere{Vec3(-0.5, 0.35, 0.25), 0.45, Vec3(0.25, 0.55, 0.95), 40.0});
  s.background = Vec3::Constant(0.15);
  return s;
}

inline ToyScene box_and_sphere() {
  ToyScene s;
  s.primitives.push_back(Box{Vec3(-0.9, -0.6, -0.7), Vec3(-0.1, 0.2, 0.1), Vec3(0.25, 0.75, 0.3), 40.0});
  s.primitives.push_back(Sphere{Vec3(0.45, 0.3, 0.1), 0.5, Vec3(0.85, 0.8, 0.25), 40.0});
  s.background = Vec3::Constant(0.5);
  return s;
}

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

inline nlohmann::json to_json(const ToyScene& scene) {
  nlohmann::json prims = nlohmann::json::array();
  for (const Primitive& prim : scene.primitives) {
    if (const auto* s = std::get_if<Sphere>(&prim)) {
      prims.push_back({{"type", "sphere"},
                       {"center", vec_json(s->center)},
                       {"radius", s->radius},
                       {"color", vec_json(s->color)},
                       {"density", s->density}});
    } else {
      const auto& b = std::get<Box>(prim);
      prims.push_back({{"type", "box"},
                       {"min", vec_json(b.min)},
                       {"max", vec_json(b.max)},
                       {"color", vec_json(b.color)},
                       {"density", b.density}});
    }
  }
  return {{"primitives", prims},
          {"background", vec_json(scene.background)},
          {"bounds", {{"min", vec_json(scene.box_min)}, {"max", vec_json(scene.box_max)}}}};
}

inline ToyScene scene_from_json(const nlohmann::json& j) {
  ToyScene scene;
  for (const auto& p : j.at("primitives")) {
    const std::string type = p.at("type").get<std::string>();
    if (type == "sphere") {
      scene.primitives.push_back(Sphere{vec_from_json(p.at("center")), p.at("radius").get<double>(),
                                        vec_from_json(p.at("color")), p.value("density", 40.0)});
    } else if (type == "box") {
      scene.primitives.push_back(
          Box{vec_from_json(p.at("min")), vec_from_json(p.at("max")), vec_from_json(p.at("color")), p.value("density", 40.0)});
    } else {
      throw std::invalid_argument("scene: unknown primitive type '" + type + "'");
    }
  }
  if (j.contains("background")) scene.background = vec_from_json(j.at("background"));
  if (j.contains("bounds")) {
    scene.box_min = vec_from_json(j.at("bounds").at("min"));
    scene.box_max = vec_from_json(j.at("bounds").at("max"));
  }
  scene.validate();
  return scene;
}

/// Preset name ("two-blobs", "box-and-sphere") or path to a scene JSON file.
inline ToyScene load_scene(const std::string& name_or_path) {
  if (name_or_path == "two-blobs") return two_blobs();
  if (name_or_path == "box-and-sphere") return box_and_sphere();
  std::ifstream in(name_or_path);
  if (!in) throw std::invalid_argument("unknown scene preset or unreadable file: " + name_or_path);
  return scene_from_json(nlohmann::json::parse(in));
}

/// Log-intensity planes for the simulator: each pixel keeps the channel its
/// Bayer filter selects.
inline LogFrame log_frame(const Image& img, double t, BayerPattern pattern, double epsilon) {
  LogFrame f;
  f.t = t;
  f.values.resize(img.pixel_count());
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::array<double, 3> rgb = {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
      f.values[static_cast<std::size_t>(y) * static_cast<std::size_t>(img.width) + static_cast<std::size_t>(x)] =
          log_intensity(channel_value(rgb, bayer_channel(x, y, pattern)), epsilon);
    }
  }
  return f;
}

}  // namespace saenerf
