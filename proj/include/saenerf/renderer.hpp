// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable volume rendering and predicted log-intensity differences.
//
// Compositing along a ray with sample distances t_1 < ... < t_S:
//   alpha_i = 1 - exp(-sigma_i delta_i),  delta_i = t_{i+1} - t_i,
//   delta_S = far - t_S,  T_i = prod_{j<i} (1 - alpha_j),
//   I = sum_i T_i alpha_i c_i + T_{S+1} c_bg.
// Samples outside the scene bounding box have zero density.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "saenerf/field.hpp"
#include "saenerf/geometry.hpp"
#include "saenerf/grad.hpp"
#include "saenerf/image.hpp"
#include "saenerf/random.hpp"

namespace saenerf {

/// Sensor channel a pixel measures. `luminance` is the RGB mean (mono sensor).
enum class Channel : std::uint8_t { red = 0, green = 1, blue = 2, luminance = 3 };

struct RenderConfig {
  double near = 2.0;
  double far = 6.5;
  int samples = 48;
  double epsilon = 1e-5;  // intensity floor inside the log
  Vec3 background = Vec3::Constant(0.5);
  Vec3 box_min = Vec3::Constant(-1.5);
  Vec3 box_max = Vec3::Constant(1.5);
  bool stratified = true;  // training draws; images always use midpoints

  void validate() const {
    if (!(near > 0.0 && far > near)) throw std::invalid_argument("render config: need 0 < near < far");
    if (samples < 1) throw std::invalid_argument("render config: need at least one sample");
    if (!(epsilon > 0.0)) throw std::invalid_argument("render config: epsilon must be positive");
    if ((background.array() < 0.0).any() || (background.array() > 1.0).any()) {
      throw std::invalid_argument("render config: background outside [0,1]");
    }
  }

  bool inside(const Vec3& x) const {
    return (x.array() >= box_min.array()).all() && (x.array() <= box_max.array()).all();
  }
};

/// S equal bins over [near, far]: midpoints, or one uniform draw per bin.
inline std::vector<double> sample_along_ray(double near, double far, int count, bool stratified, Rng* rng) {
  if (count < 1) throw std::invalid_argument("sample_along_ray: need at least one sample");
  if (!(far > near)) throw std::invalid_argument("sample_along_ray: need near < far");
  if (stratified && rng == nullptr) throw std::invalid_argument("sample_along_ray: stratified sampling needs an rng");
  std::vector<double> t(static_cast<std::size_t>(count));
  const double width = (far - near) / count;
  for (int i = 0; i < count; ++i) {
    const double u = stratified ? uniform01(*rng) : 0.5;
    t[static_cast<std::size_t>(i)] = near + width * (i + u);
  }
  return t;
}

template <typename Scalar>
struct RenderedPixelT {
  std::array<Scalar, 3> intensity{};
  std::vector<Scalar> weights;  // T_i alpha_i
  Scalar background_weight{};   // T_{S+1}
};

using RenderedPixel = RenderedPixelT<double>;

/// Composite along `ray`. `source(x, d)` returns FieldOutputT<Scalar>.
template <typename Scalar, typename Source>
RenderedPixelT<Scalar> volume_render(Source&& source, const Ray& ray, std::span<const double> distances,
                                     const RenderConfig& config) {
  using std::exp;
  const std::size_t n = distances.size();
  RenderedPixelT<Scalar> out;
  out.weights.resize(n);
  for (int c = 0; c < 3; ++c) out.intensity[static_cast<std::size_t>(c)] = Scalar(0.0);
  Scalar transmittance(1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double delta = (i + 1 < n ? distances[i + 1] : config.far) - distances[i];
    const Vec3 x = ray.origin + distances[i] * ray.direction;
    if (!config.inside(x)) {
      out.weights[i] = Scalar(0.0);
      continue;
    }
    const FieldOutputT<Scalar> f = source(x, ray.direction);
    const Scalar survive = exp(Scalar(0.0) - f.sigma * delta);
    const Scalar w = transmittance * (Scalar(1.0) - survive);
    out.weights[i] = w;
    for (std::size_t c = 0; c < 3; ++c) out.intensity[c] = out.intensity[c] + w * f.color[c];
    transmittance = transmittance * survive;
  }
  out.background_weight = transmittance;
  for (std::size_t c = 0; c < 3; ++c) {
    out.intensity[c] = out.intensity[c] + transmittance * config.background[static_cast<Eigen::Index>(c)];
  }
  return out;
}

/// Field-backed rendering with generic parameter scalars.
template <typename Scalar>
RenderedPixelT<Scalar> volume_render(const FieldArch& arch, const FieldLayout& layout, std::span<const Scalar> params,
                                     const Ray& ray, std::span<const double> distances, const RenderConfig& config) {
  return volume_render<Scalar>(
      [&](const Vec3& x, const Vec3& d) { return field_eval<Scalar>(arch, layout, params, x, d); }, ray, distances,
      config);
}

inline RenderedPixel volume_render(const FieldParams& params, const Ray& ray, std::span<const double> distances,
                                   const RenderConfig& config) {
  params.validate();
  const FieldLayout layout = params.layout();
  return volume_render<double>(params.arch, layout, std::span<const double>(params.values), ray, distances, config);
}

template <typename Scalar>
Scalar log_intensity(const Scalar& intensity, double epsilon) {
  using std::log;
  return log(intensity + epsilon);
}

template <typename Scalar>
Scalar channel_value(const std::array<Scalar, 3>& rgb, Channel channel) {
  if (channel == Channel::luminance) return (rgb[0] + rgb[1] + rgb[2]) * (1.0 / 3.0);
  return rgb[static_cast<std::size_t>(channel)];
}

/// Predicted log-intensity change of one pixel between two poses. Both
/// renders use the same sample distances.
template <typename Scalar>
Scalar render_delta_log(const FieldArch& arch, const FieldLayout& layout, std::span<const Scalar> params,
                        const CameraIntrinsics& k, const Pose& pose_t0, const Pose& pose_t, const Vec2& u,
                        Channel channel, std::span<const double> distances, const RenderConfig& config) {
  const Ray r0 = pixel_ray(k, pose_t0, u);
  const Ray r1 = pixel_ray(k, pose_t, u);
  const auto p0 = volume_render<Scalar>(arch, layout, params, r0, distances, config);
  const auto p1 = volume_render<Scalar>(arch, layout, params, r1, distances, config);
  return log_intensity(channel_value(p1.intensity, channel), config.epsilon) -
         log_intensity(channel_value(p0.intensity, channel), config.epsilon);
}

inline double render_delta_log(const FieldParams& params, const CameraIntrinsics& k, const Pose& pose_t0,
                               const Pose& pose_t, const Vec2& u, Channel channel, const RenderConfig& config,
                               Rng* rng) {
  params.validate();
  const FieldLayout layout = params.layout();
  const auto t = sample_along_ray(config.near, config.far, config.samples, config.stratified && rng != nullptr, rng);
  return render_delta_log<double>(params.arch, layout, std::span<const double>(params.values), k, pose_t0, pose_t, u,
                                  channel, t, config);
}

/// Many rays through the field at once with an analytic adjoint. Each ray
/// owns `samples` distances in a flat array.
class BatchRenderer {
 public:
  void forward(const FieldParams& params, const FieldLayout& layout, const RenderConfig& config,
               std::span<const Ray> rays, std::span<const double> distances) {
    const auto s = static_cast<std::size_t>(config.samples);
    if (distances.size() != rays.size() * s) throw std::invalid_argument("BatchRenderer: distance count mismatch");
    rays_ = rays.size();
    samples_ = s;
    background_ = config.background;

    // Gather in-box samples.
    point_of_.assign(rays_ * s, -1);
    delta_.resize(rays_ * s);
    std::size_t count = 0;
    for (std::size_t r = 0; r < rays_; ++r) {
      for (std::size_t i = 0; i < s; ++i) {
        const double t = distances[r * s + i];
        delta_[r * s + i] = (i + 1 < s ? distances[r * s + i + 1] : config.far) - t;
        if (config.inside(rays[r].origin + t * rays[r].direction)) point_of_[r * s + i] = static_cast<long>(count++);
      }
    }
    positions_.resize(3, static_cast<Eigen::Index>(count));
    directions_.resize(3, static_cast<Eigen::Index>(count));
    for (std::size_t r = 0; r < rays_; ++r) {
      for (std::size_t i = 0; i < s; ++i) {
        const long p = point_of_[r * s + i];
        if (p < 0) continue;
        positions_.col(p) = rays[r].origin + distances[r * s + i] * rays[r].direction;
        directions_.col(p) = rays[r].direction;
      }
    }
    if (count > 0) field_.forward(params, layout, positions_, directions_);

    // Composite.
    const Eigen::VectorXd* sigma = count > 0 ? &field_.sigma() : nullptr;
    const Eigen::MatrixXd* color = count > 0 ? &field_.color() : nullptr;
    transmittance_.resize(rays_ * (s + 1));
    weight_.resize(rays_ * s);
    intensity_.resize(3, static_cast<Eigen::Index>(rays_));
    for (std::size_t r = 0; r < rays_; ++r) {
      double trans = 1.0;
      Vec3 acc = Vec3::Zero();
      for (std::size_t i = 0; i < s; ++i) {
        transmittance_[r * (s + 1) + i] = trans;
        const long p = point_of_[r * s + i];
        if (p < 0) {
          weight_[r * s + i] = 0.0;
          continue;
        }
        const double survive = std::exp(-(*sigma)[p] * delta_[r * s + i]);
        const double w = trans * (1.0 - survive);
        weight_[r * s + i] = w;
        acc += w * color->col(p);
        trans *= survive;
      }
      transmittance_[r * (s + 1) + s] = trans;
      intensity_.col(static_cast<Eigen::Index>(r)) = acc + trans * background_;
    }
  }

  /// Rendered RGB, one column per ray.
  const Eigen::Matrix3Xd& intensity() const { return intensity_; }
  double background_weight(std::size_t ray) const { return transmittance_[ray * (samples_ + 1) + samples_]; }
  std::span<const double> weights(std::size_t ray) const { return {weight_.data() + ray * samples_, samples_}; }

  /// Accumulate d(loss)/d(theta) given d(loss)/d(intensity) per ray.
  void backward(const FieldParams& params, const FieldLayout& layout, const Eigen::Matrix3Xd& d_intensity,
                std::span<double> grad) {
    const auto points = positions_.cols();
    if (points == 0) return;
    const Eigen::MatrixXd& color = field_.color();
    Eigen::VectorXd d_sigma = Eigen::VectorXd::Zero(points);
    Eigen::MatrixXd d_color = Eigen::MatrixXd::Zero(3, points);
    const std::size_t s = samples_;
    for (std::size_t r = 0; r < rays_; ++r) {
      const Vec3 g = d_intensity.col(static_cast<Eigen::Index>(r));
      if (g.isZero(0.0)) continue;
      // suffix = sum_{j>i} w_j c_j + T_{S+1} c_bg
      Vec3 suffix = transmittance_[r * (s + 1) + s] * background_;
      for (std::size_t i = s; i-- > 0;) {
        const long p = point_of_[r * s + i];
        if (p < 0) continue;
        const Vec3 c = color.col(p);
        const double trans_next = transmittance_[r * (s + 1) + i + 1];
        d_sigma[p] = delta_[r * s + i] * g.dot(trans_next * c - suffix);
        d_color.col(p) = weight_[r * s + i] * g;
        suffix += weight_[r * s + i] * c;
      }
    }
    field_.backward(params, layout, d_sigma, d_color, grad);
  }

 private:
  FieldBatch field_;
  std::size_t rays_ = 0;
  std::size_t samples_ = 0;
  Vec3 background_ = Vec3::Zero();
  std::vector<long> point_of_;
  std::vector<double> delta_;
  std::vector<double> transmittance_;
  std::vector<double> weight_;
  Eigen::Matrix3Xd positions_;
  Eigen::Matrix3Xd directions_;
  Eigen::Matrix3Xd intensity_;
};

/// One pixel observed at two poses.
struct DeltaQuery {
  Vec2 pixel = Vec2::Zero();
  Channel channel = Channel::luminance;
};

/// Batched render_delta_log with its adjoint. Query i renders rays i (pose
/// t0) and P + i (pose t) over the same sample distances.
class DeltaLogBatch {
 public:
  std::span<const double> forward(const FieldParams& params, const FieldLayout& layout,
                                  const CameraIntrinsics& k, const Pose& pose_t0, const Pose& pose_t,
                                  std::span<const DeltaQuery> queries, const RenderConfig& config, Rng* rng) {
    const std::size_t n = queries.size();
    const auto s = static_cast<std::size_t>(config.samples);
    queries_.assign(queries.begin(), queries.end());
    epsilon_ = config.epsilon;
    std::vector<Ray> rays(2 * n);
    std::vector<double> distances(2 * n * s);
    for (std::size_t i = 0; i < n; ++i) {
      rays[i] = pixel_ray(k, pose_t0, queries[i].pixel);
      rays[n + i] = pixel_ray(k, pose_t, queries[i].pixel);
      const auto t = sample_along_ray(config.near, config.far, config.samples, config.stratified && rng != nullptr, rng);
      std::copy(t.begin(), t.end(), distances.begin() + static_cast<std::ptrdiff_t>(i * s));
      std::copy(t.begin(), t.end(), distances.begin() + static_cast<std::ptrdiff_t>((n + i) * s));
    }
    renderer_.forward(params, layout, config, rays, distances);
    delta_.resize(n);
    const Eigen::Matrix3Xd& rgb = renderer_.intensity();
    for (std::size_t i = 0; i < n; ++i) {
      delta_[i] = log_intensity(value(rgb, n + i, queries[i].channel), epsilon_) -
                  log_intensity(value(rgb, i, queries[i].channel), epsilon_);
    }
    return delta_;
  }

  std::span<const double> delta() const { return delta_; }
  const BatchRenderer& renderer() const { return renderer_; }

  void backward(const FieldParams& params, const FieldLayout& layout, std::span<const double> d_delta,
                std::span<double> grad) {
    const std::size_t n = queries_.size();
    if (d_delta.size() != n) throw std::invalid_argument("DeltaLogBatch: adjoint length mismatch");
    const Eigen::Matrix3Xd& rgb = renderer_.intensity();
    Eigen::Matrix3Xd d_rgb = Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(2 * n));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = d_delta[i];
      if (g == 0.0) continue;
      scatter(d_rgb, n + i, queries_[i].channel, g / (value(rgb, n + i, queries_[i].channel) + epsilon_));
      scatter(d_rgb, i, queries_[i].channel, -g / (value(rgb, i, queries_[i].channel) + epsilon_));
    }
    renderer_.backward(params, layout, d_rgb, grad);
  }

 private:
  static double value(const Eigen::Matrix3Xd& rgb, std::size_t ray, Channel channel) {
    const auto col = static_cast<Eigen::Index>(ray);
    if (channel == Channel::luminance) return (rgb(0, col) + rgb(1, col) + rgb(2, col)) * (1.0 / 3.0);
    return rgb(static_cast<Eigen::Index>(channel), col);
  }
  static void scatter(Eigen::Matrix3Xd& d_rgb, std::size_t ray, Channel channel, double g) {
    const auto col = static_cast<Eigen::Index>(ray);
    if (channel == Channel::luminance) {
      d_rgb.col(col).array() += g * (1.0 / 3.0);
    } else {
      d_rgb(static_cast<Eigen::Index>(channel), col) += g;
    }
  }

  BatchRenderer renderer_;
  std::vector<DeltaQuery> queries_;
  std::vector<double> delta_;
  double epsilon_ = 1e-5;
};

/// Full image with midpoint sampling. Pure and reproducible.
inline Image render_image(const FieldParams& params, const CameraIntrinsics& k, const Pose& pose,
                          const RenderConfig& config) {
  params.validate();
  config.validate();
  const FieldLayout layout = params.layout();
  const auto t = sample_along_ray(config.near, config.far, config.samples, false, nullptr);
  Image img(k.width, k.height);
  BatchRenderer renderer;
  std::vector<Ray> rays(static_cast<std::size_t>(k.width));
  std::vector<double> distances(rays.size() * t.size());
  for (std::size_t i = 0; i < rays.size(); ++i) std::copy(t.begin(), t.end(), distances.begin() + static_cast<std::ptrdiff_t>(i * t.size()));
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) rays[static_cast<std::size_t>(x)] = pixel_ray(k, pose, x, y);
    renderer.forward(params, layout, config, rays, distances);
    for (int x = 0; x < k.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = renderer.intensity()(c, x);
  }
  return img;
}

}  // namespace saenerf
