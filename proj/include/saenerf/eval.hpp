// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image metrics. Evaluation order is fixed: align brightness in linear
// space, gamma-correct, then measure.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "saenerf/image.hpp"

namespace saenerf {

inline constexpr double kPsnrCap = 99.0;

inline Image gamma_correct(const Image& img, double gamma = 2.2) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  Image out = img;
  const double inv = 1.0 / gamma;
  for (double& v : out.data) v = std::pow(std::clamp(v, 0.0, 1.0), inv);
  return out;
}

/// Least-squares gain per channel: s = sum(r t) / sum(r^2), 1 for an all-zero
/// channel.
inline std::array<double, 3> brightness_scales(const Image& rendered, const Image& target) {
  if (!rendered.same_shape(target)) throw std::invalid_argument("align_brightness: image size mismatch");
  std::array<double, 3> rt{}, rr{};
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const std::size_t c = i % 3;
    rt[c] += rendered.data[i] * target.data[i];
    rr[c] += rendered.data[i] * rendered.data[i];
  }
  std::array<double, 3> s{};
  for (std::size_t c = 0; c < 3; ++c) s[c] = rr[c] > 0.0 ? rt[c] / rr[c] : 1.0;
  return s;
}

inline Image scale_channels(const Image& img, const std::array<double, 3>& s, bool clip) {
  Image out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double v = out.data[i] * s[i % 3];
    out.data[i] = clip ? std::clamp(v, 0.0, 1.0) : v;
  }
  return out;
}

inline Image align_brightness(const Image& rendered, const Image& target) {
  return scale_channels(rendered, brightness_scales(rendered, target), true);
}

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: image size mismatch");
  if (a.data.empty()) throw std::invalid_argument("mse: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

inline double psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

namespace detail {

inline std::vector<double> gray(const Image& img) {
  std::vector<double> g(img.pixel_count());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (img.data[3 * i] + img.data[3 * i + 1] + img.data[3 * i + 2]) / 3.0;
  return g;
}

inline std::array<double, 11> gaussian_taps() {
  std::array<double, 11> w{};
  double s = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= s;
  return w;
}

/// Separable 11x11 Gaussian over valid positions only.
inline std::vector<double> blur_valid(const std::vector<double>& img, int w, int h) {
  const auto taps = gaussian_taps();
  const int ow = w - 10;
  const int oh = h - 10;
  std::vector<double> rows(static_cast<std::size_t>(ow) * static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k) s += taps[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y * w + x + k)];
      rows[static_cast<std::size_t>(y * ow + x)] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * static_cast<std::size_t>(oh));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k) s += taps[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((y + k) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = s;
    }
  return out;
}

}  // namespace detail

/// Single-scale SSIM on the channel-mean gray image. Gaussian window 11x11,
/// sigma 1.5, K1 0.01, K2 0.03, data range 1, mean over valid windows.
inline double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: image size mismatch");
  if (a.width < 11 || a.height < 11) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const int w = a.width;
  const int h = a.height;
  const std::vector<double> x = detail::gray(a);
  const std::vector<double> y = detail::gray(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::blur_valid(x, w, h);
  const auto my = detail::blur_valid(y, w, h);
  const auto mxx = detail::blur_valid(xx, w, h);
  const auto myy = detail::blur_valid(yy, w, h);
  const auto mxy = detail::blur_valid(xy, w, h);
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return std::clamp(total / static_cast<double>(mx.size()), -1.0, 1.0);
}

struct ImageMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
};

/// render -> align_brightness -> gamma_correct -> metric. The target is
/// linear and gets the same gamma.
inline ImageMetrics evaluate_pair(const Image& rendered, const Image& target, double gamma = 2.2) {
  const Image a = gamma_correct(align_brightness(rendered, target), gamma);
  const Image t = gamma_correct(target, gamma);
  return {psnr(a, t), ssim(a, t)};
}

struct MetricReport {
  std::vector<std::string> names;
  std::vector<ImageMetrics> images;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;

  void add(std::string name, ImageMetrics m) {
    names.push_back(std::move(name));
    images.push_back(m);
    mean_psnr = 0.0;
    mean_ssim = 0.0;
    for (const ImageMetrics& i : images) {
      mean_psnr += i.psnr;
      mean_ssim += i.ssim;
    }
    mean_psnr /= static_cast<double>(images.size());
    mean_ssim /= static_cast<double>(images.size());
  }
};

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < r.images.size(); ++i)
    per.push_back({{"name", r.names[i]}, {"psnr", r.images[i].psnr}, {"ssim", r.images[i].ssim}});
  return {{"images", per}, {"mean_psnr", r.mean_psnr}, {"mean_ssim", r.mean_ssim}};
}

}  // namespace saenerf
