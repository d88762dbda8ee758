// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-supervised event losses over one window of sampled pixels.
//
// Every sampled pixel i carries an accumulated polarity E_i and a predicted
// log-intensity change dL_i. Pixels split into
//   positives    u_p  : E_i != 0
//   negatives    u_n  : E_i == 0
//   consistent   u_p+ : E_i != 0 and dL_i * E_i > 0
// The normalization losses compare dL / |dL(S)| with E / |E(S)| over all
// pixels, where S is the set feeding the denominators: every pixel (norm),
// u_p (norm-), or u_p+ (norm+). The zero-event terms penalize predicted
// change on u_n, either absolutely (zero-) or relative to the change on
// u_p (zero+).
//
// All loss functions are templates over the scalar type so the same code
// runs on doubles and on tape variables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "saenerf/events.hpp"
#include "saenerf/geometry.hpp"
#include "saenerf/grad.hpp"
#include "saenerf/random.hpp"
#include "saenerf/renderer.hpp"

namespace saenerf {

enum class NormVariant : std::uint8_t { norm, norm_minus, norm_plus };
enum class InnerNorm : std::uint8_t { l1, l2 };
/// Outer reduction of the squared residuals in the normalization losses.
enum class Reduction : std::uint8_t { mean, sum };

inline std::string variant_tag(NormVariant v) {
  switch (v) {
    case NormVariant::norm:
      return "norm";
    case NormVariant::norm_minus:
      return "norm-";
    case NormVariant::norm_plus:
      return "norm+";
  }
  return "norm+";
}

inline NormVariant parse_variant(const std::string& tag) {
  if (tag == "norm") return NormVariant::norm;
  if (tag == "norm-") return NormVariant::norm_minus;
  if (tag == "norm+") return NormVariant::norm_plus;
  throw std::invalid_argument("unknown loss variant '" + tag + "'");
}

struct LossConfig {
  NormVariant variant = NormVariant::norm_plus;
  InnerNorm inner = InnerNorm::l1;
  Reduction reduction = Reduction::sum;
  double lambda = 0.5;           // zero+ weight
  double lambda0 = 0.0;          // zero- weight
  double negative_ratio = 0.05;  // fraction of each batch drawn from E == 0
  double eps_div = 1e-8;

  void validate() const {
    if (!(lambda >= 0.0 && lambda0 >= 0.0)) throw std::invalid_argument("loss config: weights must be >= 0");
    if (!(negative_ratio >= 0.0 && negative_ratio <= 1.0)) {
      throw std::invalid_argument("loss config: negative ratio must be in [0, 1]");
    }
    if (!(eps_div > 0.0)) throw std::invalid_argument("loss config: eps_div must be positive");
  }

  /// The faster preset: lambda = 1.0, lambda0 = 0.5.
  static LossConfig fast_preset() {
    LossConfig c;
    c.lambda = 1.0;
    c.lambda0 = 0.5;
    return c;
  }
};

struct PixelMasks {
  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;
  std::vector<std::size_t> consistent;
};

/// Strict sign agreement: a zero prediction is never consistent.
template <typename Scalar>
PixelMasks classify_pixels(std::span<const int> polarity, std::span<const Scalar> predicted) {
  if (polarity.size() != predicted.size()) throw std::invalid_argument("classify_pixels: length mismatch");
  PixelMasks m;
  for (std::size_t i = 0; i < polarity.size(); ++i) {
    if (polarity[i] == 0) {
      m.negative.push_back(i);
      continue;
    }
    m.positive.push_back(i);
    if (grad::value_of(predicted[i]) * polarity[i] > 0.0) m.consistent.push_back(i);
  }
  return m;
}

namespace detail {

template <typename Scalar>
Scalar total(std::vector<Scalar>& terms) {
  if (terms.empty()) return Scalar(0.0);
  return grad::sum(std::span<const Scalar>(terms));
}

/// |x|_1 or |x|_2 of predicted values over `set` (all pixels when empty optional).
template <typename Scalar>
Scalar predicted_norm(std::span<const Scalar> predicted, std::optional<std::span<const std::size_t>> set, InnerNorm inner) {
  using std::abs;
  using std::sqrt;
  std::vector<Scalar> terms;
  auto visit = [&](std::size_t i) {
    terms.push_back(inner == InnerNorm::l1 ? Scalar(abs(predicted[i])) : Scalar(predicted[i] * predicted[i]));
  };
  if (set) {
    for (std::size_t i : *set) visit(i);
  } else {
    for (std::size_t i = 0; i < predicted.size(); ++i) visit(i);
  }
  Scalar s = total(terms);
  if (inner == InnerNorm::l2 && grad::value_of(s) > 0.0) s = sqrt(s);
  return s;
}

inline double polarity_norm(std::span<const int> polarity, std::optional<std::span<const std::size_t>> set, InnerNorm inner) {
  double s = 0.0;
  auto visit = [&](std::size_t i) {
    const double e = polarity[i];
    s += inner == InnerNorm::l1 ? std::abs(e) : e * e;
  };
  if (set) {
    for (std::size_t i : *set) visit(i);
  } else {
    for (std::size_t i = 0; i < polarity.size(); ++i) visit(i);
  }
  return inner == InnerNorm::l2 ? std::sqrt(s) : s;
}

/// Mean (or sum) over all pixels of (dL_i / |dL(S)| - E_i / |E(S)|)^2, or nothing
/// when either denominator does not exceed eps_div.
template <typename Scalar>
std::optional<Scalar> normalized_loss(std::span<const int> polarity, std::span<const Scalar> predicted,
                                      std::optional<std::span<const std::size_t>> set, const LossConfig& config) {
  if (polarity.size() != predicted.size()) throw std::invalid_argument("loss: length mismatch");
  if (predicted.empty()) return std::nullopt;
  const Scalar pred_den = predicted_norm(predicted, set, config.inner);
  const double pol_den = polarity_norm(polarity, set, config.inner);
  if (!(grad::value_of(pred_den) > config.eps_div && pol_den > config.eps_div)) return std::nullopt;
  std::vector<Scalar> terms;
  terms.reserve(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const Scalar diff = predicted[i] / pred_den - polarity[i] / pol_den;
    terms.push_back(diff * diff);
  }
  if (config.reduction == Reduction::sum) return total(terms);
  return total(terms) * (1.0 / static_cast<double>(predicted.size()));
}

template <typename Scalar>
Scalar abs_sum(std::span<const Scalar> predicted, std::span<const std::size_t> set) {
  using std::abs;
  std::vector<Scalar> terms;
  terms.reserve(set.size());
  for (std::size_t i : set) terms.push_back(abs(predicted[i]));
  return total(terms);
}

}  // namespace detail

/// Denominators over every sampled pixel.
template <typename Scalar>
std::optional<Scalar> loss_norm(std::span<const int> polarity, std::span<const Scalar> predicted, const LossConfig& config) {
  return detail::normalized_loss<Scalar>(polarity, predicted, std::nullopt, config);
}

/// Denominators over positive pixels only; numerators still cover negatives.
template <typename Scalar>
std::optional<Scalar> loss_norm_minus(std::span<const int> polarity, std::span<const Scalar> predicted,
                                      const LossConfig& config) {
  const PixelMasks m = classify_pixels(polarity, predicted);
  if (m.positive.empty()) return std::nullopt;
  return detail::normalized_loss<Scalar>(polarity, predicted, std::span<const std::size_t>(m.positive), config);
}

/// Denominators over consistent pixels. The mask is a constant of the step.
/// Returns nothing when u_p+ is empty or degenerate; composite_loss then
/// falls back to norm-.
template <typename Scalar>
std::optional<Scalar> loss_norm_plus(std::span<const int> polarity, std::span<const Scalar> predicted,
                                     const LossConfig& config) {
  const PixelMasks m = classify_pixels(polarity, predicted);
  if (m.consistent.empty()) return std::nullopt;
  return detail::normalized_loss<Scalar>(polarity, predicted, std::span<const std::size_t>(m.consistent), config);
}

/// Sum of |dL| over negatives (0 when there are none).
template <typename Scalar>
Scalar loss_zero_minus(std::span<const int> polarity, std::span<const Scalar> predicted) {
  const PixelMasks m = classify_pixels(polarity, predicted);
  return detail::abs_sum(predicted, std::span<const std::size_t>(m.negative));
}

/// sum |dL(u_n)| / (sum |dL(u_p)| + eps_div); nothing when u_p is empty.
template <typename Scalar>
std::optional<Scalar> loss_zero_plus(std::span<const int> polarity, std::span<const Scalar> predicted,
                                     const LossConfig& config) {
  const PixelMasks m = classify_pixels(polarity, predicted);
  if (m.positive.empty()) return std::nullopt;
  const Scalar num = detail::abs_sum(predicted, std::span<const std::size_t>(m.negative));
  const Scalar den = detail::abs_sum(predicted, std::span<const std::size_t>(m.positive)) + config.eps_div;
  return num / den;
}

template <typename Scalar>
struct LossBreakdown {
  std::optional<Scalar> total;  // empty: window skipped
  std::optional<Scalar> normalization;
  std::optional<Scalar> zero_plus;
  Scalar zero_minus{};
  bool fell_back = false;  // norm+ had no usable consistent set
};

/// variant + lambda * zero+ + lambda0 * zero-. Zero-weight terms are left
/// out of the expression.
template <typename Scalar>
LossBreakdown<Scalar> composite_loss(std::span<const int> polarity, std::span<const Scalar> predicted,
                                     const LossConfig& config) {
  LossBreakdown<Scalar> out;
  switch (config.variant) {
    case NormVariant::norm:
      out.normalization = loss_norm<Scalar>(polarity, predicted, config);
      break;
    case NormVariant::norm_minus:
      out.normalization = loss_norm_minus<Scalar>(polarity, predicted, config);
      break;
    case NormVariant::norm_plus:
      out.normalization = loss_norm_plus<Scalar>(polarity, predicted, config);
      if (!out.normalization) {
        out.fell_back = true;
        out.normalization = loss_norm_minus<Scalar>(polarity, predicted, config);
      }
      break;
  }
  out.zero_plus = loss_zero_plus<Scalar>(polarity, predicted, config);
  out.zero_minus = loss_zero_minus<Scalar>(polarity, predicted);
  if (!out.normalization) return out;
  if (config.lambda > 0.0 && !out.zero_plus) return out;

  Scalar total = *out.normalization;
  if (config.lambda > 0.0) total = total + config.lambda * *out.zero_plus;
  if (config.lambda0 > 0.0) total = total + config.lambda0 * out.zero_minus;
  out.total = total;
  return out;
}

struct ThresholdStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Per-pixel predicted thresholds dL_i / E_i over positives.
inline std::optional<ThresholdStats> taopet(std::span<const int> polarity, std::span<const double> predicted) {
  if (polarity.size() != predicted.size()) throw std::invalid_argument("taopet: length mismatch");
  ThresholdStats s{0.0, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  std::size_t n = 0;
  for (std::size_t i = 0; i < polarity.size(); ++i) {
    if (polarity[i] == 0) continue;
    const double c = predicted[i] / polarity[i];
    s.mean += c;
    s.min = std::min(s.min, c);
    s.max = std::max(s.max, c);
    ++n;
  }
  if (n == 0) return std::nullopt;
  s.mean /= static_cast<double>(n);
  return s;
}

struct Proportion {
  double all = 0.0;        // l / N, N = every sampled pixel
  double positives = 0.0;  // l / |u_p|
};

inline Proportion poap(std::span<const int> polarity, std::span<const double> predicted) {
  if (polarity.empty()) throw std::invalid_argument("poap: no sampled pixels");
  const PixelMasks m = classify_pixels(polarity, predicted);
  Proportion p;
  p.all = static_cast<double>(m.consistent.size()) / static_cast<double>(polarity.size());
  p.positives = m.positive.empty() ? 0.0 : static_cast<double>(m.consistent.size()) / static_cast<double>(m.positive.size());
  return p;
}

struct Diagnostics {
  std::optional<ThresholdStats> threshold;
  Proportion proportion;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::size_t n_consistent = 0;
};

inline Diagnostics diagnose(std::span<const int> polarity, std::span<const double> predicted) {
  Diagnostics d;
  const PixelMasks m = classify_pixels(polarity, predicted);
  d.threshold = taopet(polarity, predicted);
  d.proportion = poap(polarity, predicted);
  d.n_pos = m.positive.size();
  d.n_neg = m.negative.size();
  d.n_consistent = m.consistent.size();
  return d;
}

struct PixelSample {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  int polarity = 0;
  Channel channel = Channel::luminance;
};

struct WindowBatch {
  std::uint64_t t0_us = 0;
  std::uint64_t t_us = 0;
  std::vector<PixelSample> pixels;
  std::vector<double> predicted;  // forward values of dL

  std::vector<int> polarities() const {
    std::vector<int> e(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) e[i] = pixels[i].polarity;
    return e;
  }
  PixelMasks masks() const {
    const std::vector<int> e = polarities();
    return classify_pixels<double>(e, predicted);
  }
};

inline std::size_t negative_count(std::size_t batch, double ratio) {
  const std::size_t n = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(batch) - 1e-9));
  return std::min(n, batch);
}

/// Draw ceil(ratio * N) pixels uniformly (with replacement) among E == 0
/// and the rest among E != 0 for the window [t0, t). Nothing when the window
/// holds no events.
inline std::optional<std::vector<PixelSample>> sample_window_pixels(const EventStream& stream, std::uint64_t t0_us,
                                                                    std::uint64_t t_us, std::size_t batch,
                                                                    double negative_ratio, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("sample_window_pixels: batch must be >= 1");
  const PolarityMap window = accumulate(stream, t0_us, t_us);
  if (window.entries().empty()) return std::nullopt;
  const int w = stream.header.width;
  std::vector<int> dense = window.dense();
  std::vector<std::uint32_t> zero_pixels;
  zero_pixels.reserve(dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense[i] == 0) zero_pixels.push_back(static_cast<std::uint32_t>(i));

  std::size_t n_neg = zero_pixels.empty() ? 0 : negative_count(batch, negative_ratio);
  if (n_neg == batch) n_neg = batch - 1;  // keep at least one positive
  std::vector<PixelSample> out;
  out.reserve(batch);
  auto push = [&](std::uint32_t pix) {
    const int x = static_cast<int>(pix % static_cast<std::uint32_t>(w));
    const int y = static_cast<int>(pix / static_cast<std::uint32_t>(w));
    out.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), dense[pix],
                   bayer_channel(x, y, stream.header.pattern)});
  };
  const auto& positives = window.entries();
  for (std::size_t i = 0; i < batch - n_neg; ++i) push(positives[uniform_index(rng, positives.size())].pixel);
  for (std::size_t i = 0; i < n_neg; ++i) push(zero_pixels[uniform_index(rng, zero_pixels.size())]);
  return out;
}

inline std::vector<DeltaQuery> to_queries(std::span<const PixelSample> pixels) {
  std::vector<DeltaQuery> q(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) q[i] = {Vec2(pixels[i].x, pixels[i].y), pixels[i].channel};
  return q;
}

/// Sample a window's pixels and render their predicted changes. Nothing when
/// the window has no events (the caller redraws the window).
inline std::optional<WindowBatch> sample_window_batch(const EventStream& stream, const Trajectory& trajectory,
                                                      const CameraIntrinsics& k, const FieldParams& params,
                                                      std::uint64_t t0_us, std::uint64_t t_us, std::size_t batch,
                                                      double negative_ratio, Rng& rng, const RenderConfig& config) {
  auto pixels = sample_window_pixels(stream, t0_us, t_us, batch, negative_ratio, rng);
  if (!pixels) return std::nullopt;
  WindowBatch out;
  out.t0_us = t0_us;
  out.t_us = t_us;
  out.pixels = std::move(*pixels);
  const FieldLayout layout = params.layout();
  const std::vector<DeltaQuery> queries = to_queries(out.pixels);
  DeltaLogBatch renderer;
  const auto delta = renderer.forward(params, layout, k, trajectory.at(static_cast<double>(t0_us) * 1e-6),
                                      trajectory.at(static_cast<double>(t_us) * 1e-6), queries, config, &rng);
  out.predicted.assign(delta.begin(), delta.end());
  return out;
}

struct StepRecord {
  std::uint64_t step = 0;
  std::optional<double> loss_total;
  std::optional<double> loss_norm;
  std::optional<double> loss_zero_plus;
  double loss_zero_minus = 0.0;
  std::optional<double> taopet_mean;
  double poap = 0.0;
  double poap_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::size_t n_consistent = 0;
  std::size_t windows_used = 0;
  std::size_t fallbacks = 0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"step", r.step},
          {"loss_total", opt(r.loss_total)},
          {"loss_norm", opt(r.loss_norm)},
          {"loss_zero_plus", opt(r.loss_zero_plus)},
          {"loss_zero_minus", r.loss_zero_minus},
          {"taopet_mean", opt(r.taopet_mean)},
          {"poap", r.poap},
          {"poap_pos", r.poap_pos},
          {"n_pos", r.n_pos},
          {"n_neg", r.n_neg},
          {"n_consistent", r.n_consistent},
          {"windows_used", r.windows_used},
          {"fallbacks", r.fallbacks}};
}

inline StepRecord step_record_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  StepRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.loss_total = opt("loss_total");
  r.loss_norm = opt("loss_norm");
  r.loss_zero_plus = opt("loss_zero_plus");
  r.loss_zero_minus = j.value("loss_zero_minus", 0.0);
  r.taopet_mean = opt("taopet_mean");
  r.poap = j.value("poap", 0.0);
  r.poap_pos = j.value("poap_pos", 0.0);
  r.n_pos = j.value("n_pos", std::size_t{0});
  r.n_neg = j.value("n_neg", std::size_t{0});
  r.n_consistent = j.value("n_consistent", std::size_t{0});
  r.windows_used = j.value("windows_used", std::size_t{0});
  r.fallbacks = j.value("fallbacks", std::size_t{0});
  return r;
}

}  // namespace saenerf
