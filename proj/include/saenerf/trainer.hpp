// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-window optimization with Adam, binary checkpoints and deterministic
// seeding. Each step draws M windows; window w of step k uses its own RNG
// stream seeded from (seed, k, w), so a run is reproducible, resumable and
// independent of the worker count.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "saenerf/events.hpp"
#include "saenerf/field.hpp"
#include "saenerf/geometry.hpp"
#include "saenerf/grad.hpp"
#include "saenerf/losses.hpp"
#include "saenerf/parallel.hpp"
#include "saenerf/random.hpp"
#include "saenerf/renderer.hpp"

namespace saenerf {

struct TrainConfig {
  std::uint64_t iterations = 2000;
  double learning_rate = 2e-4;
  std::size_t batch = 1024;
  std::size_t windows = 4;
  double l_max = 0.0;  // seconds; 0 selects 10% of the stream duration
  double l_min = 1e-3;
  LossConfig loss;
  FieldArch arch;
  RenderConfig render;
  std::uint64_t seed = 1;
  std::uint64_t checkpoint_interval = 0;  // 0 disables periodic checkpoints

  double resolved_l_max(double duration) const { return l_max > 0.0 ? l_max : 0.1 * duration; }

  void validate(double duration) const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning rate must be positive");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (windows < 1) throw std::invalid_argument("train config: windows must be >= 1");
    const double lmax = resolved_l_max(duration);
    if (!(l_min > 0.0 && l_min <= lmax && lmax <= duration)) {
      throw std::invalid_argument("train config: need 0 < L_min <= L_max <= stream duration");
    }
    if (arch.depth < 1 || arch.width < 1 || arch.n_freq_pos < 0 || arch.n_freq_dir < 0) {
      throw std::invalid_argument("train config: bad field architecture");
    }
    loss.validate();
    render.validate();
  }
};

inline nlohmann::json to_json(const RenderConfig& r) {
  auto v = [](const Vec3& x) { return nlohmann::json{x.x(), x.y(), x.z()}; };
  return {{"near", r.near},         {"far", r.far},           {"samples", r.samples},
          {"epsilon", r.epsilon},   {"background", v(r.background)}, {"box_min", v(r.box_min)},
          {"box_max", v(r.box_max)}, {"stratified", r.stratified}};
}

inline RenderConfig render_config_from_json(const nlohmann::json& j, RenderConfig r = {}) {
  auto v = [](const nlohmann::json& a) {
    const auto x = a.get<std::vector<double>>();
    if (x.size() != 3) throw std::invalid_argument("render config: expected a 3-vector");
    return Vec3(x[0], x[1], x[2]);
  };
  r.near = j.value("near", r.near);
  r.far = j.value("far", r.far);
  r.samples = j.value("samples", r.samples);
  r.epsilon = j.value("epsilon", r.epsilon);
  if (j.contains("background")) r.background = v(j.at("background"));
  if (j.contains("box_min")) r.box_min = v(j.at("box_min"));
  if (j.contains("box_max")) r.box_max = v(j.at("box_max"));
  r.stratified = j.value("stratified", r.stratified);
  return r;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"learning_rate", c.learning_rate},
          {"batch", c.batch},
          {"windows", c.windows},
          {"l_max", c.l_max},
          {"l_min", c.l_min},
          {"variant", variant_tag(c.loss.variant)},
          {"inner_norm", c.loss.inner == InnerNorm::l1 ? "l1" : "l2"},
          {"reduction", c.loss.reduction == Reduction::sum ? "sum" : "mean"},
          {"lambda", c.loss.lambda},
          {"lambda0", c.loss.lambda0},
          {"negative_ratio", c.loss.negative_ratio},
          {"eps_div", c.loss.eps_div},
          {"depth", c.arch.depth},
          {"width", c.arch.width},
          {"n_freq_pos", c.arch.n_freq_pos},
          {"n_freq_dir", c.arch.n_freq_dir},
          {"render", to_json(c.render)},
          {"seed", c.seed},
          {"checkpoint_interval", c.checkpoint_interval}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "iterations", "learning_rate", "batch", "windows", "l_max", "l_min", "variant", "inner_norm", "reduction", "lambda",
      "lambda0", "negative_ratio", "eps_div", "depth", "width", "n_freq_pos", "n_freq_dir", "render", "seed",
      "checkpoint_interval"};
  if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw std::invalid_argument("train config: unknown key '" + item.key() + "'");
    }
  }
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch = j.value("batch", c.batch);
  c.windows = j.value("windows", c.windows);
  c.l_max = j.value("l_max", c.l_max);
  c.l_min = j.value("l_min", c.l_min);
  c.loss.variant = parse_variant(j.value("variant", variant_tag(c.loss.variant)));
  const std::string inner = j.value("inner_norm", std::string("l1"));
  if (inner != "l1" && inner != "l2") throw std::invalid_argument("train config: inner_norm must be l1 or l2");
  c.loss.inner = inner == "l1" ? InnerNorm::l1 : InnerNorm::l2;
  const std::string reduction = j.value("reduction", std::string("sum"));
  if (reduction != "sum" && reduction != "mean") throw std::invalid_argument("train config: reduction must be sum or mean");
  c.loss.reduction = reduction == "sum" ? Reduction::sum : Reduction::mean;
  c.loss.lambda = j.value("lambda", c.loss.lambda);
  c.loss.lambda0 = j.value("lambda0", c.loss.lambda0);
  c.loss.negative_ratio = j.value("negative_ratio", c.loss.negative_ratio);
  c.loss.eps_div = j.value("eps_div", c.loss.eps_div);
  c.arch.depth = j.value("depth", c.arch.depth);
  c.arch.width = j.value("width", c.arch.width);
  c.arch.n_freq_pos = j.value("n_freq_pos", c.arch.n_freq_pos);
  c.arch.n_freq_dir = j.value("n_freq_dir", c.arch.n_freq_dir);
  if (j.contains("render")) c.render = render_config_from_json(j.at("render"));
  c.seed = j.value("seed", c.seed);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  return c;
}

struct Window {
  double t0 = 0.0;
  double t = 0.0;
};

/// t ~ U[L_min, T], then t0 ~ U[max(0, t - L_max), t - L_min].
inline Window draw_window(double duration, double l_max, double l_min, Rng& rng) {
  if (!(l_min > 0.0 && l_min <= l_max && l_max <= duration)) {
    throw std::invalid_argument("draw_window: need 0 < L_min <= L_max <= T");
  }
  Window w;
  w.t = uniform(rng, l_min, duration);
  w.t0 = uniform(rng, std::max(0.0, w.t - l_max), w.t - l_min);
  return w;
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
  bool operator==(const AdamState&) const = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

inline void adam_step(std::span<double> theta, std::span<const double> gradient, AdamState& state, double lr) {
  if (theta.size() != gradient.size() || state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw std::invalid_argument("adam: shape mismatch");
  }
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    if (!std::isfinite(gradient[i])) throw std::domain_error("adam: non-finite gradient at parameter index " + std::to_string(i));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * gradient[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * gradient[i] * gradient[i];
    theta[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + kAdamEpsilon);
  }
}

/// Inputs shared by every window of a run.
struct TrainingData {
  const EventStream& stream;
  const Trajectory& trajectory;
  const CameraIntrinsics& camera;

  /// The stream may outlast the last keyframe by a microsecond.
  Pose pose_at_us(std::uint64_t t_us) const {
    return trajectory.at(std::clamp(static_cast<double>(t_us) * 1e-6, trajectory.start(), trajectory.end()));
  }
};

struct WindowResult {
  bool used = false;
  std::uint64_t t0_us = 0;
  std::uint64_t t_us = 0;
  LossBreakdown<double> loss;
  std::optional<Diagnostics> diagnostics;
  std::vector<double> gradient;  // d composite / d theta, empty when skipped
};

/// Redraws of an event-free window before the window counts as skipped.
inline constexpr int kWindowRedraws = 32;
/// Consecutive all-skipped steps before training aborts.
inline constexpr std::uint64_t kSkipStormLimit = 100;

namespace detail {

inline LossBreakdown<double> loss_values(const LossBreakdown<grad::Var>& b) {
  LossBreakdown<double> out;
  if (b.total) out.total = b.total->value;
  if (b.normalization) out.normalization = b.normalization->value;
  if (b.zero_plus) out.zero_plus = b.zero_plus->value;
  out.zero_minus = b.zero_minus.value;
  out.fell_back = b.fell_back;
  return out;
}

inline WindowResult evaluate_window(const TrainingData& data, const FieldParams& params, const FieldLayout& layout,
                                    const TrainConfig& config, std::uint64_t step, std::uint64_t window,
                                    bool with_gradient) {
  Rng rng(derive_seed(config.seed, step, window));
  const double duration = data.stream.duration_seconds();
  const double l_max = config.resolved_l_max(duration);
  WindowResult out;
  std::optional<std::vector<PixelSample>> pixels;
  for (int attempt = 0; attempt < kWindowRedraws && !pixels; ++attempt) {
    const Window w = draw_window(duration, l_max, config.l_min, rng);
    out.t0_us = to_microseconds(w.t0);
    out.t_us = std::max(to_microseconds(w.t), out.t0_us + 1);
    pixels = sample_window_pixels(data.stream, out.t0_us, out.t_us, config.batch, config.loss.negative_ratio, rng);
  }
  if (!pixels) return out;

  DeltaLogBatch renderer;
  const std::vector<DeltaQuery> queries = to_queries(*pixels);
  const auto delta = renderer.forward(params, layout, data.camera, data.pose_at_us(out.t0_us),
                                      data.pose_at_us(out.t_us), queries, config.render, &rng);
  std::vector<int> polarity(pixels->size());
  for (std::size_t i = 0; i < polarity.size(); ++i) polarity[i] = (*pixels)[i].polarity;
  out.diagnostics = diagnose(polarity, delta);

  grad::Tape tape;
  std::vector<grad::Var> leaves(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) leaves[i] = tape.variable(delta[i]);
  const LossBreakdown<grad::Var> loss = composite_loss<grad::Var>(polarity, leaves, config.loss);
  out.loss = loss_values(loss);
  if (!loss.total) return out;
  if (!with_gradient) {
    out.used = true;
    return out;
  }

  std::vector<double> d_delta(delta.size(), 0.0);
  if (loss.total->id >= 0) {
    const grad::Gradient g = tape.backward(*loss.total);
    for (std::size_t i = 0; i < leaves.size(); ++i) d_delta[i] = g[leaves[i]];
  }
  out.gradient.assign(params.values.size(), 0.0);
  renderer.backward(params, layout, d_delta, out.gradient);
  out.used = true;
  return out;
}

}  // namespace detail

/// One window's loss and parameter gradient. The loss is built on a tape
/// with the predicted changes as leaves; the batched renderer adjoint then
/// carries d loss / d dL back to the parameters.
inline WindowResult window_gradient(const TrainingData& data, const FieldParams& params, const FieldLayout& layout,
                                    const TrainConfig& config, std::uint64_t step, std::uint64_t window) {
  return detail::evaluate_window(data, params, layout, config, step, window, true);
}

/// Same window and loss as window_gradient, without the backward pass.
inline WindowResult window_loss(const TrainingData& data, const FieldParams& params, const FieldLayout& layout,
                                const TrainConfig& config, std::uint64_t step, std::uint64_t window) {
  return detail::evaluate_window(data, params, layout, config, step, window, false);
}

struct StepResult {
  std::vector<double> gradient;  // mean over used windows; empty when none
  StepRecord record;
};

/// Mean of per-window gradients over the non-skipped windows, reduced in
/// window order.
inline StepResult step_gradient(const TrainingData& data, const FieldParams& params, const TrainConfig& config,
                                std::uint64_t step) {
  const FieldLayout layout = params.layout();
  std::vector<WindowResult> results(config.windows);
  parallel_for(config.windows, [&](std::size_t w) { results[w] = window_gradient(data, params, layout, config, step, w); });

  StepResult out;
  StepRecord& r = out.record;
  r.step = step;
  double total = 0.0, norm = 0.0, zp = 0.0, zm = 0.0, taopet_sum = 0.0, poap = 0.0, poap_pos = 0.0;
  std::size_t n_zp = 0, n_taopet = 0, n_diag = 0;
  for (const WindowResult& w : results) {
    if (w.diagnostics) {
      ++n_diag;
      poap += w.diagnostics->proportion.all;
      poap_pos += w.diagnostics->proportion.positives;
      r.n_pos += w.diagnostics->n_pos;
      r.n_neg += w.diagnostics->n_neg;
      r.n_consistent += w.diagnostics->n_consistent;
      if (w.diagnostics->threshold) {
        taopet_sum += w.diagnostics->threshold->mean;
        ++n_taopet;
      }
    }
    if (w.loss.fell_back) ++r.fallbacks;
    if (!w.used) continue;
    ++r.windows_used;
    total += *w.loss.total;
    norm += *w.loss.normalization;
    zm += w.loss.zero_minus;
    if (w.loss.zero_plus) {
      zp += *w.loss.zero_plus;
      ++n_zp;
    }
    if (out.gradient.empty()) out.gradient.assign(w.gradient.size(), 0.0);
    for (std::size_t i = 0; i < w.gradient.size(); ++i) out.gradient[i] += w.gradient[i];
  }
  if (r.windows_used > 0) {
    const double inv = 1.0 / static_cast<double>(r.windows_used);
    for (double& g : out.gradient) g *= inv;
    r.loss_total = total * inv;
    r.loss_norm = norm * inv;
    r.loss_zero_minus = zm * inv;
    if (n_zp > 0) r.loss_zero_plus = zp / static_cast<double>(n_zp);
  }
  if (n_taopet > 0) r.taopet_mean = taopet_sum / static_cast<double>(n_taopet);
  if (n_diag > 0) {
    r.poap = poap / static_cast<double>(n_diag);
    r.poap_pos = poap_pos / static_cast<double>(n_diag);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SAEN-CKPT", version byte, then little-endian fields.

inline constexpr std::array<char, 9> kCheckpointMagic = {'S', 'A', 'E', 'N', '-', 'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  CameraIntrinsics camera{};
  FieldParams params;
  AdamState optimizer;
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0;  // per-window streams derive from (seed, step, window)
};

namespace detail {

inline void put_f64(std::vector<char>& out, double v) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_vector(std::vector<char>& out, const std::vector<double>& v) {
  put_le<std::uint64_t>(out, v.size());
  for (double x : v) put_f64(out, x);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint: " + what + " at byte offset " + std::to_string(pos_));
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated data");
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    const T v = get_le<T>(bytes_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::vector<double> vector(std::size_t expected) {
    const auto n = le<std::uint64_t>();
    if (n != expected) fail("vector length " + std::to_string(n) + " does not match " + std::to_string(expected));
    need(n * 8);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  out.push_back(static_cast<char>(kCheckpointVersion));
  const std::string meta = nlohmann::json{{"config", to_json(c.config)}, {"camera", to_json(c.camera)}}.dump();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  detail::put_le<std::uint64_t>(out, c.step);
  detail::put_le<std::uint64_t>(out, c.rng_seed);
  detail::put_le<std::uint64_t>(out, c.optimizer.step);
  detail::put_vector(out, c.params.values);
  detail::put_vector(out, c.optimizer.m);
  detail::put_vector(out, c.optimizer.v);
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const char> bytes) {
  detail::ByteReader in(bytes);
  if (in.remaining() < kCheckpointMagic.size() || in.text(kCheckpointMagic.size()) != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end())) {
    throw std::runtime_error("checkpoint: bad magic at byte offset 0");
  }
  const auto version = in.le<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " at byte offset 9");
  }
  const auto meta_len = in.le<std::uint32_t>();
  const std::size_t meta_at = in.pos();
  Checkpoint c;
  try {
    const auto meta = nlohmann::json::parse(in.text(meta_len));
    c.config = train_config_from_json(meta.at("config"));
    c.camera = intrinsics_from_json(meta.at("camera"));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: bad metadata at byte offset " + std::to_string(meta_at) + ": " + e.what());
  }
  c.step = in.le<std::uint64_t>();
  c.rng_seed = in.le<std::uint64_t>();
  const std::size_t count = make_layout(c.config.arch).count;
  c.params.arch = c.config.arch;
  c.optimizer.step = in.le<std::uint64_t>();
  c.params.values = in.vector(count);
  c.optimizer.m = in.vector(count);
  c.optimizer.v = in.vector(count);
  if (in.remaining() != 0) in.fail("trailing bytes");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::vector<char> bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<char> bytes = detail::read_file(path);
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::ostream* log = nullptr;  // one JSON line per step
  std::string checkpoint_path;  // written every checkpoint_interval steps
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  Checkpoint state;
  std::vector<StepRecord> log;
};

inline Checkpoint initial_checkpoint(const TrainConfig& config, const CameraIntrinsics& camera) {
  Checkpoint c;
  c.config = config;
  c.camera = camera;
  c.params = init_field(config.seed, config.arch);
  c.optimizer = AdamState::zeros(c.params.values.size());
  c.rng_seed = config.seed;
  return c;
}

/// Runs until `state.step == state.config.iterations`. Resuming from a saved
/// checkpoint continues exactly as the uninterrupted run would.
inline TrainResult train(const EventStream& stream, const Trajectory& trajectory, Checkpoint state,
                         const TrainOptions& options = {}) {
  const TrainConfig& config = state.config;
  stream.validate();
  if (stream.events.empty()) throw std::invalid_argument("train: event stream is empty");
  config.validate(stream.duration_seconds());
  state.params.validate();
  const TrainingData data{stream, trajectory, state.camera};
  TrainResult result;
  std::uint64_t skipped_run = 0;
  while (state.step < config.iterations) {
    StepResult s = step_gradient(data, state.params, config, state.step);
    if (s.gradient.empty()) {
      if (++skipped_run >= kSkipStormLimit) {
        throw std::runtime_error("train: every window skipped for " + std::to_string(kSkipStormLimit) +
                                 " consecutive steps (last step " + std::to_string(state.step) + ")");
      }
    } else {
      skipped_run = 0;
      adam_step(state.params.values, s.gradient, state.optimizer, config.learning_rate);
    }
    ++state.step;
    if (options.log) *options.log << to_json(s.record).dump() << '\n';
    if (options.on_step) options.on_step(s.record);
    result.log.push_back(s.record);
    if (config.checkpoint_interval > 0 && !options.checkpoint_path.empty() && state.step % config.checkpoint_interval == 0) {
      save_checkpoint(options.checkpoint_path, state);
    }
  }
  result.state = std::move(state);
  return result;
}

inline TrainResult train(const EventStream& stream, const Trajectory& trajectory, const CameraIntrinsics& camera,
                         const TrainConfig& config, const TrainOptions& options = {}) {
  return train(stream, trajectory, initial_checkpoint(config, camera), options);
}

}  // namespace saenerf
