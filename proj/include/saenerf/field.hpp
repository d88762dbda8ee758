// SPDX-License-Identifier: Apache-2.0
#pragma once

// Radiance field F(x, d) -> (sigma, rgb): sinusoidal positional encoding
// followed by a smooth-ReLU MLP trunk on position only, a softplus density head,
// and a sigmoid color head that additionally sees the encoded view
// direction.
//
// Two evaluation routes share one parameter layout:
//   * field_eval<Scalar> works for double and grad::Var, one point at a time;
//   * FieldBatch evaluates many points with dense matrix products and
//     back-propagates analytically. Training uses this one.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "saenerf/grad.hpp"
#include "saenerf/random.hpp"

namespace saenerf {

using Vec3 = Eigen::Vector3d;

struct FieldArch {
  int depth = 4;       // hidden layers in the position trunk
  int width = 128;     // hidden units per layer
  int n_freq_pos = 6;  // encoding octaves for position
  int n_freq_dir = 2;  // encoding octaves for direction

  int pos_features() const { return 3 + 6 * n_freq_pos; }
  int dir_features() const { return 3 + 6 * n_freq_dir; }
  bool operator==(const FieldArch&) const = default;
};

/// One affine layer inside the flat parameter vector: `out x in` row-major
/// weights at `offset`, followed by `out` biases.
struct LayerShape {
  int in = 0;
  int out = 0;
  std::size_t offset = 0;

  std::size_t weight_count() const { return static_cast<std::size_t>(in) * out; }
  std::size_t bias_offset() const { return offset + weight_count(); }
  std::size_t end() const { return bias_offset() + static_cast<std::size_t>(out); }
};

/// Layers in order: `depth` trunk layers, the density head, the color head.
struct FieldLayout {
  std::vector<LayerShape> layers;
  std::size_t count = 0;

  const LayerShape& trunk(int i) const { return layers[static_cast<std::size_t>(i)]; }
  const LayerShape& density_head() const { return layers[layers.size() - 2]; }
  const LayerShape& color_head() const { return layers.back(); }
};

inline FieldLayout make_layout(const FieldArch& arch) {
  if (arch.depth < 1 || arch.width < 1) throw std::invalid_argument("field: width and depth must be >= 1");
  if (arch.n_freq_pos < 0 || arch.n_freq_dir < 0) throw std::invalid_argument("field: negative frequency count");
  FieldLayout layout;
  std::size_t offset = 0;
  auto add = [&](int in, int out) {
    layout.layers.push_back({in, out, offset});
    offset = layout.layers.back().end();
  };
  add(arch.pos_features(), arch.width);
  for (int i = 1; i < arch.depth; ++i) add(arch.width, arch.width);
  add(arch.width, 1);
  add(arch.width + arch.dir_features(), 3);
  layout.count = offset;
  return layout;
}

struct FieldParams {
  FieldArch arch;
  std::vector<double> values;

  FieldLayout layout() const { return make_layout(arch); }

  void validate() const {
    if (values.size() != make_layout(arch).count) throw std::invalid_argument("field: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw std::domain_error("field: non-finite parameter at index " + std::to_string(i));
      }
    }
  }
};

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
inline FieldParams init_field(std::uint64_t seed, const FieldArch& arch) {
  const FieldLayout layout = make_layout(arch);
  FieldParams params{arch, std::vector<double>(layout.count, 0.0)};
  Rng rng(seed);
  for (const LayerShape& layer : layout.layers) {
    const double a = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t i = 0; i < layer.weight_count(); ++i) params.values[layer.offset + i] = uniform(rng, -a, a);
  }
  return params;
}

/// [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(n-1) pi v), cos(2^(n-1) pi v)]
inline void positional_encode(const Vec3& v, int n_freq, std::span<double> out) {
  if (n_freq < 0) throw std::invalid_argument("positional_encode: negative frequency count");
  if (out.size() != static_cast<std::size_t>(3 + 6 * n_freq)) {
    throw std::invalid_argument("positional_encode: output length mismatch");
  }
  out[0] = v.x();
  out[1] = v.y();
  out[2] = v.z();
  double scale = std::numbers::pi;
  for (int k = 0; k < n_freq; ++k) {
    const std::size_t base = 3 + 6 * static_cast<std::size_t>(k);
    for (int c = 0; c < 3; ++c) {
      out[base + c] = std::sin(scale * v[c]);
      out[base + 3 + c] = std::cos(scale * v[c]);
    }
    scale *= 2.0;
  }
}

inline std::vector<double> positional_encode(const Vec3& v, int n_freq) {
  std::vector<double> out(static_cast<std::size_t>(3 + 6 * std::max(n_freq, 0)));
  positional_encode(v, n_freq, out);
  return out;
}

template <typename Scalar>
struct FieldOutputT {
  Scalar sigma{};
  std::array<Scalar, 3> color{};
};

using FieldOutput = FieldOutputT<double>;

/// Trunk activation softplus(b z) / b. Close to ReLU at the scale of the
/// activations but smooth, so finite-difference checks see no kinks.
inline constexpr double kTrunkSharpness = 10.0;

namespace detail {

template <typename Scalar>
Scalar smooth_relu(const Scalar& z) {
  return grad::softplus(z * kTrunkSharpness) * (1.0 / kTrunkSharpness);
}

template <typename Scalar>
std::vector<Scalar> affine(std::span<const Scalar> params, const LayerShape& layer, std::span<const Scalar> input) {
  std::vector<Scalar> out(static_cast<std::size_t>(layer.out));
  const auto in = static_cast<std::size_t>(layer.in);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const auto row = params.subspan(layer.offset + j * in, in);
    out[j] = grad::dot(row, input) + params[layer.bias_offset() + j];
  }
  return out;
}

}  // namespace detail

inline void check_direction(const Vec3& d) {
  if (std::abs(d.norm() - 1.0) > 1e-6) throw std::invalid_argument("field: view direction must be unit length");
}

/// Generic single-point evaluation; Scalar is double or grad::Var.
template <typename Scalar>
FieldOutputT<Scalar> field_eval(const FieldArch& arch, const FieldLayout& layout, std::span<const Scalar> params,
                                const Vec3& x, const Vec3& d) {
  check_direction(d);
  if (params.size() != layout.count) throw std::invalid_argument("field: parameter count mismatch");
  const std::vector<double> enc_pos = positional_encode(x, arch.n_freq_pos);
  std::vector<Scalar> h(enc_pos.begin(), enc_pos.end());
  for (int l = 0; l < arch.depth; ++l) {
    std::vector<Scalar> z = detail::affine<Scalar>(params, layout.trunk(l), h);
    for (Scalar& v : z) v = detail::smooth_relu(v);
    h = std::move(z);
  }

  FieldOutputT<Scalar> out;
  out.sigma = grad::softplus(detail::affine<Scalar>(params, layout.density_head(), h)[0]);

  const std::vector<double> enc_dir = positional_encode(d, arch.n_freq_dir);
  h.insert(h.end(), enc_dir.begin(), enc_dir.end());
  const std::vector<Scalar> raw = detail::affine<Scalar>(params, layout.color_head(), h);
  for (int c = 0; c < 3; ++c) out.color[static_cast<std::size_t>(c)] = grad::sigmoid(raw[static_cast<std::size_t>(c)]);
  return out;
}

inline FieldOutput field_eval(const FieldParams& params, const Vec3& x, const Vec3& d) {
  params.validate();
  const FieldLayout layout = params.layout();
  return field_eval<double>(params.arch, layout, std::span<const double>(params.values), x, d);
}

/// Batched evaluation over K points with cached activations for the analytic
/// backward pass. Columns are points.
class FieldBatch {
 public:
  using Matrix = Eigen::MatrixXd;
  using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  void forward(const FieldParams& params, const FieldLayout& layout, const Eigen::Matrix3Xd& positions,
               const Eigen::Matrix3Xd& directions) {
    const FieldArch& arch = params.arch;
    const Eigen::Index k = positions.cols();
    const double* theta = params.values.data();

    activations_.resize(static_cast<std::size_t>(arch.depth) + 1);
    Matrix& enc = activations_[0];
    enc.resize(arch.pos_features(), k);
    dir_enc_.resize(arch.dir_features(), k);
    for (Eigen::Index i = 0; i < k; ++i) {
      positional_encode(positions.col(i), arch.n_freq_pos, std::span<double>(enc.col(i).data(), enc.rows()));
      positional_encode(directions.col(i), arch.n_freq_dir, std::span<double>(dir_enc_.col(i).data(), dir_enc_.rows()));
    }

    // Reductions run on owned copies: Eigen kernels on unaligned maps can
    // round differently depending on the heap address.
    weights_.resize(layout.layers.size());
    for (std::size_t i = 0; i < layout.layers.size(); ++i) weights_[i] = weights(theta, layout.layers[i]);

    for (int l = 0; l < arch.depth; ++l) {
      const LayerShape& s = layout.trunk(l);
      Matrix& next = activations_[static_cast<std::size_t>(l) + 1];
      next.noalias() = trunk_weights(l) * activations_[static_cast<std::size_t>(l)];
      next.colwise() += bias(theta, s);
      next = next.unaryExpr([](double v) { return detail::smooth_relu(v); });
    }
    const Matrix& top = activations_.back();

    const LayerShape& dh = layout.density_head();
    density_raw_.noalias() = weights_[weights_.size() - 2] * top;
    density_raw_.array() += theta[dh.bias_offset()];
    sigma_.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) sigma_[i] = grad::softplus(density_raw_(0, i));

    const LayerShape& ch = layout.color_head();
    const Eigen::Index w = top.rows();
    const RowMatrix& wc = weights_.back();
    color_.noalias() = wc.leftCols(w) * top;
    color_.noalias() += wc.rightCols(dir_enc_.rows()) * dir_enc_;
    color_.colwise() += bias(theta, ch);
    color_ = color_.unaryExpr([](double v) { return grad::sigmoid(v); });
  }

  const Eigen::VectorXd& sigma() const { return sigma_; }
  const Matrix& color() const { return color_; }

  /// Accumulate d(loss)/d(theta) into `grad` given d(loss)/d(sigma) and
  /// d(loss)/d(color) for every point of the last forward call.
  void backward(const FieldParams& params, const FieldLayout& layout, const Eigen::VectorXd& d_sigma,
                const Matrix& d_color, std::span<double> grad) {
    const FieldArch& arch = params.arch;
    const Matrix& top = activations_.back();
    const Eigen::Index w = top.rows();

    // Color head: sigmoid'(z) = c (1 - c).
    const Matrix d_color_raw = d_color.cwiseProduct(color_.cwiseProduct((1.0 - color_.array()).matrix()));
    const LayerShape& ch = layout.color_head();
    {
      RowMatrix gw(ch.out, ch.in);
      gw.leftCols(w).noalias() = d_color_raw * top.transpose();
      gw.rightCols(dir_enc_.rows()).noalias() = d_color_raw * dir_enc_.transpose();
      weights_mut(grad, ch) += gw;
      const Eigen::VectorXd gb = d_color_raw.rowwise().sum();
      bias_mut(grad, ch) += gb;
    }
    Matrix d_hidden = weights_.back().leftCols(w).transpose() * d_color_raw;

    // Density head: softplus'(z) = sigmoid(z).
    Eigen::RowVectorXd d_density_raw(d_sigma.size());
    for (Eigen::Index i = 0; i < d_sigma.size(); ++i) d_density_raw[i] = d_sigma[i] * grad::sigmoid(density_raw_(0, i));
    const LayerShape& dh = layout.density_head();
    const RowMatrix gd = d_density_raw * top.transpose();
    weights_mut(grad, dh) += gd;
    grad[dh.bias_offset()] += d_density_raw.sum();
    d_hidden.noalias() += weights_[weights_.size() - 2].transpose() * d_density_raw;

    for (int l = arch.depth - 1; l >= 0; --l) {
      const Matrix& out = activations_[static_cast<std::size_t>(l) + 1];
      const Matrix& in = activations_[static_cast<std::size_t>(l)];
      // d/dz softplus(b z) / b = sigmoid(b z) = 1 - exp(-b out).
      const Matrix d_pre = (d_hidden.array() * (1.0 - (-kTrunkSharpness * out.array()).exp())).matrix();
      const LayerShape& s = layout.trunk(l);
      const RowMatrix gw = d_pre * in.transpose();
      weights_mut(grad, s) += gw;
      const Eigen::VectorXd gb = d_pre.rowwise().sum();
      bias_mut(grad, s) += gb;
      if (l > 0) d_hidden.noalias() = trunk_weights(l).transpose() * d_pre;
    }
  }

 private:
  static RowMajorMap weights(const double* theta, const LayerShape& s) { return {theta + s.offset, s.out, s.in}; }
  static Eigen::Map<const Eigen::VectorXd> bias(const double* theta, const LayerShape& s) {
    return {theta + s.bias_offset(), s.out};
  }
  static RowMajorMutMap weights_mut(std::span<double> g, const LayerShape& s) { return {g.data() + s.offset, s.out, s.in}; }
  static Eigen::Map<Eigen::VectorXd> bias_mut(std::span<double> g, const LayerShape& s) {
    return {g.data() + s.bias_offset(), s.out};
  }

  const RowMatrix& trunk_weights(int l) const { return weights_[static_cast<std::size_t>(l)]; }

  std::vector<RowMatrix> weights_;
  std::vector<Matrix> activations_;
  Matrix dir_enc_;
  Matrix density_raw_;
  Eigen::VectorXd sigma_;
  Matrix color_;
};

}  // namespace saenerf
