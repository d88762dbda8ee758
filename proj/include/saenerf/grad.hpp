// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation over scalar expressions.
//
// A Tape is a Wengert list: every recorded node stores its forward value and
// the local partial derivative with respect to each non-constant operand.
// Operands always precede the node that consumes them, so a single reverse
// sweep over the node sequence accumulates adjoints.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saenerf::grad {

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  exp,
  log,
  neg,
  abs,
  max,
  sigmoid,
  softplus,
  sqrt,
  dot,
  sum,
};

/// Refuse raw division by denominators smaller than this. Losses apply their
/// own (much larger) guard before ever dividing.
inline constexpr double kDivisionGuard = 1e-12;

class Tape;

/// Value flowing through a recorded expression. Constants carry no node id
/// and never receive gradient.
struct Var {
  double value = 0.0;
  std::int32_t id = -1;
  Tape* tape = nullptr;

  constexpr Var() = default;
  constexpr Var(double v) : value(v) {}  // NOLINT: implicit constant lift
  constexpr Var(double v, std::int32_t node, Tape* owner) : value(v), id(node), tape(owner) {}

  constexpr bool is_constant() const { return id < 0; }
};

/// Adjoints produced by a backward sweep, indexed by node id.
class Gradient {
 public:
  Gradient() = default;
  explicit Gradient(std::vector<double> adjoints) : adjoints_(std::move(adjoints)) {}

  double operator[](const Var& v) const {
    if (v.is_constant()) return 0.0;
    return at(static_cast<std::size_t>(v.id));
  }
  double at(std::size_t id) const {
    if (id >= adjoints_.size()) throw std::out_of_range("gradient: node id out of range");
    return adjoints_[id];
  }
  std::size_t size() const { return adjoints_.size(); }
  std::span<const double> adjoints() const { return adjoints_; }

 private:
  std::vector<double> adjoints_;
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// New independent variable (a leaf).
  Var variable(double value) {
    nodes_.push_back({OpKind::leaf, static_cast<std::uint32_t>(edges_.size()),
                      static_cast<std::uint32_t>(edges_.size()), value});
    return {value, static_cast<std::int32_t>(nodes_.size() - 1), this};
  }

  /// Append one node applying `op` to `operands`. If every operand is a
  /// constant the result is folded to a constant and nothing is appended.
  Var record(OpKind op, std::span<const Var> operands) {
    check_operands(op, operands);
    const std::size_t n = operands.size();
    double value = 0.0;
    partials_.assign(n, 0.0);
    switch (op) {
      case OpKind::leaf:
        throw std::invalid_argument("record: use Tape::variable for leaves");
      case OpKind::add:
        value = operands[0].value + operands[1].value;
        partials_[0] = partials_[1] = 1.0;
        break;
      case OpKind::sub:
        value = operands[0].value - operands[1].value;
        partials_[0] = 1.0;
        partials_[1] = -1.0;
        break;
      case OpKind::mul:
        value = operands[0].value * operands[1].value;
        partials_[0] = operands[1].value;
        partials_[1] = operands[0].value;
        break;
      case OpKind::div: {
        const double den = operands[1].value;
        if (!(std::abs(den) >= kDivisionGuard)) throw std::domain_error("division guard");
        value = operands[0].value / den;
        partials_[0] = 1.0 / den;
        partials_[1] = -value / den;
        break;
      }
      case OpKind::exp:
        value = std::exp(operands[0].value);
        partials_[0] = value;
        break;
      case OpKind::log:
        if (!(operands[0].value > 0.0)) throw std::domain_error("log domain");
        value = std::log(operands[0].value);
        partials_[0] = 1.0 / operands[0].value;
        break;
      case OpKind::neg:
        value = -operands[0].value;
        partials_[0] = -1.0;
        break;
      case OpKind::abs: {
        const double x = operands[0].value;
        value = std::abs(x);
        // Subgradient 0 at the kink.
        partials_[0] = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        break;
      }
      case OpKind::max:
        // Ties resolve to the second operand, so max(x, 0) has slope 0 at 0.
        if (operands[0].value > operands[1].value) {
          value = operands[0].value;
          partials_[0] = 1.0;
        } else {
          value = operands[1].value;
          partials_[1] = 1.0;
        }
        break;
      case OpKind::sigmoid:
        value = detail::sigmoid(operands[0].value);
        partials_[0] = value * (1.0 - value);
        break;
      case OpKind::softplus:
        value = detail::softplus(operands[0].value);
        partials_[0] = detail::sigmoid(operands[0].value);
        break;
      case OpKind::sqrt:
        if (!(operands[0].value > 0.0)) throw std::domain_error("sqrt domain");
        value = std::sqrt(operands[0].value);
        partials_[0] = 0.5 / value;
        break;
      case OpKind::dot: {
        const std::size_t half = n / 2;
        for (std::size_t i = 0; i < half; ++i) {
          value += operands[i].value * operands[half + i].value;
          partials_[i] = operands[half + i].value;
          partials_[half + i] = operands[i].value;
        }
        break;
      }
      case OpKind::sum:
        for (std::size_t i = 0; i < n; ++i) {
          value += operands[i].value;
          partials_[i] = 1.0;
        }
        break;
    }

    bool any_variable = false;
    for (const Var& v : operands) any_variable = any_variable || !v.is_constant();
    if (!any_variable) return Var(value);

    const auto begin = static_cast<std::uint32_t>(edges_.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (operands[i].is_constant()) continue;
      edges_.push_back({operands[i].id, partials_[i]});
    }
    nodes_.push_back({op, begin, static_cast<std::uint32_t>(edges_.size()), value});
    return {value, static_cast<std::int32_t>(nodes_.size() - 1), this};
  }

  Var record(OpKind op, std::initializer_list<Var> operands) {
    return record(op, std::span<const Var>(operands.begin(), operands.size()));
  }

  /// Adjoint of `output` with respect to every node on the tape.
  Gradient backward(const Var& output) const {
    if (output.tape != this || output.is_constant() ||
        static_cast<std::size_t>(output.id) >= nodes_.size()) {
      throw std::invalid_argument("backward: output not on tape");
    }
    std::vector<double> adjoint(nodes_.size(), 0.0);
    adjoint[static_cast<std::size_t>(output.id)] = 1.0;
    for (std::size_t k = static_cast<std::size_t>(output.id) + 1; k-- > 0;) {
      const double a = adjoint[k];
      if (a == 0.0) continue;
      const Node& node = nodes_[k];
      for (std::uint32_t e = node.edge_begin; e < node.edge_end; ++e) {
        adjoint[static_cast<std::size_t>(edges_[e].target)] += a * edges_[e].partial;
      }
    }
    return Gradient(std::move(adjoint));
  }

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).op; }
  double value(std::size_t id) const { return nodes_.at(id).value; }

  void clear() {
    nodes_.clear();
    edges_.clear();
  }

 private:
  struct Node {
    OpKind op;
    std::uint32_t edge_begin;
    std::uint32_t edge_end;
    double value;
  };
  struct Edge {
    std::int32_t target;
    double partial;
  };

  void check_operands(OpKind op, std::span<const Var> operands) const {
    std::size_t expected = 0;
    switch (op) {
      case OpKind::add:
      case OpKind::sub:
      case OpKind::mul:
      case OpKind::div:
      case OpKind::max:
        expected = 2;
        break;
      case OpKind::dot:
        if (operands.size() % 2 != 0) throw std::invalid_argument("record: dot needs an even operand count");
        break;
      case OpKind::sum:
      case OpKind::leaf:
        break;
      default:
        expected = 1;
    }
    if (expected != 0 && operands.size() != expected) {
      throw std::invalid_argument("record: wrong operand count");
    }
    for (const Var& v : operands) {
      if (!v.is_constant() && v.tape != this) throw std::invalid_argument("record: operand from another tape");
      if (!std::isfinite(v.value)) throw std::domain_error("record: non-finite operand");
    }
  }

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<double> partials_;
};

// Operator overloads. A binary op records on whichever operand owns a tape.

namespace detail {
inline Tape* owner(const Var& a, const Var& b) { return a.tape != nullptr ? a.tape : b.tape; }

inline Var unary(OpKind op, const Var& a) {
  if (a.tape == nullptr) {
    Tape scratch;
    return scratch.record(op, {a});
  }
  return a.tape->record(op, {a});
}

inline Var binary(OpKind op, const Var& a, const Var& b) {
  Tape* t = owner(a, b);
  if (t == nullptr) {
    Tape scratch;
    return scratch.record(op, {a, b});
  }
  return t->record(op, {a, b});
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(OpKind::add, a, b); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(OpKind::sub, a, b); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary(OpKind::mul, a, b); }
inline Var operator/(const Var& a, const Var& b) { return detail::binary(OpKind::div, a, b); }
inline Var operator-(const Var& a) { return detail::unary(OpKind::neg, a); }
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var exp(const Var& a) { return detail::unary(OpKind::exp, a); }
inline Var log(const Var& a) { return detail::unary(OpKind::log, a); }
inline Var abs(const Var& a) { return detail::unary(OpKind::abs, a); }
inline Var sqrt(const Var& a) { return detail::unary(OpKind::sqrt, a); }
inline Var sigmoid(const Var& a) { return detail::unary(OpKind::sigmoid, a); }
inline Var softplus(const Var& a) { return detail::unary(OpKind::softplus, a); }
inline Var max(const Var& a, const Var& b) { return detail::binary(OpKind::max, a, b); }

inline double sigmoid(double x) { return detail::sigmoid(x); }
inline double softplus(double x) { return detail::softplus(x); }

/// Sum of elementwise products as a single node.
inline Var dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  std::vector<Var> operands;
  operands.reserve(a.size() * 2);
  operands.insert(operands.end(), a.begin(), a.end());
  operands.insert(operands.end(), b.begin(), b.end());
  Tape* t = nullptr;
  for (const Var& v : operands) t = t != nullptr ? t : v.tape;
  if (t == nullptr) {
    Tape scratch;
    return scratch.record(OpKind::dot, operands);
  }
  return t->record(OpKind::dot, operands);
}

inline Var sum(std::span<const Var> terms) {
  Tape* t = nullptr;
  for (const Var& v : terms) t = t != nullptr ? t : v.tape;
  if (t == nullptr) {
    Tape scratch;
    return scratch.record(OpKind::sum, terms);
  }
  return t->record(OpKind::sum, terms);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double sum(std::span<const double> terms) {
  double acc = 0.0;
  for (double v : terms) acc += v;
  return acc;
}

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value; }

/// Function of a parameter vector recorded onto a tape.
using ExpressionBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Gradient of `f` at `x` by one backward sweep.
inline std::vector<double> gradient(const ExpressionBuilder& f, std::span<const double> x, double* value = nullptr) {
  Tape tape;
  std::vector<Var> params;
  params.reserve(x.size());
  for (double xi : x) params.push_back(tape.variable(xi));
  const Var out = f(tape, params);
  if (!std::isfinite(out.value)) throw std::domain_error("gradient: non-finite forward value");
  if (value != nullptr) *value = out.value;
  std::vector<double> g(x.size(), 0.0);
  if (out.is_constant()) return g;
  const Gradient adj = tape.backward(out);
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = adj[params[i]];
  return g;
}

/// Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|), with central
/// differences of step h.
inline double grad_check(const ExpressionBuilder& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  const std::vector<double> analytic = gradient(f, x);
  auto eval = [&](std::span<const double> at) {
    Tape tape;
    std::vector<Var> params;
    params.reserve(at.size());
    for (double v : at) params.push_back(tape.variable(v));
    const double v = f(tape, params).value;
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite forward value");
    return v;
  };
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace saenerf::grad
