// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "saenerf/grad.hpp"
#include "saenerf/random.hpp"

using namespace saenerf;
using grad::Tape;
using grad::Var;

TEST(Grad, ForwardValues) {
  Tape tape;
  const Var x = tape.variable(2.0);
  const Var y = tape.variable(3.0);
  EXPECT_EQ((x * y).value, 6.0);
  EXPECT_EQ(grad::exp(tape.variable(0.0)).value, 1.0);
  const long double oracle = std::log1p(std::exp(10.0L));
  EXPECT_NEAR(grad::softplus(tape.variable(10.0)).value, static_cast<double>(oracle), 1e-12);
  EXPECT_NEAR(grad::softplus(tape.variable(10.0)).value, 10.0000454, 1e-7);
}

TEST(Grad, RecordAppendsOneNode) {
  Tape tape;
  const Var x = tape.variable(1.5);
  const std::size_t before = tape.size();
  const Var y = tape.record(grad::OpKind::exp, {x});
  EXPECT_EQ(tape.size(), before + 1);
  EXPECT_EQ(tape.value(static_cast<std::size_t>(y.id)), std::exp(1.5));
}

TEST(Grad, ProductAndExpGradients) {
  Tape tape;
  const Var x = tape.variable(2.0);
  const Var y = tape.variable(3.0);
  const auto g = tape.backward(x * y);
  EXPECT_EQ(g[x], 3.0);
  EXPECT_EQ(g[y], 2.0);

  Tape t2;
  const Var z = t2.variable(0.0);
  EXPECT_EQ(t2.backward(grad::exp(z))[z], 1.0);
}

TEST(Grad, LogPlusSquareGradient) {
  const std::vector<double> x = {0.5};
  const auto g = grad::gradient([](Tape&, std::span<const Var> p) { return grad::log(p[0]) + p[0] * p[0]; }, x);
  const double oracle = 1.0 / x[0] + 2.0 * x[0];
  EXPECT_NEAR(g[0], oracle, 1e-15);
  EXPECT_NEAR(g[0], 3.0, 1e-15);
}

TEST(Grad, Errors) {
  Tape tape;
  const Var x = tape.variable(1.0);
  const Var tiny = tape.variable(1e-13);
  try {
    (void)(x / tiny);
    FAIL() << "expected division guard";
  } catch (const std::domain_error& e) {
    EXPECT_STREQ(e.what(), "division guard");
  }
  try {
    (void)grad::log(tape.variable(0.0));
    FAIL() << "expected log domain";
  } catch (const std::domain_error& e) {
    EXPECT_STREQ(e.what(), "log domain");
  }
  EXPECT_THROW((void)grad::log(tape.variable(-1.0)), std::domain_error);

  Tape other;
  const Var foreign = other.variable(2.0) * other.variable(3.0);
  EXPECT_THROW((void)tape.backward(foreign), std::invalid_argument);
  EXPECT_THROW((void)tape.backward(Var(4.0)), std::invalid_argument);
  EXPECT_THROW((void)(x + foreign), std::invalid_argument);
}

TEST(Grad, ConstantsCarryNoNode) {
  const Var c(3.0);
  EXPECT_TRUE(c.is_constant());
  const Var folded = c * Var(2.0);
  EXPECT_TRUE(folded.is_constant());
  EXPECT_EQ(folded.value, 6.0);

  const std::vector<double> x = {1.0, 2.0};
  const auto g = grad::gradient([](Tape&, std::span<const Var>) { return Var(7.0); }, x);
  EXPECT_EQ(g, std::vector<double>({0.0, 0.0}));
}

TEST(Grad, AbsAndMaxSubgradients) {
  Tape tape;
  const Var z = tape.variable(0.0);
  EXPECT_EQ(tape.backward(grad::abs(z) + z * 0.0)[z], 0.0);
  const Var a = tape.variable(0.0);
  const Var relu = grad::max(a, Var(0.0));
  EXPECT_EQ(tape.backward(relu + a * 0.0)[a], 0.0);
}

TEST(Grad, GradCheckTrivial) {
  const std::vector<double> x = {1.0};
  EXPECT_LE(grad::grad_check([](Tape&, std::span<const Var> p) { return p[0] * p[0]; }, x, 1e-4), 1e-7);
  EXPECT_EQ(grad::grad_check([](Tape&, std::span<const Var>) { return Var(2.5); }, x, 1e-4), 0.0);
  EXPECT_THROW((void)grad::grad_check([](Tape&, std::span<const Var> p) { return p[0]; }, x, 0.0),
               std::invalid_argument);
}

// Uses every op kind in one smooth expression.
static Var mixed_expression(Tape&, std::span<const Var> p) {
  const Var a = grad::sigmoid(p[0] * p[1]) + grad::softplus(p[2] - p[3]);
  const Var b = grad::exp(-p[0] * p[0]) * grad::log(p[1] * p[1] + 1.0);
  const Var c = grad::dot(p.subspan(0, 2), p.subspan(2, 2)) / (p[3] * p[3] + 2.0);
  const Var d = grad::sqrt(p[2] * p[2] + 0.5) + grad::abs(p[0] + 10.0) + grad::max(p[1], p[1] + 1.0);
  const std::vector<Var> terms = {a, b, c, d};
  return grad::sum(terms);
}

TEST(Grad, FiniteDifferencesOnRandomDraws) {
  Rng rng(2024);
  for (int draw = 0; draw < 100; ++draw) {
    std::vector<double> x(4);
    for (double& v : x) v = uniform(rng, -1.5, 1.5);
    EXPECT_LE(grad::grad_check(mixed_expression, x, 1e-4), 1e-4) << "draw " << draw;
  }
}

TEST(Grad, Linearity) {
  Tape tape;
  const std::vector<Var> p = {tape.variable(0.3), tape.variable(-0.7), tape.variable(1.1), tape.variable(0.4)};
  const Var f = mixed_expression(tape, p);
  const Var g = grad::exp(p[0]) * p[3] + p[1] * p[2];
  const double a = 2.0;
  const double b = -0.5;
  const Var combo = a * f + b * g;
  const auto gf = tape.backward(f);
  const auto gg = tape.backward(g);
  const auto gc = tape.backward(combo);
  // Power-of-two weights keep the scaling exact; only summation order differs.
  for (const Var& v : p) EXPECT_DOUBLE_EQ(gc[v], a * gf[v] + b * gg[v]);
}

TEST(Grad, OffPathGradientIsZero) {
  Tape tape;
  const Var x = tape.variable(1.0);
  const Var y = tape.variable(2.0);
  const Var unused = grad::exp(y) * y;
  const Var f = x * x;
  const auto g = tape.backward(f);
  EXPECT_EQ(g[y], 0.0);
  EXPECT_EQ(g[unused], 0.0);
  EXPECT_EQ(g[x], 2.0);
}
