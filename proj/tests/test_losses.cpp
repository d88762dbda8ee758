// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "saenerf/losses.hpp"
#include "saenerf/scene.hpp"

using namespace saenerf;

namespace {

LossConfig mean_config() {
  LossConfig c;
  c.reduction = Reduction::mean;
  return c;
}

// Independent scalar oracle: mean over all i of (p_i / P - e_i / E)^2 with
// P, E the L1 norms over the pixels flagged in `in_den`.
double oracle_normalized(const std::vector<double>& p, const std::vector<int>& e, const std::vector<bool>& in_den) {
  double pd = 0.0;
  double ed = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!in_den[i]) continue;
    pd += std::fabs(p[i]);
    ed += std::fabs(static_cast<double>(e[i]));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] / pd - e[i] / ed;
    acc += d * d;
  }
  return acc / static_cast<double>(p.size());
}

double value(const std::optional<double>& v) {
  EXPECT_TRUE(v.has_value());
  return v.value_or(std::nan(""));
}

}  // namespace

TEST(Losses, ClassifyPixels) {
  const std::vector<int> e = {2, 0, -1};
  const std::vector<double> p = {0.1, 0.05, 0.2};
  const PixelMasks m = classify_pixels<double>(e, p);
  EXPECT_EQ(m.positive, std::vector<std::size_t>({0, 2}));
  EXPECT_EQ(m.negative, std::vector<std::size_t>({1}));
  EXPECT_EQ(m.consistent, std::vector<std::size_t>({0}));

  const std::vector<double> tie = {0.0, 0.05, -0.2};
  EXPECT_EQ(classify_pixels<double>(e, tie).consistent, std::vector<std::size_t>({2}));

  const std::vector<int> none = {0, 0, 0};
  const PixelMasks z = classify_pixels<double>(none, p);
  EXPECT_TRUE(z.positive.empty());
  EXPECT_TRUE(z.consistent.empty());
}

TEST(Losses, NormWorkedExamples) {
  const LossConfig c = mean_config();
  {
    const std::vector<double> p = {0.2, -0.2};
    const std::vector<int> e = {1, -1};
    EXPECT_NEAR(value(loss_norm<double>(e, p, c)), 0.0, 1e-15);
  }
  {
    const std::vector<double> p = {0.3, 0.1};
    const std::vector<int> e = {1, 1};
    const double oracle = oracle_normalized(p, e, {true, true});
    EXPECT_NEAR(oracle, 0.0625, 1e-12);
    EXPECT_NEAR(value(loss_norm<double>(e, p, c)), oracle, 1e-9);
    EXPECT_NEAR(value(loss_norm<double>(e, p, c)), 0.0625, 1e-9);
  }
}

TEST(Losses, NormMinusWorkedExample) {
  const LossConfig c = mean_config();
  const std::vector<double> p = {0.2, -0.1, 0.05};
  const std::vector<int> e = {1, 1, 0};
  const double oracle = oracle_normalized(p, e, {true, true, false});
  EXPECT_NEAR(oracle, 27.0 / 108.0, 1e-12);
  EXPECT_NEAR(value(loss_norm_minus<double>(e, p, c)), oracle, 1e-9);
  EXPECT_NEAR(value(loss_norm_minus<double>(e, p, c)), 0.25, 1e-9);

  // A negative pixel changes the numerator only.
  std::vector<double> q = p;
  q[2] = 0.3;
  EXPECT_NE(value(loss_norm_minus<double>(e, q, c)), value(loss_norm_minus<double>(e, p, c)));
}

TEST(Losses, NormPlusWorkedExampleAndComposite) {
  LossConfig c = mean_config();
  const std::vector<double> p = {0.2, -0.1, 0.05};
  const std::vector<int> e = {1, 1, 0};
  const double oracle = oracle_normalized(p, e, {true, false, false});
  EXPECT_NEAR(oracle, (0.0 + 2.25 + 0.0625) / 3.0, 1e-12);
  EXPECT_NEAR(value(loss_norm_plus<double>(e, p, c)), oracle, 1e-9);
  EXPECT_NEAR(value(loss_norm_plus<double>(e, p, c)), 0.770833, 1e-6);

  c.lambda = 0.5;
  c.lambda0 = 0.0;
  const auto b = composite_loss<double>(e, p, c);
  const double zero_plus = 0.05 / (0.3 + c.eps_div);
  EXPECT_NEAR(value(b.total), oracle + 0.5 * zero_plus, 1e-9);
  EXPECT_NEAR(value(b.total), 0.854167, 1e-6);
  EXPECT_FALSE(b.fell_back);
}

TEST(Losses, ZeroLosses) {
  const LossConfig c = mean_config();
  const std::vector<int> e = {0, 0, 1, -1};
  const std::vector<double> p = {0.1, -0.3, 0.4, -0.4};
  EXPECT_NEAR(loss_zero_minus<double>(e, p), 0.4, 1e-15);
  EXPECT_NEAR(value(loss_zero_plus<double>(e, p, c)), 0.4 / (0.8 + c.eps_div), 1e-15);
  EXPECT_NEAR(value(loss_zero_plus<double>(e, p, c)), 0.5, 1e-8);

  const std::vector<double> clean = {0.0, 0.0, 0.4, -0.4};
  EXPECT_EQ(loss_zero_minus<double>(e, clean), 0.0);
  EXPECT_EQ(value(loss_zero_plus<double>(e, clean, c)), 0.0);

  const std::vector<int> pos_only = {1, -1};
  const std::vector<double> pp = {0.2, -0.1};
  EXPECT_EQ(loss_zero_minus<double>(pos_only, pp), 0.0);

  const std::vector<int> neg_only = {0, 0};
  EXPECT_FALSE(loss_zero_plus<double>(neg_only, pp, c).has_value());
}

TEST(Losses, SkipsAndFallback) {
  const LossConfig c = mean_config();
  const std::vector<int> zeros = {0, 0};
  const std::vector<double> p = {0.1, 0.2};
  EXPECT_FALSE(loss_norm<double>(zeros, p, c).has_value());
  EXPECT_FALSE(loss_norm_minus<double>(zeros, p, c).has_value());
  EXPECT_FALSE(composite_loss<double>(zeros, p, c).total.has_value());

  const std::vector<int> e = {1, -1};
  const std::vector<double> flat = {0.0, 0.0};
  EXPECT_FALSE(loss_norm<double>(e, flat, c).has_value());

  // All signs wrong: norm+ falls back to norm-.
  const std::vector<double> wrong = {-0.2, 0.3};
  EXPECT_FALSE(loss_norm_plus<double>(e, wrong, c).has_value());
  const auto b = composite_loss<double>(e, wrong, c);
  EXPECT_TRUE(b.fell_back);
  EXPECT_NEAR(value(b.normalization), value(loss_norm_minus<double>(e, wrong, c)), 0.0);
}

TEST(Losses, CompositeWithZeroWeightsEqualsVariant) {
  for (Reduction r : {Reduction::mean, Reduction::sum}) {
    for (NormVariant v : {NormVariant::norm, NormVariant::norm_minus, NormVariant::norm_plus}) {
      LossConfig c;
      c.reduction = r;
      c.variant = v;
      c.lambda = 0.0;
      c.lambda0 = 0.0;
      const std::vector<int> e = {2, -1, 0, 1, 0};
      const std::vector<double> p = {0.4, -0.1, 0.02, -0.05, -0.03};
      const auto b = composite_loss<double>(e, p, c);
      EXPECT_EQ(value(b.total), value(b.normalization));
    }
  }
}

TEST(Losses, SumReductionIsMeanTimesN) {
  LossConfig sum;
  LossConfig mean = mean_config();
  const std::vector<int> e = {2, -1, 0, 1, 0};
  const std::vector<double> p = {0.4, -0.1, 0.02, -0.05, -0.03};
  EXPECT_NEAR(value(loss_norm_plus<double>(e, p, sum)), 5.0 * value(loss_norm_plus<double>(e, p, mean)), 1e-15);
}

TEST(Losses, ScaleInvarianceAndZeroAtTruth) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> e(40);
    std::vector<double> p(40);
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = static_cast<int>(uniform_index(rng, 7)) - 3;
      p[i] = uniform(rng, -1.0, 1.0);
    }
    e[0] = 2;
    p[0] = 0.5;
    for (Reduction r : {Reduction::mean, Reduction::sum}) {
      LossConfig c;
      c.reduction = r;
      const double n0 = value(loss_norm<double>(e, p, c));
      const double m0 = value(loss_norm_minus<double>(e, p, c));
      const double p0 = value(loss_norm_plus<double>(e, p, c));
      const double z0 = value(loss_zero_plus<double>(e, p, c));
      for (double k : {0.1, 1.0, 3.0}) {
        std::vector<double> q = p;
        for (double& v : q) v *= k;
        EXPECT_NEAR(value(loss_norm<double>(e, q, c)), n0, 1e-9);
        EXPECT_NEAR(value(loss_norm_minus<double>(e, q, c)), m0, 1e-9);
        EXPECT_NEAR(value(loss_norm_plus<double>(e, q, c)), p0, 1e-9);
        // eps_div in the denominator limits invariance to O(eps_div / k).
        EXPECT_NEAR(value(loss_zero_plus<double>(e, q, c)), z0, 1e-6);
      }
    }

    const double threshold = uniform(rng, 0.1, 0.5);
    std::vector<double> truth(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) truth[i] = threshold * e[i];
    LossConfig c;
    c.lambda0 = 0.5;
    for (NormVariant v : {NormVariant::norm, NormVariant::norm_minus, NormVariant::norm_plus}) {
      c.variant = v;
      EXPECT_NEAR(value(composite_loss<double>(e, truth, c).total), 0.0, 1e-12);
    }
    EXPECT_EQ(loss_zero_minus<double>(e, truth), 0.0);
    EXPECT_NEAR(taopet(e, truth)->mean, threshold, 1e-12);
    EXPECT_EQ(poap(e, truth).positives, 1.0);
  }
}

TEST(Losses, Diagnostics) {
  const std::vector<int> e = {2, 1};
  const std::vector<double> p = {0.5, 0.2};
  const auto t = taopet(e, p);
  ASSERT_TRUE(t.has_value());
  EXPECT_NEAR(t->mean, 0.225, 1e-15);
  EXPECT_NEAR(t->min, 0.2, 1e-15);
  EXPECT_NEAR(t->max, 0.25, 1e-15);

  const std::vector<int> single = {4};
  const std::vector<double> sp = {0.6};
  EXPECT_NEAR(taopet(single, sp)->mean, 0.15, 1e-15);
  const std::vector<int> none = {0};
  EXPECT_FALSE(taopet(none, sp).has_value());

  const std::vector<int> e4 = {1, -1, 1, 0};
  const std::vector<double> p4 = {0.1, -0.1, 0.1, 0.3};
  EXPECT_EQ(poap(e4, p4).all, 0.75);
  EXPECT_EQ(poap(e4, p4).positives, 1.0);
  const std::vector<double> bad = {-0.1, 0.1, -0.1, 0.0};
  EXPECT_EQ(poap(e4, bad).all, 0.0);
}

TEST(Losses, NegativeCount) {
  EXPECT_EQ(negative_count(1024, 0.05), 52u);
  EXPECT_EQ(static_cast<std::size_t>(std::ceil(0.05 * 1024)), 52u);
  EXPECT_EQ(negative_count(1024, 0.0), 0u);
  EXPECT_EQ(negative_count(20, 0.05), 1u);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> e(12);
    std::vector<double> p(12);
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = static_cast<int>(uniform_index(rng, 5)) - 2;
      p[i] = uniform(rng, 0.05, 0.6) * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
    }
    e[0] = 1;
    p[0] = 0.3;
    for (NormVariant v : {NormVariant::norm, NormVariant::norm_minus, NormVariant::norm_plus}) {
      for (InnerNorm inner : {InnerNorm::l1, InnerNorm::l2}) {
        LossConfig c;
        c.variant = v;
        c.inner = inner;
        c.lambda0 = 0.25;
        auto f = [&](grad::Tape&, std::span<const grad::Var> x) { return *composite_loss<grad::Var>(e, x, c).total; };
        EXPECT_LE(grad::grad_check(f, p, 1e-6), 1e-4);
      }
    }
  }
}

TEST(Losses, SampleWindowBatch) {
  // Synthetic stream: events on the left half only.
  EventStream s;
  s.header = {8, 4, 0.25, BayerPattern::rggb, 1000, 0.0};
  for (std::uint64_t t = 0; t < 1000; t += 10) {
    s.events.push_back({t, static_cast<std::uint16_t>(t / 10 % 4), static_cast<std::uint16_t>(t / 40 % 4), 1});
  }
  Rng rng(3);
  const auto pixels = sample_window_pixels(s, 100, 600, 40, 0.05, rng);
  ASSERT_TRUE(pixels.has_value());
  ASSERT_EQ(pixels->size(), 40u);
  const std::vector<int> dense = accumulate(s, 100, 600).dense();
  std::size_t negatives = 0;
  for (const PixelSample& px : *pixels) {
    EXPECT_EQ(px.polarity, dense[static_cast<std::size_t>(px.y) * 8 + px.x]);
    EXPECT_EQ(px.channel, bayer_channel(px.x, px.y, BayerPattern::rggb));
    if (px.polarity == 0) ++negatives;
  }
  EXPECT_EQ(negatives, 2u);

  Rng r0(3);
  const auto none = sample_window_pixels(s, 100, 600, 40, 0.0, r0);
  for (const PixelSample& px : *none) EXPECT_NE(px.polarity, 0);

  EventStream empty = s;
  empty.events.clear();
  EXPECT_FALSE(sample_window_pixels(empty, 100, 600, 40, 0.05, r0).has_value());
}

TEST(Losses, StepRecordJsonSchema) {
  StepRecord r;
  r.step = 5;
  r.loss_total = 0.5;
  r.poap = 0.25;
  const auto j = to_json(r);
  for (const char* key : {"step", "loss_total", "loss_norm", "loss_zero_plus", "loss_zero_minus", "taopet_mean", "poap",
                          "poap_pos", "n_pos", "n_neg", "n_consistent"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  const StepRecord back = step_record_from_json(j);
  EXPECT_EQ(back.step, 5u);
  EXPECT_EQ(back.loss_total, 0.5);
  EXPECT_FALSE(back.loss_norm.has_value());
}
