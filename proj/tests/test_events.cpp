// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "saenerf/events.hpp"

using namespace saenerf;

namespace {

std::vector<LogFrame> single_pixel(std::initializer_list<double> values) {
  std::vector<LogFrame> frames;
  double t = 0.0;
  for (double v : values) {
    frames.push_back({t, {v}});
    t += 0.1;
  }
  return frames;
}

EventStream random_stream(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  EventStream s;
  s.header = {640, 480, 0.2, BayerPattern::rggb, 10'000'000, 0.1};
  s.events.resize(count);
  for (Event& e : s.events) {
    e.t = uniform_index(rng, s.header.duration_us);
    e.x = static_cast<std::uint16_t>(uniform_index(rng, 640));
    e.y = static_cast<std::uint16_t>(uniform_index(rng, 480));
    e.p = uniform_index(rng, 2) == 0 ? std::int8_t{-1} : std::int8_t{1};
  }
  std::sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("saenerf_test_" + name)).string();
}

}  // namespace

TEST(Events, ConstantFramesEmitNothing) {
  Rng rng(1);
  const auto frames = single_pixel({0.3, 0.3, 0.3, 0.3});
  EXPECT_TRUE(simulate_events(frames, 1, 1, 0.2, 0.0, BayerPattern::mono, rng).events.empty());
}

TEST(Events, StepOfHalfWithResidual) {
  Rng rng(1);
  const auto frames = single_pixel({0.0, 0.5});
  const EventStream s = simulate_events(frames, 1, 1, 0.2, 0.0, BayerPattern::mono, rng);
  ASSERT_EQ(s.events.size(), 2u);
  for (const Event& e : s.events) EXPECT_EQ(e.p, 1);
  // Crossings at 0.2 and 0.4 of a 0.5 rise over 0.1 s.
  EXPECT_EQ(s.events[0].t, 40'000u);
  EXPECT_EQ(s.events[1].t, 80'000u);

  // Residual 0.1 stays in the reference: a further +0.15 completes a third.
  const auto more = single_pixel({0.0, 0.5, 0.65});
  Rng r2(1);
  EXPECT_EQ(simulate_events(more, 1, 1, 0.2, 0.0, BayerPattern::mono, r2).events.size(), 3u);
  const auto less = single_pixel({0.0, 0.5, 0.55});
  Rng r3(1);
  EXPECT_EQ(simulate_events(less, 1, 1, 0.2, 0.0, BayerPattern::mono, r3).events.size(), 2u);
}

TEST(Events, NoiseCountAndGenuineUnchanged) {
  // 100 genuine events: one pixel rising by exactly 100 thresholds.
  const auto frames = single_pixel({0.0, 100 * 0.25 + 0.1});
  Rng a(5);
  const EventStream clean = simulate_events(frames, 1, 1, 0.25, 0.0, BayerPattern::mono, a);
  ASSERT_EQ(clean.events.size(), 100u);
  Rng b(5);
  const EventStream noisy = simulate_events(frames, 1, 1, 0.25, 0.2, BayerPattern::mono, b);
  EXPECT_EQ(noisy.events.size(), 120u);
  EXPECT_EQ(noisy.header.noise_fraction, 0.2);
  for (const Event& e : clean.events) EXPECT_NE(std::find(noisy.events.begin(), noisy.events.end(), e), noisy.events.end());
  EXPECT_NO_THROW(noisy.validate());

  Rng c(5);
  EXPECT_EQ(simulate_events(frames, 1, 1, 0.25, 0.2, BayerPattern::mono, c), noisy);
}

TEST(Events, SimulatorErrors) {
  Rng rng(1);
  std::vector<LogFrame> frames = {{0.2, {0.0}}, {0.1, {1.0}}};
  EXPECT_THROW(simulate_events(frames, 1, 1, 0.2, 0.0, BayerPattern::mono, rng), std::invalid_argument);
  frames = {{0.0, {0.0}}};
  EXPECT_THROW(simulate_events(frames, 1, 1, 0.2, 0.0, BayerPattern::mono, rng), std::invalid_argument);
}

TEST(Events, EstimatorBoundOnRandomSignals) {
  constexpr int kW = 16;
  constexpr int kH = 8;
  constexpr double kC = 0.25;
  Rng gen(9);
  std::vector<LogFrame> frames;
  std::vector<double> state(kW * kH, 0.0);
  for (std::size_t i = 0; i < state.size(); ++i) state[i] = uniform(gen, -2, 0);
  for (int k = 0; k < 50; ++k) {
    frames.push_back({0.02 * k, state});
    for (double& v : state) v += uniform(gen, -0.6, 0.6);
  }
  Rng rng(1);
  const EventStream s = simulate_events(frames, kW, kH, kC, 0.0, BayerPattern::rggb, rng);
  const auto e = accumulate(s, 0, s.header.duration_us).dense();
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_LT(std::abs(e[i] * kC - (frames.back().values[i] - frames.front().values[i])), kC) << "pixel " << i;
  }
}

TEST(Events, Accumulate) {
  EventStream s;
  s.header = {4, 4, 0.2, BayerPattern::rggb, 100, 0.0};
  s.events = {{10, 1, 1, 1}, {20, 1, 1, 1}, {30, 1, 1, -1}, {50, 2, 0, 1}};
  const PolarityMap m = accumulate(s, 0, 50);
  EXPECT_EQ(m.at(1, 1), 1);
  EXPECT_EQ(m.at(2, 0), 0);  // event exactly at t is excluded
  EXPECT_EQ(m.at(3, 3), 0);
  EXPECT_EQ(m.entries().size(), 1u);
  EXPECT_EQ(accumulate(s, 0, 51).at(2, 0), 1);
  const std::vector<std::uint32_t> only = {8};
  EXPECT_TRUE(accumulate(s, 0, 100, std::span<const std::uint32_t>(only)).entries().empty());
  EXPECT_THROW(accumulate(s, 50, 50), std::invalid_argument);
  EXPECT_THROW(accumulate(s, 60, 50), std::invalid_argument);
}

TEST(Events, WindowAdditivity) {
  const EventStream s = random_stream(20000, 4);
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    std::uint64_t a = uniform_index(rng, s.header.duration_us - 2);
    std::uint64_t c = a + 2 + uniform_index(rng, s.header.duration_us - a - 2);
    std::uint64_t b = a + 1 + uniform_index(rng, c - a - 1);
    const auto left = accumulate(s, a, b).dense();
    const auto right = accumulate(s, b, c).dense();
    const auto whole = accumulate(s, a, c).dense();
    for (std::size_t k = 0; k < whole.size(); ++k) ASSERT_EQ(left[k] + right[k], whole[k]);
  }
}

TEST(Events, BayerChannels) {
  EXPECT_EQ(bayer_channel(0, 0, BayerPattern::rggb), Channel::red);
  EXPECT_EQ(bayer_channel(1, 0, BayerPattern::rggb), Channel::green);
  EXPECT_EQ(bayer_channel(0, 1, BayerPattern::rggb), Channel::green);
  EXPECT_EQ(bayer_channel(1, 1, BayerPattern::rggb), Channel::blue);
  EXPECT_EQ(bayer_channel(5, 2, "mono"), Channel::luminance);
  EXPECT_THROW((void)bayer_channel(0, 0, "BGGR"), std::invalid_argument);
}

TEST(Events, FileRoundTrip) {
  const std::string path = temp_path("roundtrip.saen");
  const EventStream s = random_stream(5000, 12);
  write_events(s, path);
  EXPECT_EQ(read_events(path), s);
  EXPECT_EQ(std::filesystem::file_size(path), encode_events(s).size());

  EventStream empty;
  empty.header = {4, 4, 0.25, BayerPattern::mono, 10, 0.0};
  write_events(empty, path);
  const EventStream back = read_events(path);
  EXPECT_TRUE(back.events.empty());
  EXPECT_EQ(back.header, empty.header);
  std::filesystem::remove(path);
}

TEST(Events, FileErrorsNameOffsets) {
  const EventStream s = random_stream(10, 3);
  std::vector<char> bytes = encode_events(s);
  const std::size_t records = bytes.size() - 10 * kEventRecordSize;

  auto message = [](const std::vector<char>& b) {
    try {
      (void)decode_events(b);
    } catch (const std::runtime_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };

  std::vector<char> bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_NE(message(bad_magic).find("bad magic at byte offset 0"), std::string::npos);

  std::vector<char> truncated(bytes.begin(), bytes.end() - 5);
  EXPECT_NE(message(truncated).find("truncated record at byte offset " + std::to_string(records + 9 * 16)),
            std::string::npos);

  // Swap the timestamps of records 3 and 4 to make them descend.
  std::vector<char> unsorted = bytes;
  const std::size_t r3 = records + 3 * kEventRecordSize;
  const std::size_t r4 = records + 4 * kEventRecordSize;
  std::uint64_t t3 = 0;
  std::uint64_t t4 = 0;
  std::memcpy(&t3, &unsorted[r3], 8);
  std::memcpy(&t4, &unsorted[r4], 8);
  ASSERT_LT(t3, t4);
  std::memcpy(&unsorted[r3], &t4, 8);
  std::memcpy(&unsorted[r4], &t3, 8);
  const std::string m = message(unsorted);
  EXPECT_NE(m.find("unsorted"), std::string::npos);
  EXPECT_NE(m.find(std::to_string(r4)), std::string::npos);

  EXPECT_THROW(read_events(temp_path("does_not_exist.saen")), std::runtime_error);
}
