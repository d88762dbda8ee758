// SPDX-License-Identifier: Apache-2.0
#pragma once

// Event generation by per-pixel reference tracking, window accumulation of
// polarities, Bayer channel assignment, and the binary event file format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "saenerf/random.hpp"
#include "saenerf/renderer.hpp"

namespace saenerf {

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;  // column
  std::uint16_t y = 0;  // row
  std::int8_t p = 1;    // +1 or -1

  bool operator==(const Event&) const = default;
};

enum class BayerPattern : std::uint8_t { rggb, mono };

inline BayerPattern parse_pattern(const std::string& tag) {
  if (tag == "RGGB") return BayerPattern::rggb;
  if (tag == "mono") return BayerPattern::mono;
  throw std::invalid_argument("unknown Bayer pattern '" + tag + "'");
}

inline std::string pattern_tag(BayerPattern p) { return p == BayerPattern::rggb ? "RGGB" : "mono"; }

/// RGGB: (even row, even col) R, (even, odd) G, (odd, even) G, (odd, odd) B.
inline Channel bayer_channel(int x, int y, BayerPattern pattern) {
  if (pattern == BayerPattern::mono) return Channel::luminance;
  const bool odd_row = (y & 1) != 0;
  const bool odd_col = (x & 1) != 0;
  if (!odd_row && !odd_col) return Channel::red;
  if (odd_row && odd_col) return Channel::blue;
  return Channel::green;
}

inline Channel bayer_channel(int x, int y, const std::string& pattern) { return bayer_channel(x, y, parse_pattern(pattern)); }

struct EventStreamHeader {
  int width = 0;
  int height = 0;
  double threshold = 0.25;
  BayerPattern pattern = BayerPattern::rggb;
  std::uint64_t duration_us = 0;
  double noise_fraction = 0.0;

  bool operator==(const EventStreamHeader&) const = default;
};

struct EventStream {
  EventStreamHeader header;
  std::vector<Event> events;  // non-decreasing in t

  void validate() const {
    if (header.width < 1 || header.height < 1 || header.width > 65535 || header.height > 65535) {
      throw std::invalid_argument("event stream: bad sensor size");
    }
    if (!(header.threshold > 0.0)) throw std::invalid_argument("event stream: threshold must be positive");
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (i > 0 && e.t < events[i - 1].t) throw std::invalid_argument("event stream: unsorted at event " + std::to_string(i));
      if (e.t >= header.duration_us) throw std::invalid_argument("event stream: event beyond duration");
      if (e.x >= header.width || e.y >= header.height) throw std::invalid_argument("event stream: pixel out of bounds");
      if (e.p != 1 && e.p != -1) throw std::invalid_argument("event stream: bad polarity");
    }
  }

  double duration_seconds() const { return static_cast<double>(header.duration_us) * 1e-6; }
  bool operator==(const EventStream&) const = default;
};

/// One log-intensity plane per frame, already reduced to each pixel's own
/// channel. Row-major, width * height values.
struct LogFrame {
  double t = 0.0;  // seconds
  std::vector<double> values;
};

inline std::uint64_t to_microseconds(double seconds) {
  if (!(seconds >= 0.0)) throw std::invalid_argument("negative timestamp");
  return static_cast<std::uint64_t>(std::llround(seconds * 1e6));
}

/// Reference-tracking event generation. For each pixel, a reference level
/// starts at the first frame; whenever a later frame differs from it by at
/// least C, events are emitted one threshold at a time with timestamps
/// interpolated between the frame times where the linear signal crosses
/// each level. Then floor(noise_fraction * genuine) spurious events are
/// added at uniform pixels, times, and polarities.
inline EventStream simulate_events(std::span<const LogFrame> frames, int width, int height, double threshold,
                                   double noise_fraction, BayerPattern pattern, Rng& rng) {
  if (frames.size() < 2) throw std::invalid_argument("simulate_events: need at least two frames");
  if (!(threshold > 0.0)) throw std::invalid_argument("simulate_events: threshold must be positive");
  if (!(noise_fraction >= 0.0)) throw std::invalid_argument("simulate_events: noise fraction must be >= 0");
  const auto pixels = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (frames[k].values.size() != pixels) throw std::invalid_argument("simulate_events: frame size mismatch");
    if (k > 0 && !(frames[k].t > frames[k - 1].t)) throw std::invalid_argument("simulate_events: frames not time-sorted");
  }

  EventStream stream;
  stream.header = {width, height, threshold, pattern, to_microseconds(frames.back().t) + 1, noise_fraction};

  for (std::size_t pix = 0; pix < pixels; ++pix) {
    const auto x = static_cast<std::uint16_t>(pix % static_cast<std::size_t>(width));
    const auto y = static_cast<std::uint16_t>(pix / static_cast<std::size_t>(width));
    double reference = frames[0].values[pix];
    double previous = reference;
    for (std::size_t k = 1; k < frames.size(); ++k) {
      const double current = frames[k].values[pix];
      const double t_prev = frames[k - 1].t;
      const double t_cur = frames[k].t;
      while (std::abs(current - reference) >= threshold) {
        const int p = current > reference ? 1 : -1;
        const double level = reference + p * threshold;
        const double frac = std::clamp((level - previous) / (current - previous), 0.0, 1.0);
        stream.events.push_back({to_microseconds(t_prev + frac * (t_cur - t_prev)), x, y, static_cast<std::int8_t>(p)});
        reference = level;
      }
      previous = current;
    }
  }

  const auto genuine = stream.events.size();
  const auto spurious = static_cast<std::size_t>(std::floor(noise_fraction * static_cast<double>(genuine)));
  for (std::size_t i = 0; i < spurious; ++i) {
    Event e;
    e.t = uniform_index(rng, stream.header.duration_us);
    e.x = static_cast<std::uint16_t>(uniform_index(rng, static_cast<std::uint64_t>(width)));
    e.y = static_cast<std::uint16_t>(uniform_index(rng, static_cast<std::uint64_t>(height)));
    e.p = uniform_index(rng, 2) == 0 ? std::int8_t{-1} : std::int8_t{1};
    stream.events.push_back(e);
  }
  std::stable_sort(stream.events.begin(), stream.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return stream;
}

/// Signed polarity sums per pixel over a half-open window; absent pixels
/// are zero. Entries are kept sorted by linear pixel index.
class PolarityMap {
 public:
  PolarityMap() = default;
  PolarityMap(int width, int height) : width_(width), height_(height) {}

  int at(int x, int y) const {
    const auto key = index(x, y);
    auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                               [](const Entry& e, std::uint32_t k) { return e.pixel < k; });
    return (it != entries_.end() && it->pixel == key) ? it->value : 0;
  }

  /// Non-zero entries only.
  struct Entry {
    std::uint32_t pixel;
    std::int32_t value;
    bool operator==(const Entry&) const = default;
  };
  const std::vector<Entry>& entries() const { return entries_; }
  int width() const { return width_; }
  int height() const { return height_; }

  /// Dense row-major copy.
  std::vector<int> dense() const {
    std::vector<int> out(static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_), 0);
    for (const Entry& e : entries_) out[e.pixel] = e.value;
    return out;
  }

  static PolarityMap from_dense(int width, int height, std::span<const int> dense) {
    PolarityMap map(width, height);
    for (std::size_t i = 0; i < dense.size(); ++i) {
      if (dense[i] != 0) map.entries_.push_back({static_cast<std::uint32_t>(i), dense[i]});
    }
    return map;
  }

  bool operator==(const PolarityMap&) const = default;

 private:
  std::uint32_t index(int x, int y) const {
    return static_cast<std::uint32_t>(y) * static_cast<std::uint32_t>(width_) + static_cast<std::uint32_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Entry> entries_;
};

/// Polarity sums over events with t0 <= t < t1 (microseconds). When
/// `pixels` is given (linear indices), only those pixels are reported.
inline PolarityMap accumulate(const EventStream& stream, std::uint64_t t0, std::uint64_t t1,
                              std::optional<std::span<const std::uint32_t>> pixels = std::nullopt) {
  if (t0 >= t1) throw std::invalid_argument("accumulate: need t0 < t");
  const int w = stream.header.width;
  const int h = stream.header.height;
  std::vector<int> dense(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  auto begin = std::lower_bound(stream.events.begin(), stream.events.end(), t0,
                                [](const Event& e, std::uint64_t t) { return e.t < t; });
  for (auto it = begin; it != stream.events.end() && it->t < t1; ++it) {
    dense[static_cast<std::size_t>(it->y) * static_cast<std::size_t>(w) + it->x] += it->p;
  }
  if (pixels) {
    std::vector<int> keep(dense.size(), 0);
    for (std::uint32_t p : *pixels) {
      if (p >= dense.size()) throw std::out_of_range("accumulate: pixel index out of range");
      keep[p] = dense[p];
    }
    dense.swap(keep);
  }
  return PolarityMap::from_dense(w, h, dense);
}

// Event file:
//   16-byte magic "SAEN-EVT" + 7 zero bytes + 0x01,
//   uint32 LE header length + UTF-8 JSON header
//     {width, height, threshold, pattern, duration_us, count, noise_fraction},
//   count packed little-endian records of 16 bytes:
//     uint64 t_us, uint16 x, uint16 y, int8 p, 3 zero pad bytes.

inline constexpr std::array<char, 16> kEventMagic = {'S', 'A', 'E', 'N', '-', 'E', 'V', 'T', 0, 0, 0, 0, 0, 0, 0, 1};
inline constexpr std::size_t kEventRecordSize = 16;

namespace detail {

template <typename T>
void put_le(std::vector<char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return static_cast<T>(v);
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline nlohmann::json header_json(const EventStreamHeader& h, std::size_t count) {
  return {{"width", h.width},
          {"height", h.height},
          {"threshold", h.threshold},
          {"pattern", pattern_tag(h.pattern)},
          {"duration_us", h.duration_us},
          {"count", count},
          {"noise_fraction", h.noise_fraction}};
}

inline std::vector<char> encode_events(const EventStream& stream) {
  std::vector<char> out(kEventMagic.begin(), kEventMagic.end());
  const std::string header = header_json(stream.header, stream.events.size()).dump();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + stream.events.size() * kEventRecordSize);
  for (const Event& e : stream.events) {
    detail::put_le<std::uint64_t>(out, e.t);
    detail::put_le<std::uint16_t>(out, e.x);
    detail::put_le<std::uint16_t>(out, e.y);
    out.push_back(static_cast<char>(e.p));
    out.insert(out.end(), 3, 0);
  }
  return out;
}

inline EventStream decode_events(std::span<const char> bytes) {
  auto fail = [](std::size_t offset, const std::string& what) {
    throw std::runtime_error("event file: " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < kEventMagic.size() || !std::equal(kEventMagic.begin(), kEventMagic.end(), bytes.begin())) {
    fail(0, "bad magic");
  }
  std::size_t pos = kEventMagic.size();
  if (bytes.size() < pos + 4) fail(pos, "truncated header length");
  const auto header_len = detail::get_le<std::uint32_t>(bytes.data() + pos);
  pos += 4;
  if (bytes.size() < pos + header_len) fail(pos, "truncated header");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                              bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(pos, std::string("malformed header JSON (") + e.what() + ")");
  }

  EventStream stream;
  std::size_t count = 0;
  try {
    stream.header.width = j.at("width").get<int>();
    stream.header.height = j.at("height").get<int>();
    stream.header.threshold = j.at("threshold").get<double>();
    stream.header.pattern = parse_pattern(j.at("pattern").get<std::string>());
    stream.header.duration_us = j.at("duration_us").get<std::uint64_t>();
    stream.header.noise_fraction = j.value("noise_fraction", 0.0);
    count = j.at("count").get<std::size_t>();
  } catch (const std::exception& e) {
    fail(pos, std::string("bad header field (") + e.what() + ")");
  }
  pos += header_len;

  const std::size_t body = bytes.size() - pos;
  if (body / kEventRecordSize < count) {
    fail(pos + (body / kEventRecordSize) * kEventRecordSize, "truncated record");
  }
  if (body != count * kEventRecordSize) fail(pos + count * kEventRecordSize, "trailing bytes after last record");

  stream.events.resize(count);
  for (std::size_t i = 0; i < count; ++i, pos += kEventRecordSize) {
    const char* r = bytes.data() + pos;
    Event& e = stream.events[i];
    e.t = detail::get_le<std::uint64_t>(r);
    e.x = detail::get_le<std::uint16_t>(r + 8);
    e.y = detail::get_le<std::uint16_t>(r + 10);
    e.p = static_cast<std::int8_t>(r[12]);
    if (i > 0 && e.t < stream.events[i - 1].t) fail(pos, "unsorted timestamps");
    if (e.p != 1 && e.p != -1) fail(pos + 12, "bad polarity");
    if (e.x >= stream.header.width || e.y >= stream.header.height) fail(pos + 8, "pixel out of bounds");
    if (e.t >= stream.header.duration_us) fail(pos, "timestamp beyond duration");
  }
  return stream;
}

inline void write_events(const EventStream& stream, const std::string& path) {
  stream.validate();
  const std::vector<char> bytes = encode_events(stream);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline EventStream read_events(const std::string& path) {
  const std::vector<char> bytes = detail::read_file(path);
  return decode_events(bytes);
}

}  // namespace saenerf
