// SPDX-License-Identifier: Apache-2.0
#pragma once

// Linear RGB images in [0, 1], row-major with a top-left origin, plus 8-bit
// PNG output and 16-bit binary PPM read/write.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace saenerf {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // (y * width + x) * 3 + c

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

  double& at(int x, int y, int c) { return data[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data[index(x, y, c)]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
           static_cast<std::size_t>(c);
  }
};

namespace detail {

inline std::uint16_t quantize16(double v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
}

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline void write_png(const Image& img, const std::string& path) {
  std::vector<std::uint8_t> raw;
  raw.reserve(img.pixel_count() * 3 + static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) raw.push_back(detail::quantize8(img.at(x, y, c)));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("png: compression failed");
  }
  packed.resize(packed_size);

  std::vector<std::uint8_t> file = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> header;
  detail::put_be32(header, static_cast<std::uint32_t>(img.width));
  detail::put_be32(header, static_cast<std::uint32_t>(img.height));
  header.insert(header.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
  detail::put_chunk(file, "IHDR", header);
  detail::put_chunk(file, "IDAT", packed);
  detail::put_chunk(file, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
}

/// Binary P6 with maxval 65535 (big-endian samples).
inline void write_ppm16(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n65535\n";
  std::vector<char> row(static_cast<std::size_t>(img.width) * 6);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::uint16_t v = detail::quantize16(img.at(x, y, c));
        const std::size_t k = (static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)) * 2;
        row[k] = static_cast<char>(v >> 8);
        row[k + 1] = static_cast<char>(v & 0xff);
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

/// Reads binary P6 with maxval up to 65535.
inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto token = [&]() {
    std::string tok;
    while (tok.empty()) {
      const int ch = in.peek();
      if (ch == EOF) throw std::runtime_error(path + ": truncated PPM header");
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        in >> tok;
      }
    }
    return tok;
  };
  if (token() != "P6") throw std::runtime_error(path + ": not a binary PPM");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  const int maxval = std::stoi(token());
  in.get();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw std::runtime_error(path + ": bad PPM header");
  const bool wide = maxval > 255;
  Image img(w, h);
  std::vector<unsigned char> buf(img.data.size() * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw std::runtime_error(path + ": truncated PPM data");
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const unsigned v = wide ? (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
    img.data[i] = static_cast<double>(v) / maxval;
  }
  return img;
}

}  // namespace saenerf
