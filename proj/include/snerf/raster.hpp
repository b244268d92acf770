#pragma once

// Float rasters plus the two on-disk image formats:
//
//  * 8-bit PNG (no gamma, values clamped to [0,1]) for inspection.
//  * Float planes for metrics: "SNRFPLNS" magic, u32 width, u32 height,
//    u32 channels, then float32 samples, channel-major (all of channel 0
//    row by row, then channel 1, ...). Everything little-endian.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "snerf/common.hpp"

namespace snerf {

struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;  // interleaved: (row * width + col) * channels + ch

  Raster() = default;
  Raster(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
    if (w < 0 || h < 0 || c < 1) throw Error("Raster: invalid dimensions");
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  double& at(int row, int col, int ch = 0) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  double at(int row, int col, int ch = 0) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  bool same_shape(const Raster& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  double mean() const {
    if (data.empty()) return 0.0;
    double s = 0.0;
    for (double v : data) s += v;
    return s / static_cast<double>(data.size());
  }
};

namespace detail {

inline void put_u32_be(std::string& s, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error("float planes: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void png_chunk(std::string& out, const char* type, const std::string& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  put_u32_be(out, static_cast<std::uint32_t>(
                      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace detail

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

inline std::string encode_png(const Raster& img) {
  if (img.channels != 1 && img.channels != 3) throw Error("encode_png: need 1 or 3 channels");
  std::string raw;
  raw.reserve(img.pixel_count() * img.channels + img.height);
  for (int r = 0; r < img.height; ++r) {
    raw.push_back('\0');
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < img.channels; ++ch) raw.push_back(static_cast<char>(to_byte(img.at(r, c, ch))));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("encode_png: compression failed");
  z.resize(zlen);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);           // color type
  ihdr.append(3, '\0');                                // compression, filter, interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", "");
  return out;
}

inline void write_png(const std::filesystem::path& path, const Raster& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(concat("cannot open ", path.string(), " for writing"));
  const std::string bytes = encode_png(img);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(concat("write failed: ", path.string()));
}

inline constexpr char kFloatPlanesMagic[8] = {'S', 'N', 'R', 'F', 'P', 'L', 'N', 'S'};

inline void write_float_planes(const std::filesystem::path& path, const Raster& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(concat("cannot open ", path.string(), " for writing"));
  os.write(kFloatPlanesMagic, 8);
  detail::put_u32_le(os, static_cast<std::uint32_t>(img.width));
  detail::put_u32_le(os, static_cast<std::uint32_t>(img.height));
  detail::put_u32_le(os, static_cast<std::uint32_t>(img.channels));
  for (int ch = 0; ch < img.channels; ++ch)
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        detail::put_u32_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(img.at(r, c, ch))));
  if (!os) throw Error(concat("write failed: ", path.string()));
}

inline Raster read_float_planes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(concat("cannot open ", path.string()));
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kFloatPlanesMagic))
    throw Error(concat("not a float-plane file: ", path.string()));
  const int w = static_cast<int>(detail::get_u32_le(is));
  const int h = static_cast<int>(detail::get_u32_le(is));
  const int c = static_cast<int>(detail::get_u32_le(is));
  Raster img(w, h, c);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col)
        img.at(r, col, ch) = static_cast<double>(std::bit_cast<float>(detail::get_u32_le(is)));
  return img;
}

/// Side-by-side panel of equally sized images (grayscale inputs are expanded to RGB).
inline Raster hconcat(const std::vector<Raster>& parts, int gap = 2) {
  if (parts.empty()) return {};
  const int h = parts.front().height;
  int w = 0;
  for (const auto& p : parts) {
    if (p.height != h) throw Error("hconcat: height mismatch");
    w += p.width;
  }
  w += gap * static_cast<int>(parts.size() - 1);
  Raster out(w, h, 3, 1.0);
  int x0 = 0;
  for (const auto& p : parts) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < p.width; ++c)
        for (int ch = 0; ch < 3; ++ch) out.at(r, x0 + c, ch) = p.at(r, c, p.channels == 3 ? ch : 0);
    x0 += p.width + gap;
  }
  return out;
}

}  // namespace snerf
