#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vlamd/errors.hpp"
#include "vlamd/tensor.hpp"

namespace vlamd {

// Interleaved RGB pixels in [0,1].
struct Image {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<float> rgb;  // h * w * 3

  float& at(int64_t y, int64_t x, int c) { return rgb[static_cast<size_t>((y * w + x) * 3 + c)]; }
  float at(int64_t y, int64_t x, int c) const {
    return rgb[static_cast<size_t>((y * w + x) * 3 + c)];
  }
};

template <class Real>
Tensor<Real> image_to_tensor(const Image& img) {
  std::vector<Real> data(static_cast<size_t>(3 * img.h * img.w));
  for (int c = 0; c < 3; ++c)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        data[static_cast<size_t>((c * img.h + y) * img.w + x)] = static_cast<Real>(img.at(y, x, c));
  return Tensor<Real>::from(std::move(data), {3, img.h, img.w}, false);
}

namespace png_detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[5],
                         const std::vector<uint8_t>& data) {
  put_u32(out, static_cast<uint32_t>(data.size()));
  size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_u32(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
  if (pb <= pc) return static_cast<uint8_t>(b);
  return static_cast<uint8_t>(c);
}

}  // namespace png_detail

// 8-bit RGB, non-interlaced, filter 0 on every row, fixed compression level —
// byte-identical output for identical pixels.
inline std::vector<uint8_t> encode_png(const Image& img) {
  if (img.h <= 0 || img.w <= 0 || img.rgb.size() != static_cast<size_t>(img.h * img.w * 3))
    throw DataError("encode_png: malformed image buffer");
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.h * (1 + img.w * 3)));
  for (int64_t y = 0; y < img.h; ++y) {
    raw.push_back(0);  // filter: none
    for (int64_t x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        raw.push_back(static_cast<uint8_t>(std::lround(v * 255.0f)));
      }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw DataError("encode_png: deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> out{137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<uint8_t> ihdr;
  png_detail::put_u32(ihdr, static_cast<uint32_t>(img.w));
  png_detail::put_u32(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  png_detail::append_chunk(out, "IHDR", ihdr);
  png_detail::append_chunk(out, "IDAT", compressed);
  png_detail::append_chunk(out, "IEND", {});
  return out;
}

// Baseline subset: 8-bit gray/RGB/RGBA, non-interlaced, all five filters.
inline Image decode_png(const std::vector<uint8_t>& bytes, const std::string& origin = "<memory>") {
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw DataError(origin + ": not a PNG file");
  size_t pos = 8;
  int64_t w = 0, h = 0;
  int color = -1, channels = 0;
  std::vector<uint8_t> idat;
  bool done = false;
  while (pos + 8 <= bytes.size() && !done) {
    uint32_t len = png_detail::get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw DataError(origin + ": truncated PNG chunk");
    std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const uint8_t* data = bytes.data() + pos + 8;
    if (type == "IHDR") {
      if (len != 13) throw DataError(origin + ": bad IHDR");
      w = png_detail::get_u32(data);
      h = png_detail::get_u32(data + 4);
      int depth = data[8];
      color = data[9];
      if (depth != 8) throw DataError(origin + ": only 8-bit PNGs are supported");
      if (color == 0) channels = 1;
      else if (color == 2) channels = 3;
      else if (color == 6) channels = 4;
      else throw DataError(origin + ": unsupported PNG color type " + std::to_string(color));
      if (data[12] != 0) throw DataError(origin + ": interlaced PNGs are not supported");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      done = true;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || idat.empty()) throw DataError(origin + ": incomplete PNG");

  size_t stride = static_cast<size_t>(w) * static_cast<size_t>(channels);
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (rc != Z_OK || raw_len != raw.size()) throw DataError(origin + ": PNG inflate failed");

  // undo per-row filters in place
  size_t bpp = static_cast<size_t>(channels);
  std::vector<uint8_t> prev(stride, 0);
  std::vector<uint8_t> cur(stride);
  Image img;
  img.h = h;
  img.w = w;
  img.rgb.resize(static_cast<size_t>(h * w * 3));
  for (int64_t y = 0; y < h; ++y) {
    const uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    uint8_t filter = row[0];
    const uint8_t* src = row + 1;
    for (size_t i = 0; i < stride; ++i) {
      uint8_t a = i >= bpp ? cur[i - bpp] : 0;
      uint8_t b = prev[i];
      uint8_t c = i >= bpp ? prev[i - bpp] : 0;
      int v;
      switch (filter) {
        case 0: v = src[i]; break;
        case 1: v = src[i] + a; break;
        case 2: v = src[i] + b; break;
        case 3: v = src[i] + (a + b) / 2; break;
        case 4: v = src[i] + png_detail::paeth(a, b, c); break;
        default: throw DataError(origin + ": unknown PNG filter " + std::to_string(filter));
      }
      cur[i] = static_cast<uint8_t>(v & 0xff);
    }
    for (int64_t x = 0; x < w; ++x)
      for (int cc = 0; cc < 3; ++cc) {
        uint8_t byte = channels == 1 ? cur[static_cast<size_t>(x)]
                                     : cur[static_cast<size_t>(x) * bpp + static_cast<size_t>(cc)];
        img.at(y, x, cc) = static_cast<float>(byte) / 255.0f;
      }
    std::swap(prev, cur);
  }
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

inline Image read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes, path);
}

inline Image resize_bilinear(const Image& img, int64_t oh, int64_t ow) {
  if (img.h == oh && img.w == ow) return img;
  Image out;
  out.h = oh;
  out.w = ow;
  out.rgb.resize(static_cast<size_t>(oh * ow * 3));
  for (int64_t y = 0; y < oh; ++y) {
    float fy = oh > 1 ? static_cast<float>(y) * static_cast<float>(img.h - 1) / static_cast<float>(oh - 1)
                      : 0.0f;
    int64_t y0 = static_cast<int64_t>(fy);
    int64_t y1 = std::min(y0 + 1, img.h - 1);
    float ty = fy - static_cast<float>(y0);
    for (int64_t x = 0; x < ow; ++x) {
      float fx = ow > 1
                     ? static_cast<float>(x) * static_cast<float>(img.w - 1) / static_cast<float>(ow - 1)
                     : 0.0f;
      int64_t x0 = static_cast<int64_t>(fx);
      int64_t x1 = std::min(x0 + 1, img.w - 1);
      float tx = fx - static_cast<float>(x0);
      for (int c = 0; c < 3; ++c) {
        float top = img.at(y0, x0, c) * (1 - tx) + img.at(y0, x1, c) * tx;
        float bot = img.at(y1, x0, c) * (1 - tx) + img.at(y1, x1, c) * tx;
        out.at(y, x, c) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

}  // namespace vlamd
