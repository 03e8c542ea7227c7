// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "nedf/binary_io.hpp"

namespace nedf::image {

std::vector<std::uint8_t> to_rgb8(std::span<const Rgb> pixels) {
  auto q = [](double v) {
    if (!(v > 0.0)) return std::uint8_t{0};  // also maps NaN to black
    return static_cast<std::uint8_t>(std::lround(std::min(v, 1.0) * 255.0));
  };
  std::vector<std::uint8_t> out;
  out.reserve(pixels.size() * 3);
  for (const Rgb& p : pixels) {
    out.push_back(q(p.r));
    out.push_back(q(p.g));
    out.push_back(q(p.b));
  }
  return out;
}

std::vector<Rgb> from_rgb8(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 3 != 0) throw ImageError("rgb8 buffer length is not a multiple of 3");
  std::vector<Rgb> out(bytes.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {bytes[3 * i] / 255.0, bytes[3 * i + 1] / 255.0, bytes[3 * i + 2] / 255.0};
  }
  return out;
}

namespace {

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message) *message = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

std::vector<std::uint8_t> encode_png(int width, int height, int color_type, int bit_depth,
                                     const std::vector<png_bytep>& rows) {
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  if (!png) throw ImageError("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw ImageError("png encode failed: " + message);
  }
  png_set_write_fn(png, &out, write_to_vector, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // host little-endian samples -> PNG big-endian
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void check_dims(int width, int height, std::size_t have, std::size_t per_pixel) {
  if (width < 1 || height < 1) throw ImageError("image dimensions must be positive");
  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * per_pixel;
  if (have != need) {
    throw ImageError("image buffer holds " + std::to_string(have) + " samples, expected " + std::to_string(need));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png_rgb8(int width, int height, std::span<const std::uint8_t> rgb) {
  check_dims(width, height, rgb.size(), 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3);
  }
  return encode_png(width, height, PNG_COLOR_TYPE_RGB, 8, rows);
}

std::vector<std::uint8_t> encode_png_gray8(int width, int height, std::span<const std::uint8_t> gray) {
  check_dims(width, height, gray.size(), 1);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(gray.data() + static_cast<std::size_t>(y) * width);
  }
  return encode_png(width, height, PNG_COLOR_TYPE_GRAY, 8, rows);
}

std::vector<std::uint8_t> encode_png_gray16(int width, int height, std::span<const std::uint16_t> gray) {
  check_dims(width, height, gray.size(), 1);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    auto* row = gray.data() + static_cast<std::size_t>(y) * width;
    rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(row));
  }
  return encode_png(width, height, PNG_COLOR_TYPE_GRAY, 16, rows);
}

namespace {

struct MemoryReader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
  auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (src->data.size() - src->pos < length) png_error(png, "truncated PNG data");
  std::memcpy(out, src->data.data() + src->pos, length);
  src->pos += length;
}

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageError("not a PNG stream");
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  if (!png) throw ImageError("png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  MemoryReader src{bytes};
  Image img;
  std::vector<std::uint8_t> raw;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    throw ImageError("png decode failed: " + message);
  }
  png_set_read_fn(png, &src, read_from_memory);
  png_read_info(png, info);
  png_set_expand(png);       // palette -> rgb, low-bit gray -> 8 bit, tRNS -> alpha
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.bit_depth = png_get_bit_depth(png, info);
  img.channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  raw.resize(row_bytes * static_cast<std::size_t>(img.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::size_t y = 0; y < rows.size(); ++y) rows[y] = raw.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    img.samples[i] = img.bit_depth == 16 ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
  }
  return img;
}

Image read_png(const std::filesystem::path& path) { return decode_png(io::read_file(path)); }

void write_ppm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb) {
  check_dims(width, height, rgb.size(), 3);
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), rgb.begin(), rgb.end());
  io::write_file(path, bytes);
}

std::vector<std::uint8_t> depth_to_gray8(std::span<const double> depth) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double d : depth) {
    if (std::isfinite(d)) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  std::vector<std::uint8_t> out(depth.size(), 0);
  const double range = hi - lo;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!std::isfinite(depth[i])) continue;
    const double u = range > 0.0 ? (depth[i] - lo) / range : 0.0;
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 - 223.0 * u));
  }
  return out;
}

std::vector<std::uint16_t> ids_to_gray16(std::span<const ObjectId> ids) {
  std::vector<std::uint16_t> out(ids.size(), 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kNoObject) continue;
    if (ids[i] < 0 || ids[i] >= 0xFFFF) throw ImageError("object id " + std::to_string(ids[i]) + " does not fit 16 bits");
    out[i] = static_cast<std::uint16_t>(ids[i] + 1);
  }
  return out;
}

std::vector<std::uint8_t> shadow_to_gray8(std::span<const double> shadow) {
  std::vector<std::uint8_t> out(shadow.size());
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(shadow[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

void write_depth_raw(const std::filesystem::path& path, const DepthPlane& plane) {
  check_dims(plane.width, plane.height, plane.depth.size(), 1);
  io::BinaryWriter w;
  w.magic("NDPT");
  w.u32(static_cast<std::uint32_t>(plane.width));
  w.u32(static_cast<std::uint32_t>(plane.height));
  w.f32(plane.scale);
  w.f32s(plane.depth);
  w.write_file(path);
}

DepthPlane read_depth_raw(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::BinaryReader<ImageError> r(bytes);
  r.expect_magic("NDPT");
  DepthPlane plane;
  const std::uint32_t w = r.u32();
  const std::uint32_t h = r.u32();
  plane.scale = r.f32();
  if (w == 0 || h == 0 || w > 65536 || h > 65536) throw ImageError("depth plane has invalid dimensions");
  plane.width = static_cast<int>(w);
  plane.height = static_cast<int>(h);
  plane.depth.resize(static_cast<std::size_t>(w) * h);
  r.f32s(plane.depth);
  if (r.remaining() != 0) throw ImageError("depth plane has trailing bytes");
  return plane;
}

BufferKind parse_buffer_kind(std::string_view name) {
  if (name == "color") return BufferKind::kColor;
  if (name == "depth") return BufferKind::kDepth;
  if (name == "id") return BufferKind::kId;
  if (name == "shadow") return BufferKind::kShadow;
  throw std::invalid_argument("unknown buffer \"" + std::string(name) + "\" (expected color|depth|id|shadow)");
}

std::string_view buffer_kind_name(BufferKind kind) {
  switch (kind) {
    case BufferKind::kColor: return "color";
    case BufferKind::kDepth: return "depth";
    case BufferKind::kId: return "id";
    case BufferKind::kShadow: return "shadow";
  }
  return "color";
}

std::vector<std::uint8_t> encode_buffer_png(const Frame& frame, BufferKind kind) {
  const int w = frame.buffers.width;
  const int h = frame.buffers.height;
  switch (kind) {
    case BufferKind::kColor: return encode_png_rgb8(w, h, to_rgb8(frame.image));
    case BufferKind::kDepth: return encode_png_gray8(w, h, depth_to_gray8(frame.buffers.depth));
    case BufferKind::kId: return encode_png_gray16(w, h, ids_to_gray16(frame.buffers.id));
    case BufferKind::kShadow: return encode_png_gray8(w, h, shadow_to_gray8(frame.buffers.shadow));
  }
  throw std::invalid_argument("unknown buffer kind");
}

}  // namespace nedf::image
