// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "nedf/fields.hpp"
#include "nedf/pipeline.hpp"

namespace nedf::image {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoded raster, row-major, `channels` interleaved samples per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 (gray) or 3 (rgb)
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;
};

/// Clamps to [0,1] and rounds to the nearest 8-bit level.
std::vector<std::uint8_t> to_rgb8(std::span<const Rgb> pixels);
std::vector<Rgb> from_rgb8(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png_rgb8(int width, int height, std::span<const std::uint8_t> rgb);
std::vector<std::uint8_t> encode_png_gray8(int width, int height, std::span<const std::uint8_t> gray);
std::vector<std::uint8_t> encode_png_gray16(int width, int height, std::span<const std::uint16_t> gray);
/// Palette and alpha are expanded; output is gray or rgb at 8 or 16 bits.
Image decode_png(std::span<const std::uint8_t> bytes);
Image read_png(const std::filesystem::path& path);

void write_ppm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb);

/// Hits map to 255 (nearest) .. 32 (farthest); background is 0.
std::vector<std::uint8_t> depth_to_gray8(std::span<const double> depth);
/// id + 1, background 0.
std::vector<std::uint16_t> ids_to_gray16(std::span<const ObjectId> ids);
std::vector<std::uint8_t> shadow_to_gray8(std::span<const double> shadow);

/// "NDPT", u32 W, u32 H, f32 scale, then W·H little-endian f32 depths (inf = background).
struct DepthPlane {
  int width = 0;
  int height = 0;
  float scale = 1.0f;
  std::vector<float> depth;
};

void write_depth_raw(const std::filesystem::path& path, const DepthPlane& plane);
DepthPlane read_depth_raw(const std::filesystem::path& path);

enum class BufferKind : std::uint8_t { kColor = 0, kDepth = 1, kId = 2, kShadow = 3 };

/// Parses "color" | "depth" | "id" | "shadow"; throws std::invalid_argument otherwise.
BufferKind parse_buffer_kind(std::string_view name);
std::string_view buffer_kind_name(BufferKind kind);

/// PNG of one frame plane as used by exports and the frame stream.
std::vector<std::uint8_t> encode_buffer_png(const Frame& frame, BufferKind kind);

}  // namespace nedf::image
