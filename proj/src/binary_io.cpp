// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace nedf::io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void BinaryWriter::write_file(const std::filesystem::path& path) const { io::write_file(path, bytes_); }

}  // namespace nedf::io
