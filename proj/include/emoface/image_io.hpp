// SPDX-License-Identifier: Apache-2.0
// 8-bit RGB PNG and base64 transport for [3,H,W] images in [-1,1].
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "emoface/tensor.hpp"

namespace emoface {

/// Pixel value v in [-1,1] maps to round((v + 1) * 127.5), clamped.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

std::vector<std::uint8_t> encode_png(const Tensor& image);
Tensor decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Lowercase hex SHA-256 of a file or buffer.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace emoface
