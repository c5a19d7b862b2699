// SPDX-License-Identifier: Apache-2.0
#include "emoface/image_io.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace emoface {

std::uint8_t to_byte(double v) {
  const double s = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

namespace {

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("expected a [3,H,W] image, got " + shape_str(image.shape()));
}

struct PngWriteState {
  std::vector<std::uint8_t>* out;
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<PngWriteState*>(png_get_io_ptr(png));
  st->out->insert(st->out->end(), data, data + len);
}

void png_flush_cb(png_structp) {}

struct PngReadState {
  const std::vector<std::uint8_t>* in;
  std::size_t pos = 0;
};

void png_read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->in->size()) png_error(png, "truncated PNG");
  std::memcpy(data, st->in->data() + st->pos, len);
  st->pos += len;
}

void png_error_cb(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }
void png_warning_cb(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  check_image(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> rows(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) rows[i * 3 + c] = to_byte(image[c * h * w + i]);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: cannot allocate writer");
  }
  std::vector<std::uint8_t> out;
  PngWriteState st{&out};
  try {
    png_set_write_fn(png, &st, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y) png_write_row(png, rows.data() + y * w * 3);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Tensor decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw std::runtime_error("png: not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: cannot allocate reader");
  }
  PngReadState st{&bytes};
  Tensor out;
  try {
    png_set_read_fn(png, &st, png_read_cb);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    if (png_get_rowbytes(png, info) != w * 3) png_error(png, "unexpected row layout");
    std::vector<std::uint8_t> rows(h * w * 3);
    std::vector<png_bytep> ptrs(h);
    for (std::size_t y = 0; y < h; ++y) ptrs[y] = rows.data() + y * w * 3;
    png_read_image(png, ptrs.data());
    png_read_end(png, nullptr);
    out = Tensor(Shape{3, h, w});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < h * w; ++i) out[c * h * w + i] = from_byte(rows[i * 3 + c]);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_bytes(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("base64: invalid input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(bytes.data(), bytes.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char d : digest) {
    out.push_back(hex[d >> 4]);
    out.push_back(hex[d & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_bytes(path)); }

}  // namespace emoface
