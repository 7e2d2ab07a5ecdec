#include "mst/image_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "mst/error.hpp"

namespace mst {
namespace {

struct PngReader {
  png_image image{};
  PngReader() { image.version = PNG_IMAGE_VERSION; }
  ~PngReader() { png_image_free(&image); }
};

std::vector<std::uint8_t> decode_raw(std::span<const std::uint8_t> bytes, png_uint_32 format, std::size_t channels,
                                     std::size_t& width, std::size_t& height) {
  if (bytes.empty()) throw FormatError("png: empty input");
  PngReader r;
  if (!png_image_begin_read_from_memory(&r.image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png: ") + r.image.message);
  }
  r.image.format = format;
  width = r.image.width;
  height = r.image.height;
  if (width == 0 || height == 0) throw FormatError("png: empty image");
  std::vector<std::uint8_t> out(width * height * channels);
  if (!png_image_finish_read(&r.image, nullptr, out.data(), 0, nullptr)) {
    throw FormatError(std::string("png: ") + r.image.message);
  }
  return out;
}

std::vector<std::uint8_t> encode_raw(const std::uint8_t* pixels, std::size_t width, std::size_t height,
                                     png_uint_32 format) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
  std::size_t w = 0, h = 0;
  const auto raw = decode_raw(bytes, PNG_FORMAT_RGB, 3, w, h);
  Image img(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = float(raw[i]) / 255.0f;
  return img;
}

Mask decode_mask_png(std::span<const std::uint8_t> bytes) {
  std::size_t w = 0, h = 0;
  const auto raw = decode_raw(bytes, PNG_FORMAT_GRAY, 1, w, h);
  Mask m(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) m.data[i] = raw[i] > 127 ? 1 : 0;
  return m;
}

std::vector<std::uint8_t> encode_png_gray(std::span<const std::uint8_t> pixels, std::size_t width,
                                          std::size_t height) {
  if (pixels.size() != width * height) throw DimensionError("encode_png_gray: pixel count mismatch");
  return encode_raw(pixels.data(), width, height, PNG_FORMAT_GRAY);
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> px(image.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(image.data[i]);
  return encode_raw(px.data(), image.width, image.height, PNG_FORMAT_RGB);
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask) {
  std::vector<std::uint8_t> px(mask.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.data[i] ? 255 : 0;
  return encode_png_gray(px, mask.width, mask.height);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }
Mask read_mask_png(const std::filesystem::path& path) { return decode_mask_png(read_file(path)); }

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw FormatError("base64: invalid input");
  // The block decoder keeps the bytes produced by '=' padding.
  std::size_t len = static_cast<std::size_t>(n);
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() > 1 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

}  // namespace mst
