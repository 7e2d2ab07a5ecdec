#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mst/image.hpp"

namespace mst {

/// PNG bytes (gray, RGB or RGBA, 8 or 16 bit) -> RGB in [0, 1]; alpha is
/// dropped. Throws FormatError on bad input.
Image decode_png(std::span<const std::uint8_t> bytes);

/// PNG bytes -> binary mask; a pixel is foreground when its gray level
/// exceeds half range.
Mask decode_mask_png(std::span<const std::uint8_t> bytes);

/// 8-bit grayscale PNG.
std::vector<std::uint8_t> encode_png_gray(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height);

/// 8-bit RGB PNG, channels rounded from [0, 1].
std::vector<std::uint8_t> encode_png(const Image& image);

/// Mask as 0 / 255 grayscale PNG.
std::vector<std::uint8_t> encode_mask_png(const Mask& mask);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Image read_png(const std::filesystem::path& path);
Mask read_mask_png(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws FormatError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace mst
