#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mst/geometry.hpp"

namespace mst {

/// Interleaved RGB, row-major, values in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;  // height * width * 3

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), data(w * h * 3, 0.0f) {}
  float& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  float at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
};

/// Binary mask, one byte per pixel holding 0 or 1.
struct Mask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t w, std::size_t h) : width(w), height(h), data(w * h, 0) {}
  std::uint8_t& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  std::size_t area() const;
  bool operator==(const Mask&) const = default;
};

double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
inline double iou(const Mask& a, const Mask& b) { return iou(a.data, b.data); }

/// Foreground where p >= threshold.
Mask binarize(std::span<const float> prob, std::size_t width, std::size_t height, float threshold = 0.5f);

/// Bilinear resample with pixel-centre alignment.
Image resize_image(const Image& img, std::size_t width, std::size_t height);
std::vector<float> resize_plane(std::span<const float> plane, std::size_t w, std::size_t h, std::size_t out_w,
                                std::size_t out_h);
Mask resize_mask_nearest(const Mask& mask, std::size_t width, std::size_t height);

Image flip_horizontal(const Image& img);
Mask flip_horizontal(const Mask& mask);

/// Aspect-preserving fit of a w x h image into a side x side square.
struct Letterbox {
  std::size_t source_width = 0;
  std::size_t source_height = 0;
  std::size_t side = 0;
  std::size_t content_width = 0;
  std::size_t content_height = 0;
  std::size_t offset_x = 0;
  std::size_t offset_y = 0;

  static Letterbox fit(std::size_t w, std::size_t h, std::size_t side);
  /// Source pixel -> square pixel.
  Point to_square(Point p) const;
  /// Square pixel -> source pixel (clamped into the source image).
  Point to_source(Point p) const;
};

/// Letterboxed copy padded with the mean colour.
Image letterbox_image(const Image& img, const Letterbox& box);
Mask letterbox_mask(const Mask& mask, const Letterbox& box);
/// Crop the content area out of a side x side map and resample to the source size.
/// Letterboxed copy of a W x H plane, padded with `fill`.
std::vector<float> letterbox_plane(std::span<const float> plane, const Letterbox& box, float fill = 0.0f);
std::vector<float> unletterbox_plane(std::span<const float> plane, const Letterbox& box);

}  // namespace mst
