#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mst/image.hpp"
#include "mst/tensor.hpp"

namespace mst {

struct Click {
  Point point;
  bool positive = true;
  bool operator==(const Click&) const = default;
};

/// Clicks issued so far plus the previous soft prediction.
struct ClickState {
  std::vector<Click> clicks;
  std::vector<float> previous;  // width * height in [0, 1]; empty means zeros

  std::vector<Point> positives() const;
};

/// Disk maps [2, height, width]: channel 0 positive, channel 1 negative.
/// Throws ContractError for clicks outside the image.
template <typename T>
Tensor<T> encode_clicks(std::span<const Click> clicks, std::size_t width, std::size_t height, int radius);

/// Model input [6, W, W]: RGB planes, click disks, previous mask.
template <typename T>
Tensor<T> build_input(const Image& image, const ClickState& state, int radius);

/// Error regions of a binary prediction, 4-connected.
struct ErrorComponent {
  std::vector<std::size_t> pixels;  // raster indices, ascending
  bool false_negative = true;
};

std::vector<ErrorComponent> error_components(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                             std::size_t width, std::size_t height);

/// Exact Euclidean distance from every pixel of `region` to the nearest pixel
/// outside it; pixels beyond the image border count as outside. Zero outside.
std::vector<double> region_distance(std::span<const std::uint8_t> region, std::size_t width, std::size_t height);

/// Click at the deepest point of the largest error region. Ties between
/// regions of equal size: false negatives first, then the region whose first
/// raster pixel comes earlier. Ties in depth: lowest raster index.
/// nullopt when pred equals gt.
std::optional<Click> next_click(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                std::size_t width, std::size_t height);

}  // namespace mst
