#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mst/fusion.hpp"

namespace mst {

struct FocalOptions {
  double gamma = 2.0;
  double alpha = 0.25;
};

/// Mean focal loss of logits [n, n, 1] against a binary mask of n*n entries.
template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, std::span<const std::uint8_t> mask, FocalOptions options = {});

/// Token labels on a grid of p x p cells over a side x side binary mask: a
/// cell is positive when more than half of its pixels are foreground.
std::vector<std::uint8_t> rasterize_token_gt(std::span<const std::uint8_t> mask, std::size_t side, std::size_t patch);

/// Area-threshold downsampling of a binary mask by an integer factor.
inline std::vector<std::uint8_t> downsample_mask(std::span<const std::uint8_t> mask, std::size_t side,
                                                 std::size_t factor) {
  return rasterize_token_gt(mask, side, factor);
}

struct TripletOptions {
  std::size_t max_pairs = 256;
};

template <typename T>
struct TripletTerm {
  Tensor<T> loss;  // scalar, already divided by the pair count
  std::size_t pairs = 0;
};

/// Softplus margin loss over (positive, negative) pairs of selected tokens.
/// `labels` holds one entry per selected row. Pairs beyond the cap are
/// subsampled with `rng`. No positives or no negatives: zero loss, zero pairs.
template <typename T>
TripletTerm<T> triplet_token_loss(const Tensor<T>& query, const Tensor<T>& selected,
                                  std::span<const std::uint8_t> labels, TripletOptions options, Rng& rng);

template <typename T>
struct LossReport {
  Tensor<T> total;  // seg + contrastive
  double seg = 0.0;
  double contrastive = 0.0;
  std::size_t tiny_pairs = 0;
  std::size_t large_pairs = 0;
};

/// seg + contrastive, unweighted.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& seg, const Tensor<T>& contrastive);

}  // namespace mst
