#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mst/image.hpp"
#include "mst/params.hpp"

namespace mst {

enum class ShapeKind { Ellipse, Rectangle, Polygon };
const char* shape_name(ShapeKind k);

struct Sample {
  std::string id;
  Image image;
  Mask mask;
  ShapeKind kind = ShapeKind::Ellipse;
  double scale_ratio = 0.0;  // mask area / image area
};

struct SyntheticOptions {
  double min_ratio = 0.01;
  double max_ratio = 0.8;
  int max_distractors = 3;
};

/// One textured scene whose target covers close to `target_ratio` of the image.
Sample generate_sample(Rng& rng, std::size_t side, double target_ratio, const SyntheticOptions& options = {});

/// n scenes with target ratios uniform over [min_ratio, max_ratio]. Sample i
/// depends only on (seed, i).
std::vector<Sample> gen_synthetic(std::uint64_t seed, std::size_t n, std::size_t side,
                                  const SyntheticOptions& options = {});

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  std::size_t offset_x = 0;  // crop origin in the rescaled image, or paste origin when it shrank
  std::size_t offset_y = 0;

  static AugmentParams identity() { return {}; }
};

/// Flip with p = 0.5, scale in [0.75, 1.4], crop/paste origin uniform.
AugmentParams draw_augment(Rng& rng, std::size_t side);

/// Applies the same nearest-neighbour geometry to image and mask, so they
/// stay pixel-aligned. Output keeps the input side.
Sample augment(const Sample& sample, const AugmentParams& params);

/// Draws parameters until the mask stays non-empty (identity after 16 tries).
Sample augment(const Sample& sample, std::uint64_t seed);

}  // namespace mst
