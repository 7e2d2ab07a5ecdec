#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "mst/config.hpp"
#include "mst/fusion.hpp"
#include "mst/layers.hpp"

namespace mst {

/// Token streams at the three patch sizes.
template <typename T>
struct TokenSet {
  Tensor<T> base;   // [(W/16)^2, C]
  Tensor<T> tiny;   // [(W/8)^2, C]
  Tensor<T> large;  // [(W/28)^2, C]
  std::size_t base_grid = 0;
  std::size_t tiny_grid = 0;
  std::size_t large_grid = 0;
};

/// Bilinearly resample a [C, in, k, k] patch kernel to [C, in, p, p] and
/// rescale by (k/p)^2 so a constant patch produces the same activation.
template <typename T>
Tensor<T> resize_patch_kernel(const Tensor<T>& kernel, std::size_t patch);

/// Resample a learned [g*g, C] position grid to [out*out, C], corners aligned.
template <typename T>
Tensor<T> resize_position_grid(const Tensor<T>& pos, std::size_t grid, std::size_t out_grid);

/// Shared 6-channel patch embedding whose kernel and position grid are learned
/// at the base patch size and resampled for every other patch size.
template <typename T>
class PatchEmbedder {
 public:
  PatchEmbedder() = default;
  PatchEmbedder(const ModelConfig& config, ParameterStore<T>& store, Rng& rng);

  /// Kernel for patch size p, flattened to [C, 6*p*p]. Throws ConfigError for
  /// sizes outside the configuration.
  Tensor<T> resized_kernel(std::size_t patch) const;
  Tensor<T> resized_positions(std::size_t patch) const;
  /// x: [6, W, W] -> [(W/p)^2, C].
  Tensor<T> embed(const Tensor<T>& x, std::size_t patch) const;

  const Tensor<T>& kernel() const { return kernel_; }
  const Tensor<T>& positions() const { return pos_; }

 private:
  void require_configured(std::size_t patch) const;

  ModelConfig config_;
  Tensor<T> kernel_;  // [C, 6, base, base]
  Tensor<T> bias_;    // [C]
  Tensor<T> pos_;     // [(W/base)^2, C]
};

template <typename T>
struct EncodeTrace {
  std::vector<std::size_t> blocks;  // block index of each fusion trace
  std::vector<MstTrace<T>> fusion;
  std::vector<std::vector<Tensor<T>>> attention;  // per ViT block, per head
  bool keep_attention = false;
};

/// ViT encoder over base tokens with fusion units after configured blocks.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& config, ParameterStore<T>& store, Rng& rng);

  TokenSet<T> embed(const Tensor<T>& x) const;
  /// Runs all blocks; returns the final streams.
  TokenSet<T> encode(const Tensor<T>& x, std::span<const Point> positives, FusionMode mode, Rng* rng,
                     EncodeTrace<T>* trace = nullptr) const;
  /// Blocks and fusion on already-embedded tokens.
  TokenSet<T> encode_tokens(TokenSet<T> tokens, std::span<const Point> positives, FusionMode mode, Rng* rng,
                            EncodeTrace<T>* trace = nullptr) const;

  const PatchEmbedder<T>& embedder() const { return embedder_; }
  const std::vector<VitBlock<T>>& blocks() const { return blocks_; }
  const std::map<std::size_t, MstBlock<T>>& fusion_blocks() const { return fusion_; }

 private:
  ModelConfig config_;
  PatchEmbedder<T> embedder_;
  std::vector<VitBlock<T>> blocks_;
  std::map<std::size_t, MstBlock<T>> fusion_;
};

extern template class PatchEmbedder<float>;
extern template class PatchEmbedder<double>;
extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace mst
