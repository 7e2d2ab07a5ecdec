#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mst {

/// Architecture hyper-parameters shared by the encoder, fusion blocks and heads.
struct ModelConfig {
  std::size_t image_size = 112;  // square input side in pixels
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t base_patch = 16;
  std::size_t tiny_patch = 8;
  std::size_t large_patch = 28;
  std::vector<std::size_t> mst_blocks{1, 3};  // empty: plain ViT
  std::size_t k_divisor = 12;
  std::size_t mlp_ratio = 4;
  std::size_t pool_ratio = 1;  // scaled cross-attention pooling on the base grid
  std::size_t fpn_channels = 32;
  std::size_t head_hidden = 32;
  std::size_t input_channels = 6;
  std::uint64_t init_seed = 0;

  static ModelConfig desk();
  static ModelConfig full();

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  std::size_t grid(std::size_t patch) const { return image_size / patch; }
  std::size_t tokens(std::size_t patch) const { return grid(patch) * grid(patch); }
  std::size_t output_size() const { return image_size / 4; }
  bool mst_enabled() const { return !mst_blocks.empty(); }
  /// Click disk radius: 5 px at 448, scaled with the image side, at least 1.
  int click_radius() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace mst
