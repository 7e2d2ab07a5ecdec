#include "mst/config.hpp"

#include <algorithm>
#include <cmath>

#include "mst/error.hpp"

namespace mst {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.image_size = 448;
  c.embed_dim = 768;
  c.depth = 12;
  c.heads = 12;
  c.mst_blocks = {2, 5, 8, 11};
  c.pool_ratio = 2;
  c.fpn_channels = 384;
  c.head_hidden = 256;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (image_size == 0 || embed_dim == 0 || depth == 0 || heads == 0) fail("zero-sized dimension");
  for (std::size_t p : {base_patch, tiny_patch, large_patch}) {
    if (p == 0 || image_size % p != 0) {
      fail("image size " + std::to_string(image_size) + " not divisible by patch " + std::to_string(p));
    }
  }
  if (image_size % 4 != 0) fail("image size must be divisible by 4");
  if (embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
  for (std::size_t b : mst_blocks) {
    if (b >= depth) fail("MST block index " + std::to_string(b) + " outside [0, depth)");
  }
  if (k_divisor == 0) fail("k_divisor must be positive");
  if (pool_ratio == 0 || grid(base_patch) % pool_ratio != 0) {
    fail("pool ratio " + std::to_string(pool_ratio) + " does not divide base grid " +
         std::to_string(grid(base_patch)));
  }
  if (input_channels != 6) fail("input must have 6 channels");
  if (fpn_channels == 0 || head_hidden == 0 || mlp_ratio == 0) fail("zero-sized head");
}

int ModelConfig::click_radius() const {
  return std::max(1, static_cast<int>(std::lround(5.0 * static_cast<double>(image_size) / 448.0)));
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},   {"embed_dim", c.embed_dim},
                     {"depth", c.depth},             {"heads", c.heads},
                     {"base_patch", c.base_patch},   {"tiny_patch", c.tiny_patch},
                     {"large_patch", c.large_patch}, {"mst_blocks", c.mst_blocks},
                     {"k_divisor", c.k_divisor},     {"mlp_ratio", c.mlp_ratio},
                     {"pool_ratio", c.pool_ratio},   {"fpn_channels", c.fpn_channels},
                     {"head_hidden", c.head_hidden}, {"input_channels", c.input_channels},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.base_patch = j.value("base_patch", d.base_patch);
  c.tiny_patch = j.value("tiny_patch", d.tiny_patch);
  c.large_patch = j.value("large_patch", d.large_patch);
  c.mst_blocks = j.value("mst_blocks", d.mst_blocks);
  c.k_divisor = j.value("k_divisor", d.k_divisor);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.pool_ratio = j.value("pool_ratio", d.pool_ratio);
  c.fpn_channels = j.value("fpn_channels", d.fpn_channels);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.init_seed = j.value("init_seed", d.init_seed);
}

}  // namespace mst
