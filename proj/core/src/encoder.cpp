#include "mst/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace mst {

template <typename T>
Tensor<T> resize_patch_kernel(const Tensor<T>& kernel, std::size_t patch) {
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw DimensionError("resize_patch_kernel: expected [C, in, k, k], got " + shape_string(kernel.shape()));
  }
  const std::size_t c = kernel.dim(0), in = kernel.dim(1), k = kernel.dim(2);
  if (patch == 0) throw ConfigError("resize_patch_kernel: zero patch size");
  if (patch == k) return kernel;
  Tensor<T> slices = reshape(kernel, Shape{c * in, k, k});
  Tensor<T> resized = resize_bilinear(slices, patch, patch);
  const T ratio = static_cast<T>(k) / static_cast<T>(patch);
  return reshape(scale(resized, ratio * ratio), Shape{c, in, patch, patch});
}

template <typename T>
Tensor<T> resize_position_grid(const Tensor<T>& pos, std::size_t grid, std::size_t out_grid) {
  if (pos.rank() != 2 || pos.dim(0) != grid * grid) {
    throw DimensionError("resize_position_grid: " + shape_string(pos.shape()) + " is not a " + std::to_string(grid) +
                         "x" + std::to_string(grid) + " grid");
  }
  if (grid == out_grid) return pos;
  const std::size_t c = pos.dim(1);
  Tensor<T> planes = reshape(transpose(pos), Shape{c, grid, grid});
  Tensor<T> resized = resize_bilinear(planes, out_grid, out_grid);
  return transpose(reshape(resized, Shape{c, out_grid * out_grid}));
}

template <typename T>
PatchEmbedder<T>::PatchEmbedder(const ModelConfig& config, ParameterStore<T>& store, Rng& rng) : config_(config) {
  const std::size_t c = config.embed_dim, b = config.base_patch;
  const double fan_in = static_cast<double>(config.input_channels * b * b);
  kernel_ = store.normal("embed.kernel", Shape{c, config.input_channels, b, b}, 1.0 / std::sqrt(fan_in), rng);
  bias_ = store.constant("embed.bias", Shape{c}, T(0));
  pos_ = store.normal("embed.pos", Shape{config.tokens(b), c}, 0.02, rng);
}

template <typename T>
void PatchEmbedder<T>::require_configured(std::size_t patch) const {
  if (patch != config_.base_patch && patch != config_.tiny_patch && patch != config_.large_patch) {
    throw ConfigError("patch size " + std::to_string(patch) + " is not configured");
  }
}

template <typename T>
Tensor<T> PatchEmbedder<T>::resized_kernel(std::size_t patch) const {
  require_configured(patch);
  const Tensor<T> k = resize_patch_kernel(kernel_, patch);
  return reshape(k, Shape{config_.embed_dim, config_.input_channels * patch * patch});
}

template <typename T>
Tensor<T> PatchEmbedder<T>::resized_positions(std::size_t patch) const {
  require_configured(patch);
  return resize_position_grid(pos_, config_.grid(config_.base_patch), config_.grid(patch));
}

template <typename T>
Tensor<T> PatchEmbedder<T>::embed(const Tensor<T>& x, std::size_t patch) const {
  if (x.rank() != 3 || x.dim(0) != config_.input_channels) {
    throw ContractError("embed: expected [" + std::to_string(config_.input_channels) + ", H, W] input, got " +
                        shape_string(x.shape()));
  }
  require_configured(patch);
  const Tensor<T> patches = extract_patches(x, patch);
  const Tensor<T> tokens = add_bias(matmul_nt(patches, resized_kernel(patch)), bias_);
  return add(tokens, resized_positions(patch));
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, ParameterStore<T>& store, Rng& rng)
    : config_(config), embedder_(config, store, rng) {
  config.validate();
  for (std::size_t i = 0; i < config.depth; ++i) {
    blocks_.push_back(VitBlock<T>::create(store, "block" + std::to_string(i), config.embed_dim, config.heads,
                                          config.mlp_ratio, rng));
    if (std::find(config.mst_blocks.begin(), config.mst_blocks.end(), i) != config.mst_blocks.end()) {
      fusion_.emplace(i, MstBlock<T>::create(store, "mst" + std::to_string(i), config.embed_dim, config.heads, rng));
    }
  }
}

template <typename T>
TokenSet<T> Encoder<T>::embed(const Tensor<T>& x) const {
  TokenSet<T> t;
  t.base = embedder_.embed(x, config_.base_patch);
  t.base_grid = config_.grid(config_.base_patch);
  // The auxiliary streams are only consumed by fusion units.
  if (!fusion_.empty()) {
    t.tiny = embedder_.embed(x, config_.tiny_patch);
    t.large = embedder_.embed(x, config_.large_patch);
  }
  t.tiny_grid = config_.grid(config_.tiny_patch);
  t.large_grid = config_.grid(config_.large_patch);
  return t;
}

template <typename T>
TokenSet<T> Encoder<T>::encode(const Tensor<T>& x, std::span<const Point> positives, FusionMode mode, Rng* rng,
                               EncodeTrace<T>* trace) const {
  return encode_tokens(embed(x), positives, mode, rng, trace);
}

template <typename T>
TokenSet<T> Encoder<T>::encode_tokens(TokenSet<T> tokens, std::span<const Point> positives, FusionMode mode,
                                      Rng* rng, EncodeTrace<T>* trace) const {
  const MstGeometry geometry{config_.base_patch, config_.grid(config_.base_patch), config_.k_divisor,
                             config_.pool_ratio};
  MstStreams<T> streams{tokens.base, tokens.tiny, tokens.large};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    std::vector<Tensor<T>>* attention = nullptr;
    if (trace != nullptr && trace->keep_attention) attention = &trace->attention.emplace_back();
    streams.base = blocks_[i](streams.base, attention);
    auto it = fusion_.find(i);
    if (it == fusion_.end()) continue;
    MstTrace<T>* block_trace = nullptr;
    if (trace != nullptr) {
      trace->blocks.push_back(i);
      block_trace = &trace->fusion.emplace_back();
    }
    streams = it->second(streams, positives, geometry, mode, rng, block_trace);
  }
  tokens.base = streams.base;
  tokens.tiny = streams.tiny;
  tokens.large = streams.large;
  return tokens;
}

template Tensor<float> resize_patch_kernel(const Tensor<float>&, std::size_t);
template Tensor<double> resize_patch_kernel(const Tensor<double>&, std::size_t);
template Tensor<float> resize_position_grid(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> resize_position_grid(const Tensor<double>&, std::size_t, std::size_t);
template class PatchEmbedder<float>;
template class PatchEmbedder<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace mst
