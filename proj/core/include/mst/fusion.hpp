#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mst/geometry.hpp"
#include "mst/layers.hpp"

// Multi-scale token selection and fusion: the click kernel, similarity
// scoring, differentiable top-k selection, scale choice, and the two
// attention paths that exchange information between base and multi-scale
// tokens.
namespace mst {

enum class Scale { Tiny, Large };
enum class FusionMode { Inference, Training };

const char* scale_name(Scale s);

/// Mean of the positively clicked base tokens.
template <typename T>
struct ClickKernel {
  Tensor<T> vector;                  // [1, C]
  std::vector<std::size_t> indices;  // distinct base-token indices, click order
};

/// Base-token index holding each positive click, deduplicated, in click order.
/// `patch` is the base patch size in pixels and `grid` the base grid side.
std::vector<std::size_t> clicked_token_indices(std::span<const Point> positives, std::size_t patch,
                                               std::size_t grid);

/// Kernel from positively clicked base tokens; nullopt when there are none.
template <typename T>
std::optional<ClickKernel<T>> compute_kernel(const Tensor<T>& base, std::span<const Point> positives,
                                             std::size_t patch, std::size_t grid);

/// sigmoid(cos(kernel, token)) for every row of tokens[L, C] -> [L].
template <typename T>
Tensor<T> similarity_scores(const Tensor<T>& kernel, const Tensor<T>& tokens);

template <typename T>
struct TopK {
  std::vector<T> scores;
  std::vector<std::size_t> indices;
};

/// k largest values, descending; equal values keep the lower index first.
template <typename T>
TopK<T> topk(std::span<const T> scores, std::size_t k);

/// floor(length / divisor), at least 1.
std::size_t selection_count(std::size_t length, std::size_t divisor);

template <typename T>
struct SelectionResult {
  Scale scale = Scale::Tiny;
  Tensor<T> scores;                  // [L]
  Tensor<T> top_scores;              // [k], differentiable
  std::vector<std::size_t> indices;  // [k]
  Tensor<T> selection;               // [k, L], one score-valued entry per row
  Tensor<T> selected;                // [k, C] = selection * tokens
  T mean_top_score() const;
};

/// S * tokens.
template <typename T>
Tensor<T> select(const Tensor<T>& selection, const Tensor<T>& tokens);

/// Score, rank and gather one multi-scale stream.
template <typename T>
SelectionResult<T> select_tokens(const Tensor<T>& kernel, const Tensor<T>& tokens, Scale scale,
                                 std::size_t k_divisor);

/// Inference: argmax of the mean top-k score, ties to the tiny scale.
/// Training: uniform random choice drawn from `rng`.
Scale choose_scale(double mean_tiny, double mean_large, FusionMode mode, Rng* rng);

/// Base tokens attend to the selected tokens; result is added to the base
/// stream. Keys and values are not normalized so that the score scaling of the
/// selected rows reaches the attention.
template <typename T>
struct CrossAttentionFuse {
  LayerNorm<T> query_norm;
  MultiHeadAttention<T> attn;

  static CrossAttentionFuse create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                                   std::size_t heads, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& base, const Tensor<T>& selected,
                       std::vector<Tensor<T>>* attention = nullptr) const;
};

/// Row-stochastic [(g/r)^2, g^2] matrix averaging r x r cells of a g x g grid.
template <typename T>
Tensor<T> average_pool_matrix(std::size_t grid, std::size_t ratio);

/// A multi-scale stream attends to the base tokens average-pooled by `ratio`.
template <typename T>
struct ScaledCrossAttention {
  LayerNorm<T> query_norm;
  LayerNorm<T> kv_norm;
  MultiHeadAttention<T> attn;

  static ScaledCrossAttention create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                                     std::size_t heads, Rng& rng);
  /// `base` is laid out on a square grid of side `grid`; `ratio` must divide it.
  Tensor<T> operator()(const Tensor<T>& stream, const Tensor<T>& base, std::size_t grid, std::size_t ratio,
                       std::vector<Tensor<T>>* attention = nullptr) const;
};

template <typename T>
struct MstTrace {
  std::optional<ClickKernel<T>> kernel;
  std::optional<SelectionResult<T>> tiny;
  std::optional<SelectionResult<T>> large;
  Scale chosen = Scale::Tiny;
  bool fused = false;
};

template <typename T>
struct MstStreams {
  Tensor<T> base;
  Tensor<T> tiny;
  Tensor<T> large;
};

struct MstGeometry {
  std::size_t base_patch = 16;
  std::size_t base_grid = 7;
  std::size_t k_divisor = 12;
  std::size_t pool_ratio = 1;
};

/// One fusion unit: kernel -> similarity -> top-k -> selection per scale ->
/// scale choice -> cross attention into the base stream -> scaled cross
/// attention refresh of both multi-scale streams. Without positive clicks all
/// streams pass through unchanged.
template <typename T>
struct MstBlock {
  CrossAttentionFuse<T> fuse;
  ScaledCrossAttention<T> update_tiny;
  ScaledCrossAttention<T> update_large;

  static MstBlock create(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads,
                         Rng& rng);
  MstStreams<T> operator()(const MstStreams<T>& in, std::span<const Point> positives, const MstGeometry& geometry,
                           FusionMode mode, Rng* rng, MstTrace<T>* trace = nullptr) const;
};

}  // namespace mst
