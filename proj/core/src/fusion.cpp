#include "mst/fusion.hpp"

#include <algorithm>
#include <numeric>

namespace mst {

const char* scale_name(Scale s) { return s == Scale::Tiny ? "tiny" : "large"; }

std::vector<std::size_t> clicked_token_indices(std::span<const Point> positives, std::size_t patch,
                                               std::size_t grid) {
  const int side = static_cast<int>(patch * grid);
  std::vector<std::size_t> indices;
  for (const Point& p : positives) {
    if (p.x < 0 || p.y < 0 || p.x >= side || p.y >= side) {
      throw ContractError("click (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside image");
    }
    const std::size_t idx = static_cast<std::size_t>(p.y) / patch * grid + static_cast<std::size_t>(p.x) / patch;
    if (std::find(indices.begin(), indices.end(), idx) == indices.end()) indices.push_back(idx);
  }
  return indices;
}

template <typename T>
std::optional<ClickKernel<T>> compute_kernel(const Tensor<T>& base, std::span<const Point> positives,
                                             std::size_t patch, std::size_t grid) {
  if (base.rank() != 2 || base.dim(0) != grid * grid) {
    throw DimensionError("compute_kernel: base tokens " + shape_string(base.shape()) + " do not match grid " +
                         std::to_string(grid));
  }
  auto indices = clicked_token_indices(positives, patch, grid);
  if (indices.empty()) return std::nullopt;
  Tensor<T> picked = gather_rows(base, std::span<const std::size_t>(indices));
  Tensor<T> vec = reshape(mean_axis(picked, 0), Shape{1, base.dim(1)});
  return ClickKernel<T>{std::move(vec), std::move(indices)};
}

template <typename T>
Tensor<T> similarity_scores(const Tensor<T>& kernel, const Tensor<T>& tokens) {
  return sigmoid(cosine_rows(kernel, tokens));
}

template <typename T>
TopK<T> topk(std::span<const T> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ContractError("topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  TopK<T> out;
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i : out.indices) out.scores.push_back(scores[i]);
  return out;
}

std::size_t selection_count(std::size_t length, std::size_t divisor) {
  if (divisor == 0) throw ConfigError("selection_count: zero divisor");
  return std::max<std::size_t>(1, length / divisor);
}

template <typename T>
T SelectionResult<T>::mean_top_score() const {
  const auto v = top_scores.values();
  return std::accumulate(v.begin(), v.end(), T(0)) / static_cast<T>(v.size());
}

template <typename T>
Tensor<T> select(const Tensor<T>& selection, const Tensor<T>& tokens) {
  return matmul(selection, tokens);
}

template <typename T>
SelectionResult<T> select_tokens(const Tensor<T>& kernel, const Tensor<T>& tokens, Scale scale,
                                 std::size_t k_divisor) {
  SelectionResult<T> r;
  r.scale = scale;
  r.scores = similarity_scores(kernel, tokens);
  const std::size_t length = tokens.dim(0);
  auto best = topk<T>(r.scores.values(), selection_count(length, k_divisor));
  r.indices = std::move(best.indices);
  r.top_scores = gather_rows(r.scores, std::span<const std::size_t>(r.indices));
  r.selection = build_selection(r.top_scores, std::span<const std::size_t>(r.indices), length);
  r.selected = select(r.selection, tokens);
  return r;
}

Scale choose_scale(double mean_tiny, double mean_large, FusionMode mode, Rng* rng) {
  if (mode == FusionMode::Training) {
    if (rng == nullptr) throw ContractError("choose_scale: training mode needs a random generator");
    return ((*rng)() >> 63) == 0 ? Scale::Tiny : Scale::Large;
  }
  return mean_large > mean_tiny ? Scale::Large : Scale::Tiny;
}

template <typename T>
CrossAttentionFuse<T> CrossAttentionFuse<T>::create(ParameterStore<T>& store, const std::string& name,
                                                    std::size_t dim, std::size_t heads, Rng& rng) {
  CrossAttentionFuse f;
  f.query_norm = LayerNorm<T>::create(store, name + ".norm_q", dim);
  f.attn = MultiHeadAttention<T>::create(store, name + ".attn", dim, heads, rng);
  return f;
}

template <typename T>
Tensor<T> CrossAttentionFuse<T>::operator()(const Tensor<T>& base, const Tensor<T>& selected,
                                            std::vector<Tensor<T>>* attention) const {
  if (selected.rank() != 2 || selected.dim(0) == 0) return base;
  if (selected.dim(1) != base.dim(1)) {
    throw DimensionError("cross attention: " + shape_string(base.shape()) + " vs " + shape_string(selected.shape()));
  }
  return add(base, attn(query_norm(base), selected, attention));
}

template <typename T>
Tensor<T> average_pool_matrix(std::size_t grid, std::size_t ratio) {
  if (ratio == 0 || grid % ratio != 0) {
    throw ContractError("pool ratio " + std::to_string(ratio) + " does not divide grid " + std::to_string(grid));
  }
  const std::size_t out = grid / ratio;
  const T w = T(1) / static_cast<T>(ratio * ratio);
  std::vector<T> m(out * out * grid * grid, T(0));
  for (std::size_t y = 0; y < grid; ++y)
    for (std::size_t x = 0; x < grid; ++x) {
      const std::size_t row = (y / ratio) * out + x / ratio;
      m[row * grid * grid + y * grid + x] = w;
    }
  return Tensor<T>(Shape{out * out, grid * grid}, std::move(m));
}

template <typename T>
ScaledCrossAttention<T> ScaledCrossAttention<T>::create(ParameterStore<T>& store, const std::string& name,
                                                        std::size_t dim, std::size_t heads, Rng& rng) {
  ScaledCrossAttention s;
  s.query_norm = LayerNorm<T>::create(store, name + ".norm_q", dim);
  s.kv_norm = LayerNorm<T>::create(store, name + ".norm_kv", dim);
  s.attn = MultiHeadAttention<T>::create(store, name + ".attn", dim, heads, rng);
  return s;
}

template <typename T>
Tensor<T> ScaledCrossAttention<T>::operator()(const Tensor<T>& stream, const Tensor<T>& base, std::size_t grid,
                                              std::size_t ratio, std::vector<Tensor<T>>* attention) const {
  if (base.rank() != 2 || base.dim(0) != grid * grid) {
    throw ContractError("scaled cross attention: base tokens " + shape_string(base.shape()) +
                        " are not a square grid of side " + std::to_string(grid));
  }
  if (ratio == 0 || grid % ratio != 0) {
    throw ContractError("pool ratio " + std::to_string(ratio) + " does not divide grid " + std::to_string(grid));
  }
  const Tensor<T> pooled = ratio == 1 ? base : matmul(average_pool_matrix<T>(grid, ratio), base);
  return add(stream, attn(query_norm(stream), kv_norm(pooled), attention));
}

template <typename T>
MstBlock<T> MstBlock<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                                std::size_t heads, Rng& rng) {
  MstBlock b;
  b.fuse = CrossAttentionFuse<T>::create(store, name + ".fuse", dim, heads, rng);
  b.update_tiny = ScaledCrossAttention<T>::create(store, name + ".update_tiny", dim, heads, rng);
  b.update_large = ScaledCrossAttention<T>::create(store, name + ".update_large", dim, heads, rng);
  return b;
}

template <typename T>
MstStreams<T> MstBlock<T>::operator()(const MstStreams<T>& in, std::span<const Point> positives,
                                      const MstGeometry& geometry, FusionMode mode, Rng* rng,
                                      MstTrace<T>* trace) const {
  auto kernel = compute_kernel(in.base, positives, geometry.base_patch, geometry.base_grid);
  if (!kernel) {
    if (trace != nullptr) *trace = MstTrace<T>{};
    return in;
  }
  SelectionResult<T> tiny = select_tokens(kernel->vector, in.tiny, Scale::Tiny, geometry.k_divisor);
  SelectionResult<T> large = select_tokens(kernel->vector, in.large, Scale::Large, geometry.k_divisor);
  const Scale chosen = choose_scale(static_cast<double>(tiny.mean_top_score()),
                                    static_cast<double>(large.mean_top_score()), mode, rng);
  MstStreams<T> out;
  out.base = fuse(in.base, chosen == Scale::Tiny ? tiny.selected : large.selected);
  out.tiny = update_tiny(in.tiny, out.base, geometry.base_grid, geometry.pool_ratio);
  out.large = update_large(in.large, out.base, geometry.base_grid, geometry.pool_ratio);
  if (trace != nullptr) {
    trace->kernel = std::move(kernel);
    trace->tiny = std::move(tiny);
    trace->large = std::move(large);
    trace->chosen = chosen;
    trace->fused = true;
  }
  return out;
}

#define MST_INSTANTIATE_FUSION(T)                                                                           \
  template std::optional<ClickKernel<T>> compute_kernel(const Tensor<T>&, std::span<const Point>, std::size_t, \
                                                        std::size_t);                                       \
  template Tensor<T> similarity_scores(const Tensor<T>&, const Tensor<T>&);                                 \
  template TopK<T> topk(std::span<const T>, std::size_t);                                                   \
  template struct SelectionResult<T>;                                                                       \
  template Tensor<T> select(const Tensor<T>&, const Tensor<T>&);                                            \
  template SelectionResult<T> select_tokens(const Tensor<T>&, const Tensor<T>&, Scale, std::size_t);        \
  template struct CrossAttentionFuse<T>;                                                                    \
  template Tensor<T> average_pool_matrix(std::size_t, std::size_t);                                         \
  template struct ScaledCrossAttention<T>;                                                                  \
  template struct MstBlock<T>;

MST_INSTANTIATE_FUSION(float)
MST_INSTANTIATE_FUSION(double)

#undef MST_INSTANTIATE_FUSION

}  // namespace mst
