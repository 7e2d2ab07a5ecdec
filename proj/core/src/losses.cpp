#include "mst/losses.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

namespace mst {

template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, std::span<const std::uint8_t> mask, FocalOptions options) {
  if (logits.numel() != mask.size()) {
    throw DimensionError("segmentation_loss: logits " + shape_string(logits.shape()) + " vs mask of " +
                         std::to_string(mask.size()));
  }
  std::vector<T> target(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > 1) throw ContractError("segmentation_loss: mask is not binary");
    target[i] = static_cast<T>(mask[i]);
  }
  return focal_loss(reshape(logits, Shape{logits.numel()}), std::span<const T>(target),
                    static_cast<T>(options.gamma), static_cast<T>(options.alpha));
}

std::vector<std::uint8_t> rasterize_token_gt(std::span<const std::uint8_t> mask, std::size_t side, std::size_t patch) {
  if (mask.size() != side * side) throw DimensionError("rasterize_token_gt: mask is not side x side");
  if (patch == 0 || side % patch != 0) throw ContractError("rasterize_token_gt: patch must divide the side");
  const std::size_t g = side / patch;
  std::vector<std::uint8_t> out(g * g, 0);
  const std::size_t area = patch * patch;
  for (std::size_t ty = 0; ty < g; ++ty)
    for (std::size_t tx = 0; tx < g; ++tx) {
      std::size_t count = 0;
      for (std::size_t y = ty * patch; y < (ty + 1) * patch; ++y)
        for (std::size_t x = tx * patch; x < (tx + 1) * patch; ++x) count += mask[y * side + x] != 0;
      out[ty * g + tx] = 2 * count > area ? 1 : 0;
    }
  return out;
}

template <typename T>
TripletTerm<T> triplet_token_loss(const Tensor<T>& query, const Tensor<T>& selected,
                                  std::span<const std::uint8_t> labels, TripletOptions options, Rng& rng) {
  if (selected.rank() != 2 || labels.size() != selected.dim(0)) {
    throw DimensionError("triplet_token_loss: labels do not match selected " + shape_string(selected.shape()));
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  TripletTerm<T> term;
  if (pos.empty() || neg.empty()) {
    term.loss = Tensor<T>::scalar(T(0));
    return term;
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(pos.size() * neg.size());
  for (std::size_t p : pos)
    for (std::size_t n : neg) pairs.emplace_back(p, n);
  if (pairs.size() > options.max_pairs) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(options.max_pairs);
  }

  const Tensor<T> dist = row_distances(query, selected);
  std::vector<std::size_t> pi(pairs.size()), ni(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pi[i] = pairs[i].first;
    ni[i] = pairs[i].second;
  }
  const Tensor<T> dp = gather_rows(dist, std::span<const std::size_t>(pi));
  const Tensor<T> dn = gather_rows(dist, std::span<const std::size_t>(ni));
  term.loss = mean(softplus(sub(dp, dn)));
  term.pairs = pairs.size();
  return term;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& seg, const Tensor<T>& contrastive) {
  return add(seg, contrastive);
}

template Tensor<float> segmentation_loss(const Tensor<float>&, std::span<const std::uint8_t>, FocalOptions);
template Tensor<double> segmentation_loss(const Tensor<double>&, std::span<const std::uint8_t>, FocalOptions);
template TripletTerm<float> triplet_token_loss(const Tensor<float>&, const Tensor<float>&,
                                               std::span<const std::uint8_t>, TripletOptions, Rng&);
template TripletTerm<double> triplet_token_loss(const Tensor<double>&, const Tensor<double>&,
                                                std::span<const std::uint8_t>, TripletOptions, Rng&);
template Tensor<float> total_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> total_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace mst
