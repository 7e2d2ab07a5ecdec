#include "mst/model.hpp"

namespace mst {

template <typename T>
MstModel<T>::MstModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.init_seed);
  encoder_ = Encoder<T>(config_, store_, rng);
  fpn_ = SimpleFpn<T>(config_.embed_dim, config_.fpn_channels, store_, rng);
  head_ = MlpHead<T>(config_.fpn_channels, config_.head_hidden, store_, rng);
}

template <typename T>
ForwardResult<T> MstModel<T>::forward(const Tensor<T>& input, std::span<const Point> positives, FusionMode mode,
                                      Rng* rng, bool keep_attention) const {
  ForwardResult<T> r;
  r.trace.keep_attention = keep_attention;
  r.tokens = encoder_.encode(input, positives, mode, rng, &r.trace);
  r.logits = head_(fpn_(r.tokens.base));
  return r;
}

template <typename T>
std::vector<T> MstModel<T>::probabilities(const Tensor<T>& logits) const {
  NoGradScope<T> no_grad;
  const std::size_t n = logits.dim(0), w = config_.image_size;
  const Tensor<T> p = resize_bilinear(reshape(sigmoid(logits), Shape{1, n, n}), w, w);
  return {p.values().begin(), p.values().end()};
}

namespace {

template <typename T>
std::vector<std::uint8_t> labels_at(std::span<const std::uint8_t> cells, const std::vector<std::size_t>& idx) {
  std::vector<std::uint8_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = cells[idx[i]];
  return out;
}

}  // namespace

template <typename T>
LossReport<T> compute_loss(const ModelConfig& config, const ForwardResult<T>& result,
                           std::span<const std::uint8_t> gt, const LossOptions& options, Rng& rng) {
  const std::size_t w = config.image_size;
  if (gt.size() != w * w) throw DimensionError("compute_loss: gt must be W x W");
  LossReport<T> report;
  const auto target = downsample_mask(gt, w, 4);
  const Tensor<T> seg = segmentation_loss(result.logits, std::span<const std::uint8_t>(target), options.focal);

  Tensor<T> contrastive = Tensor<T>::scalar(T(0));
  if (options.contrastive) {
    const auto tiny_cells = rasterize_token_gt(gt, w, config.tiny_patch);
    const auto large_cells = rasterize_token_gt(gt, w, config.large_patch);
    std::size_t blocks = 0;
    Tensor<T> acc;
    for (const auto& block : result.trace.fusion) {
      if (!block.kernel) continue;
      const Tensor<T>& q = block.kernel->vector;
      Tensor<T> block_loss = Tensor<T>::scalar(T(0));
      if (block.tiny) {
        const auto labels = labels_at<T>(tiny_cells, block.tiny->indices);
        auto term = triplet_token_loss(q, block.tiny->selected, std::span<const std::uint8_t>(labels), options.triplet,
                                       rng);
        report.tiny_pairs += term.pairs;
        if (term.pairs > 0) block_loss = add(block_loss, term.loss);
      }
      if (block.large) {
        const auto labels = labels_at<T>(large_cells, block.large->indices);
        auto term = triplet_token_loss(q, block.large->selected, std::span<const std::uint8_t>(labels),
                                       options.triplet, rng);
        report.large_pairs += term.pairs;
        if (term.pairs > 0) block_loss = add(block_loss, term.loss);
      }
      acc = acc.defined() ? add(acc, block_loss) : block_loss;
      ++blocks;
    }
    if (blocks > 0) contrastive = scale(acc, T(1) / static_cast<T>(blocks));
  }
  report.total = total_loss(seg, contrastive);
  report.seg = static_cast<double>(seg.item());
  report.contrastive = static_cast<double>(contrastive.item());
  return report;
}

template <typename T>
std::optional<double> selection_precision(const ModelConfig& config, const EncodeTrace<T>& trace,
                                          std::span<const std::uint8_t> gt) {
  const std::size_t w = config.image_size;
  const auto tiny_cells = rasterize_token_gt(gt, w, config.tiny_patch);
  const auto large_cells = rasterize_token_gt(gt, w, config.large_patch);
  std::size_t hit = 0, total = 0;
  for (const auto& block : trace.fusion) {
    if (block.tiny)
      for (std::size_t i : block.tiny->indices) hit += tiny_cells[i], ++total;
    if (block.large)
      for (std::size_t i : block.large->indices) hit += large_cells[i], ++total;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(total);
}

template class MstModel<float>;
template class MstModel<double>;
template LossReport<float> compute_loss(const ModelConfig&, const ForwardResult<float>&, std::span<const std::uint8_t>,
                                        const LossOptions&, Rng&);
template LossReport<double> compute_loss(const ModelConfig&, const ForwardResult<double>&,
                                         std::span<const std::uint8_t>, const LossOptions&, Rng&);
template std::optional<double> selection_precision(const ModelConfig&, const EncodeTrace<float>&,
                                                   std::span<const std::uint8_t>);
template std::optional<double> selection_precision(const ModelConfig&, const EncodeTrace<double>&,
                                                   std::span<const std::uint8_t>);

}  // namespace mst
