#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mst/encoder.hpp"
#include "mst/heads.hpp"
#include "mst/losses.hpp"

namespace mst {

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // [W/4, W/4, 1]
  TokenSet<T> tokens;
  EncodeTrace<T> trace;
};

/// Encoder, feature pyramid and per-pixel head.
template <typename T>
class MstModel {
 public:
  explicit MstModel(const ModelConfig& config);

  /// input: [6, W, W] (RGB, positive clicks, negative clicks, previous mask).
  ForwardResult<T> forward(const Tensor<T>& input, std::span<const Point> positives, FusionMode mode, Rng* rng,
                           bool keep_attention = false) const;

  /// sigmoid(logits) resampled to W x W, row-major.
  std::vector<T> probabilities(const Tensor<T>& logits) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  const Encoder<T>& encoder() const { return encoder_; }

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  Encoder<T> encoder_;
  SimpleFpn<T> fpn_;
  MlpHead<T> head_;
};

struct LossOptions {
  bool contrastive = true;
  FocalOptions focal;
  TripletOptions triplet;
};

/// Focal loss on the 1/4 grid plus the triplet token loss of every fusion
/// block (per block: sum over scales; averaged over blocks that fused).
/// `gt` is the W x W binary target.
template <typename T>
LossReport<T> compute_loss(const ModelConfig& config, const ForwardResult<T>& result,
                           std::span<const std::uint8_t> gt, const LossOptions& options, Rng& rng);

/// Fraction of selected multi-scale tokens whose cell is foreground, over
/// every fusion block and both scales; nullopt when nothing was selected.
template <typename T>
std::optional<double> selection_precision(const ModelConfig& config, const EncodeTrace<T>& trace,
                                          std::span<const std::uint8_t> gt);

extern template class MstModel<float>;
extern template class MstModel<double>;

}  // namespace mst
