#pragma once

#include "mst/evaluation.hpp"
#include "mst/model.hpp"

namespace mst {

/// Runs a model in inference mode without recording gradients.
template <typename T>
class ModelSegmenter final : public Segmenter {
 public:
  explicit ModelSegmenter(const MstModel<T>& model) : model_(model) {}

  std::vector<float> predict(const Image& image, const ClickState& state) override;
  /// Forward pass with the fusion trace, for inspection.
  ForwardResult<T> run(const Image& image, const ClickState& state) const;

 private:
  const MstModel<T>& model_;
};

/// Adapts a square-input segmenter to images of any size: letterbox in,
/// clicks and previous mask mapped to the square, prediction mapped back.
class LetterboxSegmenter final : public Segmenter {
 public:
  LetterboxSegmenter(Segmenter& inner, std::size_t side) : inner_(inner), side_(side) {}
  std::vector<float> predict(const Image& image, const ClickState& state) override;

 private:
  Segmenter& inner_;
  std::size_t side_;
};

extern template class ModelSegmenter<float>;
extern template class ModelSegmenter<double>;

}  // namespace mst
