#include "mst/segmenter.hpp"

namespace mst {

template <typename T>
ForwardResult<T> ModelSegmenter<T>::run(const Image& image, const ClickState& state) const {
  const std::size_t w = model_.config().image_size;
  if (image.width != w || image.height != w) {
    throw DimensionError("segmenter: image must be " + std::to_string(w) + "x" + std::to_string(w));
  }
  NoGradScope<T> no_grad;
  const Tensor<T> input = build_input<T>(image, state, model_.config().click_radius());
  const auto positives = state.positives();
  return model_.forward(input, positives, FusionMode::Inference, nullptr);
}

template <typename T>
std::vector<float> ModelSegmenter<T>::predict(const Image& image, const ClickState& state) {
  const auto probs = model_.probabilities(run(image, state).logits);
  return {probs.begin(), probs.end()};
}

std::vector<float> LetterboxSegmenter::predict(const Image& image, const ClickState& state) {
  if (image.width == side_ && image.height == side_) return inner_.predict(image, state);
  const auto box = Letterbox::fit(image.width, image.height, side_);
  ClickState square;
  for (const auto& c : state.clicks) square.clicks.push_back({box.to_square(c.point), c.positive});
  if (!state.previous.empty()) square.previous = letterbox_plane(state.previous, box);
  return unletterbox_plane(inner_.predict(letterbox_image(image, box), square), box);
}

template class ModelSegmenter<float>;
template class ModelSegmenter<double>;

}  // namespace mst
