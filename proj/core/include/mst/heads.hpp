#pragma once

#include <cstddef>
#include <vector>

#include "mst/layers.hpp"

namespace mst {

/// Resample a [g*g, C] token map to [out*out, C] (bilinear, corners aligned).
template <typename T>
Tensor<T> resample_tokens(const Tensor<T>& x, std::size_t grid, std::size_t out_grid);

/// Row index permutation turning [g*g*4, C] (cell-major, 2x2 sub-pixels) into
/// a [(2g)*(2g), C] raster.
std::vector<std::size_t> pixel_shuffle_index(std::size_t grid);

/// 2x2 average pooling with partial windows at odd borders: [ceil(g/2)^2, g^2].
template <typename T>
Tensor<T> ceil_pool_matrix(std::size_t grid);

/// Stride-2, kernel-2 transposed convolution on a token map.
template <typename T>
struct Deconv2x {
  Linear<T> proj;  // C_in -> 4 * C_out
  std::size_t out_channels = 0;

  static Deconv2x create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                         Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, std::size_t grid) const;
};

/// Four-branch feature pyramid from the 1/16 token grid, each branch projected
/// to a common width and resampled to 1/4 resolution, then summed.
template <typename T>
class SimpleFpn {
 public:
  SimpleFpn() = default;
  SimpleFpn(std::size_t dim, std::size_t out_channels, ParameterStore<T>& store, Rng& rng);

  /// tokens [g*g, C] -> [(4g)*(4g), out_channels].
  Tensor<T> operator()(const Tensor<T>& tokens) const;
  std::size_t out_channels() const { return out_channels_; }

 private:
  std::size_t dim_ = 0;
  std::size_t out_channels_ = 0;
  Deconv2x<T> up4_a, up4_b, up2;
  Linear<T> proj_up4, proj_up2, proj_same, proj_down;
};

/// Two affine layers with GELU between; one logit per location.
template <typename T>
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(std::size_t in, std::size_t hidden, ParameterStore<T>& store, Rng& rng);

  /// features [n*n, C'] -> logits [n, n, 1].
  Tensor<T> operator()(const Tensor<T>& features) const;

 private:
  Linear<T> fc1, fc2;
};

extern template class SimpleFpn<float>;
extern template class SimpleFpn<double>;
extern template class MlpHead<float>;
extern template class MlpHead<double>;

}  // namespace mst
