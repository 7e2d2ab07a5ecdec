#include "mst/heads.hpp"

#include <cmath>

namespace mst {
namespace {

std::size_t square_side(std::size_t n) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw ContractError("token count " + std::to_string(n) + " is not a square grid");
  return side;
}

}  // namespace

template <typename T>
Tensor<T> resample_tokens(const Tensor<T>& x, std::size_t grid, std::size_t out_grid) {
  if (grid == out_grid) return x;
  const std::size_t c = x.dim(1);
  Tensor<T> planes = reshape(transpose(x), Shape{c, grid, grid});
  return transpose(reshape(resize_bilinear(planes, out_grid, out_grid), Shape{c, out_grid * out_grid}));
}

std::vector<std::size_t> pixel_shuffle_index(std::size_t grid) {
  const std::size_t out = 2 * grid;
  std::vector<std::size_t> idx(out * out);
  for (std::size_t y = 0; y < out; ++y)
    for (std::size_t x = 0; x < out; ++x) {
      const std::size_t cell = (y / 2) * grid + x / 2;
      const std::size_t sub = (y % 2) * 2 + x % 2;
      idx[y * out + x] = cell * 4 + sub;
    }
  return idx;
}

template <typename T>
Tensor<T> ceil_pool_matrix(std::size_t grid) {
  const std::size_t out = (grid + 1) / 2;
  std::vector<T> m(out * out * grid * grid, T(0));
  for (std::size_t oy = 0; oy < out; ++oy)
    for (std::size_t ox = 0; ox < out; ++ox) {
      const std::size_t y1 = std::min(grid, 2 * oy + 2), x1 = std::min(grid, 2 * ox + 2);
      const T w = T(1) / static_cast<T>((y1 - 2 * oy) * (x1 - 2 * ox));
      for (std::size_t y = 2 * oy; y < y1; ++y)
        for (std::size_t x = 2 * ox; x < x1; ++x) m[(oy * out + ox) * grid * grid + y * grid + x] = w;
    }
  return Tensor<T>(Shape{out * out, grid * grid}, std::move(m));
}

template <typename T>
Deconv2x<T> Deconv2x<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                                Rng& rng) {
  Deconv2x d;
  d.proj = Linear<T>::create(store, name, in, 4 * out, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  d.out_channels = out;
  return d;
}

template <typename T>
Tensor<T> Deconv2x<T>::operator()(const Tensor<T>& x, std::size_t grid) const {
  const Tensor<T> y = reshape(proj(x), Shape{grid * grid * 4, out_channels});
  const auto idx = pixel_shuffle_index(grid);
  return gather_rows(y, std::span<const std::size_t>(idx));
}

template <typename T>
SimpleFpn<T>::SimpleFpn(std::size_t dim, std::size_t out_channels, ParameterStore<T>& store, Rng& rng)
    : dim_(dim), out_channels_(out_channels) {
  const std::size_t half = std::max<std::size_t>(1, dim / 2), quarter = std::max<std::size_t>(1, dim / 4);
  auto proj = [&](const std::string& name, std::size_t in) {
    return Linear<T>::create(store, name, in, out_channels, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  };
  up4_a = Deconv2x<T>::create(store, "fpn.up4a", dim, half, rng);
  up4_b = Deconv2x<T>::create(store, "fpn.up4b", half, quarter, rng);
  up2 = Deconv2x<T>::create(store, "fpn.up2", dim, half, rng);
  proj_up4 = proj("fpn.proj_up4", quarter);
  proj_up2 = proj("fpn.proj_up2", half);
  proj_same = proj("fpn.proj_same", dim);
  proj_down = proj("fpn.proj_down", dim);
}

template <typename T>
Tensor<T> SimpleFpn<T>::operator()(const Tensor<T>& tokens) const {
  if (tokens.rank() != 2 || tokens.dim(1) != dim_) {
    throw DimensionError("simple_fpn: unexpected tokens " + shape_string(tokens.shape()));
  }
  const std::size_t g = square_side(tokens.dim(0));
  const std::size_t target = 4 * g;

  const Tensor<T> a = proj_up4(up4_b(gelu(up4_a(tokens, g)), 2 * g));
  const Tensor<T> b = resample_tokens(proj_up2(up2(tokens, g)), 2 * g, target);
  const Tensor<T> c = resample_tokens(proj_same(tokens), g, target);
  const Tensor<T> pooled = matmul(ceil_pool_matrix<T>(g), tokens);
  const Tensor<T> d = resample_tokens(proj_down(pooled), (g + 1) / 2, target);
  return add(add(a, b), add(c, d));
}

template <typename T>
MlpHead<T>::MlpHead(std::size_t in, std::size_t hidden, ParameterStore<T>& store, Rng& rng) {
  fc1 = Linear<T>::create(store, "head.fc1", in, hidden, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  fc2 = Linear<T>::create(store, "head.fc2", hidden, 1, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
}

template <typename T>
Tensor<T> MlpHead<T>::operator()(const Tensor<T>& features) const {
  const std::size_t n = square_side(features.dim(0));
  return reshape(fc2(gelu(fc1(features))), Shape{n, n, 1});
}

template Tensor<float> resample_tokens(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> resample_tokens(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> ceil_pool_matrix(std::size_t);
template Tensor<double> ceil_pool_matrix(std::size_t);
template struct Deconv2x<float>;
template struct Deconv2x<double>;
template class SimpleFpn<float>;
template class SimpleFpn<double>;
template class MlpHead<float>;
template class MlpHead<double>;

}  // namespace mst
