#include "mst/layers.hpp"

#include <cmath>

namespace mst {

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                            Rng& rng, double stddev) {
  Linear l;
  l.weight = store.normal(name + ".weight", Shape{in, out}, stddev, rng);
  l.bias = store.constant(name + ".bias", Shape{out}, T(0));
  return l;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
  LayerNorm n;
  n.gamma = store.constant(name + ".gamma", Shape{dim}, T(1));
  n.beta = store.constant(name + ".beta", Shape{dim}, T(0));
  return n;
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::create(ParameterStore<T>& store, const std::string& name,
                                                    std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) throw ConfigError("attention: dim not divisible by heads");
  MultiHeadAttention a;
  a.query = Linear<T>::create(store, name + ".q", dim, dim, rng);
  a.key = Linear<T>::create(store, name + ".k", dim, dim, rng);
  a.value = Linear<T>::create(store, name + ".v", dim, dim, rng);
  a.out = Linear<T>::create(store, name + ".o", dim, dim, rng);
  a.heads = heads;
  return a;
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                                            std::vector<Tensor<T>>* attention) const {
  const Tensor<T> q = query(q_in);
  const Tensor<T> k = key(kv_in);
  const Tensor<T> v = value(kv_in);
  const std::size_t dim = q.dim(1);
  const std::size_t head_dim = dim / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<Tensor<T>> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t start = h * head_dim;
    const Tensor<T> qh = heads == 1 ? q : slice_cols(q, start, head_dim);
    const Tensor<T> kh = heads == 1 ? k : slice_cols(k, start, head_dim);
    const Tensor<T> vh = heads == 1 ? v : slice_cols(v, start, head_dim);
    Tensor<T> a = softmax_rows(matmul_nt(qh, kh), scale_factor);
    if (attention != nullptr) attention->push_back(a);
    parts.push_back(matmul(a, vh));
  }
  const Tensor<T> merged = heads == 1 ? parts.front() : concat_cols<T>(parts);
  return out(merged);
}

template <typename T>
Mlp<T> Mlp<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden,
                      Rng& rng) {
  Mlp m;
  m.fc1 = Linear<T>::create(store, name + ".fc1", dim, hidden, rng);
  m.fc2 = Linear<T>::create(store, name + ".fc2", hidden, dim, rng);
  return m;
}

template <typename T>
VitBlock<T> VitBlock<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                                std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
  VitBlock b;
  b.norm1 = LayerNorm<T>::create(store, name + ".norm1", dim);
  b.attn = MultiHeadAttention<T>::create(store, name + ".attn", dim, heads, rng);
  b.norm2 = LayerNorm<T>::create(store, name + ".norm2", dim);
  b.mlp = Mlp<T>::create(store, name + ".mlp", dim, dim * mlp_ratio, rng);
  return b;
}

template <typename T>
Tensor<T> VitBlock<T>::operator()(const Tensor<T>& x, std::vector<Tensor<T>>* attention) const {
  const Tensor<T> h = norm1(x);
  const Tensor<T> y = add(x, attn(h, h, attention));
  return add(y, mlp(norm2(y)));
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct VitBlock<float>;
template struct VitBlock<double>;

}  // namespace mst
