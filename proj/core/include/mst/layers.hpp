#pragma once

#include <string>
#include <vector>

#include "mst/ops.hpp"
#include "mst/params.hpp"

namespace mst {

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, double stddev = 0.02);
  Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm create(ParameterStore<T>& store, const std::string& name, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Multi-head scaled dot-product attention, queries from one stream and
/// keys/values from another.
template <typename T>
struct MultiHeadAttention {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> out;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                                   std::size_t heads, Rng& rng);
  /// `attention`, when given, receives the per-head softmax matrices [Lq, Lk].
  Tensor<T> operator()(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                       std::vector<Tensor<T>>* attention = nullptr) const;
};

template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  static Mlp create(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden,
                    Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
template <typename T>
struct VitBlock {
  LayerNorm<T> norm1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm2;
  Mlp<T> mlp;

  static VitBlock create(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads,
                         std::size_t mlp_ratio, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, std::vector<Tensor<T>>* attention = nullptr) const;
};

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct LayerNorm<float>;
extern template struct LayerNorm<double>;
extern template struct MultiHeadAttention<float>;
extern template struct MultiHeadAttention<double>;
extern template struct Mlp<float>;
extern template struct Mlp<double>;
extern template struct VitBlock<float>;
extern template struct VitBlock<double>;

}  // namespace mst
