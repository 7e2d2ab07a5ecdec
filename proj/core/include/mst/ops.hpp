#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mst/tensor.hpp"

// Differentiable tensor operations. Every op records its backward rule on the
// active tape when at least one operand requires a gradient.
namespace mst {

// Elementwise, identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

/// x[m,n] + bias[n] broadcast over rows.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// a[m,k] * b[k,n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a[m,k] * b[n,k]^T.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Mean of a 2-D tensor along `axis` (0: over rows -> [n], 1: over columns -> [m]).
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

/// Row softmax of scale*x over the last axis, max-subtracted.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x, T scale = T(1));

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);

/// Cosine similarity of a[1,C] (or [C]) against each row of b[L,C] -> [L].
/// A zero-norm operand gives 0.
template <typename T> Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b);
/// Euclidean distance between two same-shape tensors -> scalar.
template <typename T> Tensor<T> l2_distance(const Tensor<T>& a, const Tensor<T>& b);
/// Distance from q[1,C] to each row of b[L,C] -> [L].
template <typename T> Tensor<T> row_distances(const Tensor<T>& q, const Tensor<T>& b);

/// Per-row layer normalization of x[L,C] with affine gamma[C], beta[C].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

/// Rows of x[L,C] (or entries of x[L]) at `index`.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index);

/// k x L matrix with scores[i] at (i, index[i]) and zeros elsewhere.
template <typename T>
Tensor<T> build_selection(const Tensor<T>& scores, std::span<const std::size_t> index, std::size_t length);

template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

/// Non-overlapping p x p patches of img[c,h,w] -> [(h/p)*(w/p), c*p*p],
/// patch-major in raster order, columns ordered (channel, dy, dx).
template <typename T> Tensor<T> extract_patches(const Tensor<T>& image, std::size_t patch);

/// Bilinear resampling (corner aligned) of x[n,h,w] -> [n,out_h,out_w].
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Mean focal loss of logits[n] against binary targets.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, std::span<const T> target, T gamma, T alpha);

/// 1-D corner-aligned linear interpolation weights, out x in.
std::vector<double> interpolation_matrix(std::size_t in, std::size_t out);

}  // namespace mst
