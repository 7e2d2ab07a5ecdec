#include "mst/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

namespace mst {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using Map = Eigen::Map<RowMatrix<T>>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
  }
}

template <typename T>
Tensor<T> make(Shape shape, std::vector<T> values) {
  return Tensor<T>(std::move(shape), std::move(values));
}

// Elementwise unary op with derivative expressed through input and output.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
  std::vector<T> out(x.numel());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor<T> y = make<T>(x.shape(), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, dfdx] {
      auto gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yn->grad[i] * dfdx(xn->value[i], yn->value[i]);
    });
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor<T> y = make<T>(a.shape(), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({a.raw(), b.raw()})) {
    auto an = a.node(), bn = b.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [an, bn, yn] {
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        auto g = n->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  Tensor<T> y = make<T>(a.shape(), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({a.raw(), b.raw()})) {
    auto an = a.node(), bn = b.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [an, bn, yn] {
      if (an->requires_grad) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor<T> y = make<T>(a.shape(), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({a.raw(), b.raw()})) {
    auto an = a.node(), bn = b.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [an, bn, yn] {
      if (an->requires_grad) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * an->value[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.values()[j];
  Tensor<T> y = make<T>(x.shape(), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw(), bias.raw()})) {
    auto xn = x.node(), bn = bias.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, bn, yn, m, n] {
      if (xn->requires_grad) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += yn->grad[i * n + j];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  Map<T>(out.data(), m, n).noalias() = MapC<T>(a.values().data(), m, k) * MapC<T>(b.values().data(), k, n);
  Tensor<T> y = make<T>(Shape{a.dim(0), b.dim(1)}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({a.raw(), b.raw()})) {
    auto an = a.node(), bn = b.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [an, bn, yn, m, k, n] {
      MapC<T> g(yn->grad.data(), m, n);
      if (an->requires_grad) {
        Map<T>(an->grad_buffer().data(), m, k).noalias() += g * MapC<T>(bn->value.data(), k, n).transpose();
      }
      if (bn->requires_grad) {
        Map<T>(bn->grad_buffer().data(), k, n).noalias() += MapC<T>(an->value.data(), m, k).transpose() * g;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_string(a.shape()) + " by transpose of " +
                         shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(0));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  Map<T>(out.data(), m, n).noalias() =
      MapC<T>(a.values().data(), m, k) * MapC<T>(b.values().data(), n, k).transpose();
  Tensor<T> y = make<T>(Shape{a.dim(0), b.dim(0)}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({a.raw(), b.raw()})) {
    auto an = a.node(), bn = b.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [an, bn, yn, m, k, n] {
      MapC<T> g(yn->grad.data(), m, n);
      if (an->requires_grad) {
        Map<T>(an->grad_buffer().data(), m, k).noalias() += g * MapC<T>(bn->value.data(), n, k);
      }
      if (bn->requires_grad) {
        Map<T>(bn->grad_buffer().data(), n, k).noalias() += g.transpose() * MapC<T>(an->value.data(), m, k);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.values()[i * n + j];
  Tensor<T> y = make<T>(Shape{n, m}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, m, n] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += yn->grad[j * m + i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Tensor<T> y = make<T>(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = std::accumulate(x.values().begin(), x.values().end(), T(0));
  Tensor<T> y = Tensor<T>::scalar(total);
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn] {
      auto g = xn->grad_buffer();
      for (auto& v : g) v += yn->grad[0];
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  require_rank(x, 2, "mean_axis");
  if (axis > 1) throw DimensionError("mean_axis: axis must be 0 or 1");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const std::size_t out_n = axis == 0 ? n : m;
  const T inv = T(1) / static_cast<T>(axis == 0 ? m : n);
  std::vector<T> out(out_n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += x.values()[i * n + j];
  for (auto& v : out) v *= inv;
  Tensor<T> y = make<T>(Shape{out_n}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, m, n, axis, inv] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += yn->grad[axis == 0 ? j : i] * inv;
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, T scale_factor) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("softmax_rows: empty last axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  const auto in = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * n;
    T* o = out.data() + r * n;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input");
      peak = std::max(peak, scale_factor * row[j]);
    }
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(scale_factor * row[j] - peak);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  Tensor<T> y = make<T>(x.shape(), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, n, rows, scale_factor] {
      auto g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* p = yn->value.data() + r * n;
        const T* gy = yn->grad.data() + r * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * p[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += scale_factor * p[j] * (gy[j] - dot);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); });
}

template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(b, 2, "cosine_rows");
  const std::size_t rows = b.dim(0), c = b.dim(1);
  if (a.numel() != c) {
    throw DimensionError("cosine_rows: query " + shape_string(a.shape()) + " vs rows " + shape_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  T anorm = 0;
  for (std::size_t j = 0; j < c; ++j) anorm += av[j] * av[j];
  anorm = std::sqrt(anorm);
  std::vector<T> norms(rows), out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0, nn = 0;
    for (std::size_t j = 0; j < c; ++j) {
      dot += av[j] * bv[r * c + j];
      nn += bv[r * c + j] * bv[r * c + j];
    }
    norms[r] = std::sqrt(nn);
    out[r] = (anorm > 0 && norms[r] > 0) ? std::clamp(dot / (anorm * norms[r]), T(-1), T(1)) : T(0);
  }
  Tensor<T> y = make<T>(Shape{rows}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({a.raw(), b.raw()})) {
    auto an = a.node(), bn = b.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [an, bn, yn, rows, c, anorm, norms = std::move(norms)] {
      if (anorm == 0) return;
      for (std::size_t r = 0; r < rows; ++r) {
        if (norms[r] == 0) continue;
        const T g = yn->grad[r];
        if (g == 0) continue;
        const T cosv = yn->value[r];
        const T inv = T(1) / (anorm * norms[r]);
        const T* brow = bn->value.data() + r * c;
        if (an->requires_grad) {
          auto ga = an->grad_buffer();
          for (std::size_t j = 0; j < c; ++j) ga[j] += g * (brow[j] * inv - cosv * an->value[j] / (anorm * anorm));
        }
        if (bn->requires_grad) {
          auto gb = bn->grad_buffer();
          for (std::size_t j = 0; j < c; ++j)
            gb[r * c + j] += g * (an->value[j] * inv - cosv * brow[j] / (norms[r] * norms[r]));
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> l2_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l2_distance");
  return row_distances(reshape(a, Shape{1, a.numel()}), reshape(b, Shape{1, b.numel()}));
}

template <typename T>
Tensor<T> row_distances(const Tensor<T>& q, const Tensor<T>& b) {
  require_rank(b, 2, "row_distances");
  const std::size_t rows = b.dim(0), c = b.dim(1);
  if (q.numel() != c) {
    throw DimensionError("row_distances: query " + shape_string(q.shape()) + " vs rows " + shape_string(b.shape()));
  }
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = q.values()[j] - b.values()[r * c + j];
      acc += d * d;
    }
    out[r] = std::sqrt(acc);
  }
  Tensor<T> y = make<T>(Shape{rows}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({q.raw(), b.raw()})) {
    auto qn = q.node(), bn = b.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [qn, bn, yn, rows, c] {
      for (std::size_t r = 0; r < rows; ++r) {
        const T dist = yn->value[r];
        if (dist == 0) continue;  // subgradient 0 at coincident points
        const T g = yn->grad[r] / dist;
        for (std::size_t j = 0; j < c; ++j) {
          const T diff = qn->value[j] - bn->value[r * c + j];
          if (qn->requires_grad) qn->grad_buffer()[j] += g * diff;
          if (bn->requires_grad) bn->grad_buffer()[r * c + j] -= g * diff;
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: affine params do not match " + shape_string(x.shape()));
  }
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.values().data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mu) * rstd[r];
      out[r * c + j] = xhat[r * c + j] * gamma.values()[j] + beta.values()[j];
    }
  }
  Tensor<T> y = make<T>(x.shape(), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw(), gamma.raw(), beta.raw()})) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, gn, bn, yn, rows, c, xhat = std::move(xhat), rstd = std::move(rstd)] {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gy = yn->grad.data() + r * c;
        const T* xh = xhat.data() + r * c;
        if (gn->requires_grad) {
          auto gg = gn->grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gg[j] += gy[j] * xh[j];
        }
        if (bn->requires_grad) {
          auto gb = bn->grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[j];
        }
        if (xn->requires_grad) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T d = gy[j] * gn->value[j];
            mean_d += d;
            mean_dx += d * xh[j];
          }
          mean_d /= static_cast<T>(c);
          mean_dx /= static_cast<T>(c);
          auto gx = xn->grad_buffer();
          for (std::size_t j = 0; j < c; ++j) {
            const T d = gy[j] * gn->value[j];
            gx[r * c + j] += rstd[r] * (d - mean_d - xh[j] * mean_dx);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("gather_rows: rank must be 1 or 2");
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.rank() == 2 ? x.dim(1) : 1;
  std::vector<T> out(index.size() * width);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                           shape_string(x.shape()));
    }
    std::copy_n(x.values().data() + index[i] * width, width, out.data() + i * width);
  }
  Shape shape = x.rank() == 2 ? Shape{index.size(), width} : Shape{index.size()};
  Tensor<T> y = make<T>(std::move(shape), std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    std::vector<std::size_t> idx(index.begin(), index.end());
    detail::record<T>(tape, y, [xn, yn, width, idx = std::move(idx)] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += yn->grad[i * width + j];
    });
  }
  return y;
}

template <typename T>
Tensor<T> build_selection(const Tensor<T>& scores, std::span<const std::size_t> index, std::size_t length) {
  const std::size_t k = index.size();
  if (scores.numel() != k) {
    throw DimensionError("build_selection: " + std::to_string(scores.numel()) + " scores for " + std::to_string(k) +
                         " indices");
  }
  std::vector<bool> seen(length, false);
  for (std::size_t i : index) {
    if (i >= length) throw ContractError("build_selection: index " + std::to_string(i) + " out of range");
    if (seen[i]) throw ContractError("build_selection: duplicate index " + std::to_string(i));
    seen[i] = true;
  }
  std::vector<T> out(k * length, T(0));
  for (std::size_t r = 0; r < k; ++r) out[r * length + index[r]] = scores.values()[r];
  Tensor<T> y = make<T>(Shape{k, length}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({scores.raw()})) {
    auto sn = scores.node();
    auto* yn = y.raw();
    std::vector<std::size_t> idx(index.begin(), index.end());
    detail::record<T>(tape, y, [sn, yn, length, idx = std::move(idx)] {
      auto g = sn->grad_buffer();
      for (std::size_t r = 0; r < idx.size(); ++r) g[r] += yn->grad[r * length + idx[r]];
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (start + count > cols) throw DimensionError("slice_cols: range exceeds " + shape_string(x.shape()));
  std::vector<T> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.values().data() + r * cols + start, count, out.data() + r * count);
  Tensor<T> y = make<T>(Shape{rows, count}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, rows, cols, start, count] {
      auto g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j) g[r * cols + start + j] += yn->grad[r * count + j];
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.dim(1);
  }
  std::vector<T> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.values().data() + r * w, w, out.data() + r * cols + offset);
    offset += w;
  }
  Tensor<T> y = make<T>(Shape{rows, cols}, std::move(out));
  Tape<T>* tape = nullptr;
  for (const auto& p : parts) {
    if (auto* t = detail::tracking_tape<T>({p.raw()})) tape = t;
  }
  if (tape != nullptr) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto* yn = y.raw();
    detail::record<T>(tape, y, [nodes = std::move(nodes), yn, rows, cols] {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t w = n->shape[1];
        if (n->requires_grad) {
          auto g = n->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += yn->grad[r * cols + off + j];
        }
        off += w;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, std::size_t patch) {
  require_rank(image, 3, "extract_patches");
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("extract_patches: " + shape_string(image.shape()) + " not divisible by patch " +
                         std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t width = ch * patch * patch;
  // Flat source offset of each output element; shared by forward and backward.
  std::vector<std::uint32_t> src(gh * gw * width);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx) {
            const std::size_t row = py * gw + px;
            const std::size_t col = (c * patch + dy) * patch + dx;
            src[row * width + col] =
                static_cast<std::uint32_t>((c * h + py * patch + dy) * w + px * patch + dx);
          }
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = image.values()[src[i]];
  Tensor<T> y = make<T>(Shape{gh * gw, width}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({image.raw()})) {
    auto xn = image.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, src = std::move(src)] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += yn->grad[i];
    });
  }
  return y;
}

std::vector<double> interpolation_matrix(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw DimensionError("interpolation_matrix: empty extent");
  std::vector<double> m(out * in, 0.0);
  if (in == out) {
    for (std::size_t i = 0; i < in; ++i) m[i * in + i] = 1.0;
    return m;
  }
  for (std::size_t o = 0; o < out; ++o) {
    const double pos = out == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    const std::size_t i0 = std::min(static_cast<std::size_t>(std::floor(pos)), in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = pos - static_cast<double>(i0);
    m[o * in + i0] += 1.0 - frac;
    m[o * in + i1] += frac;
  }
  return m;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "resize_bilinear");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  const auto rh64 = interpolation_matrix(h, out_h);
  const auto rw64 = interpolation_matrix(w, out_w);
  const std::vector<T> rh(rh64.begin(), rh64.end());
  const std::vector<T> rw(rw64.begin(), rw64.end());
  const auto H = static_cast<Eigen::Index>(h), W = static_cast<Eigen::Index>(w);
  const auto OH = static_cast<Eigen::Index>(out_h), OW = static_cast<Eigen::Index>(out_w);
  std::vector<T> out(n * out_h * out_w);
  MapC<T> Rh(rh.data(), OH, H), Rw(rw.data(), OW, W);
  for (std::size_t s = 0; s < n; ++s) {
    MapC<T> X(x.values().data() + s * h * w, H, W);
    Map<T>(out.data() + s * out_h * out_w, OH, OW).noalias() = Rh * X * Rw.transpose();
  }
  Tensor<T> y = make<T>(Shape{n, out_h, out_w}, std::move(out));
  if (auto* tape = detail::tracking_tape<T>({x.raw()})) {
    auto xn = x.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, rh, rw, n, H, W, OH, OW] {
      MapC<T> Rh(rh.data(), OH, H), Rw(rw.data(), OW, W);
      auto g = xn->grad_buffer();
      for (std::size_t s = 0; s < n; ++s) {
        MapC<T> G(yn->grad.data() + s * OH * OW, OH, OW);
        Map<T>(g.data() + s * H * W, H, W).noalias() += Rh.transpose() * G * Rw;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, std::span<const T> target, T gamma, T alpha) {
  const std::size_t n = logits.numel();
  if (target.size() != n) {
    throw DimensionError("focal_loss: " + std::to_string(target.size()) + " targets for " + std::to_string(n) +
                         " logits");
  }
  if (n == 0) throw ContractError("focal_loss: empty input");
  for (T t : target) {
    if (t != T(0) && t != T(1)) throw ContractError("focal_loss: target must be binary");
  }
  // For a target-signed logit z (z = x for positives, -x for negatives):
  //   p_t = sigmoid(z), log p_t = -softplus(-z),
  //   loss = -a_t (1 - p_t)^g log p_t,
  //   dloss/dz = a_t (1 - p_t)^g (g p_t log p_t - (1 - p_t)).
  auto softplus_neg = [](T z) { return std::max(-z, T(0)) + std::log1p(std::exp(-std::abs(z))); };
  std::vector<T> dz(n);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = target[i] == T(1);
    const T z = positive ? logits.values()[i] : -logits.values()[i];
    const T at = positive ? alpha : T(1) - alpha;
    const T log_pt = -softplus_neg(z);
    const T pt = std::exp(log_pt);
    const T one_minus = -std::expm1(log_pt);
    const T mod = gamma == T(0) ? T(1) : std::pow(one_minus, gamma);
    total += -at * mod * log_pt;
    const T d = at * mod * (gamma * pt * log_pt - one_minus);
    dz[i] = positive ? d : -d;
  }
  const T inv_n = T(1) / static_cast<T>(n);
  Tensor<T> y = Tensor<T>::scalar(total * inv_n);
  if (auto* tape = detail::tracking_tape<T>({logits.raw()})) {
    auto xn = logits.node();
    auto* yn = y.raw();
    detail::record<T>(tape, y, [xn, yn, dz = std::move(dz), inv_n] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[0] * dz[i] * inv_n;
    });
  }
  return y;
}

#define MST_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                        \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> transpose(const Tensor<T>&);                                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> mean(const Tensor<T>&);                                                            \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> softmax_rows(const Tensor<T>&, T);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                         \
  template Tensor<T> gelu(const Tensor<T>&);                                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                            \
  template Tensor<T> softplus(const Tensor<T>&);                                                        \
  template Tensor<T> cosine_rows(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> l2_distance(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> row_distances(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                       \
  template Tensor<T> build_selection(const Tensor<T>&, std::span<const std::size_t>, std::size_t);      \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                            \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                           \
  template Tensor<T> extract_patches(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> resize_bilinear(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> focal_loss(const Tensor<T>&, std::span<const T>, T, T);

MST_INSTANTIATE_OPS(float)
MST_INSTANTIATE_OPS(double)

#undef MST_INSTANTIATE_OPS

}  // namespace mst
