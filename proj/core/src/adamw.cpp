#include "mst/adamw.hpp"

#include <cmath>

namespace mst {

template <typename T>
AdamW<T>::AdamW(std::vector<ParamRef<T>> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    if (!p.tensor.defined() || !p.tensor.is_leaf()) throw ContractError("AdamW: parameter " + p.name + " is not a leaf");
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw ContractError("AdamW: parameter " + p.name + " has no gradient");
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const T lr = static_cast<T>(options_.lr);
  const T eps = static_cast<T>(options_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T> param = params_[i].tensor;
    auto w = param.mutable_values();
    const auto g = param.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const T decay = params_[i].decay ? static_cast<T>(1.0 - options_.lr * options_.weight_decay) : T(1);
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = static_cast<T>(b1) * m[j] + static_cast<T>(1.0 - b1) * g[j];
      v[j] = static_cast<T>(b2) * v[j] + static_cast<T>(1.0 - b2) * g[j] * g[j];
      const T m_hat = m[j] / static_cast<T>(bias1);
      const T v_hat = v[j] / static_cast<T>(bias2);
      w[j] = w[j] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace mst
