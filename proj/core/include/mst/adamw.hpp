#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mst/tensor.hpp"

namespace mst {

struct AdamWOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;
};

/// AdamW with decoupled weight decay. Moments are kept in the parameter's
/// precision.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<ParamRef<T>> params, AdamWOptions options);

  /// One update from the gradients currently stored on the parameters.
  /// Throws ContractError when a parameter has no gradient.
  void step();
  void zero_grad();

  void set_lr(double lr) { options_.lr = lr; }
  const AdamWOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_; }

  const std::vector<ParamRef<T>>& params() const { return params_; }
  std::vector<T>& first_moment(std::size_t i) { return m_.at(i); }
  std::vector<T>& second_moment(std::size_t i) { return v_.at(i); }
  const std::vector<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return v_.at(i); }
  void restore_step_count(std::int64_t step) { step_ = step; }

 private:
  std::vector<ParamRef<T>> params_;
  AdamWOptions options_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t step_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace mst
