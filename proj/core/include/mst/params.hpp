#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mst/adamw.hpp"
#include "mst/tensor.hpp"

namespace mst {

using Rng = std::mt19937_64;

/// Named, ordered collection of trainable leaves. Creation order is the
/// serialization order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool decay = true;
  };

  Tensor<T> normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor<T> constant(const std::string& name, Shape shape, T value, bool decay = false);

  const std::vector<Entry>& entries() const { return entries_; }
  const Entry* find(const std::string& name) const;
  const Tensor<T>& at(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  std::vector<ParamRef<T>> param_refs() const;
  void zero_grad();

  /// Copies values by name from another store of any precision.
  template <typename U>
  void copy_from(const ParameterStore<U>& other) {
    for (auto& e : entries_) {
      const auto* src = other.find(e.name);
      if (src == nullptr) throw ContractError("copy_from: missing parameter " + e.name);
      if (src->tensor.shape() != e.tensor.shape()) throw DimensionError("copy_from: shape mismatch for " + e.name);
      auto dst = e.tensor.mutable_values();
      const auto s = src->tensor.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s[i]);
    }
  }

 private:
  Tensor<T> add(const std::string& name, Tensor<T> t, bool decay);
  std::vector<Entry> entries_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace mst
