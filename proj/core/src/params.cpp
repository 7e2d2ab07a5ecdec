#include "mst/params.hpp"

#include <algorithm>

namespace mst {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Tensor<T> t, bool decay) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter " + name);
  t.set_requires_grad(true);
  entries_.push_back(Entry{name, t, decay});
  return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    double s = dist(rng);
    // truncate at two standard deviations
    while (std::abs(s) > 2.0 * stddev) s = dist(rng);
    v = static_cast<T>(s);
  }
  return add(name, Tensor<T>(std::move(shape), std::move(values)), true);
}

template <typename T>
Tensor<T> ParameterStore<T>::constant(const std::string& name, Shape shape, T value, bool decay) {
  return add(name, Tensor<T>::full(std::move(shape), value), decay);
}

template <typename T>
const typename ParameterStore<T>::Entry* ParameterStore<T>::find(const std::string& name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
  return it == entries_.end() ? nullptr : &*it;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::at(const std::string& name) const {
  const Entry* e = find(name);
  if (e == nullptr) throw ContractError("unknown parameter " + name);
  return e->tensor;
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
std::vector<ParamRef<T>> ParameterStore<T>::param_refs() const {
  std::vector<ParamRef<T>> refs;
  refs.reserve(entries_.size());
  for (const auto& e : entries_) refs.push_back(ParamRef<T>{e.name, e.tensor, e.decay});
  return refs;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace mst
