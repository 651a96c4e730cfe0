// SPDX-License-Identifier: Apache-2.0
#include "detectlab/nn/param_store.hpp"

#include <cmath>

namespace detectlab::nn {

template <typename T>
Tensor<T> ParamStore<T>::add_param(const std::string& name, Shape shape) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
  index_[name] = {true, params_.size()};
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T> ParamStore<T>::add_buffer(const std::string& name, Shape shape, T fill) {
  if (contains(name)) throw ConfigError("duplicate buffer name: " + name);
  Tensor<T> t = Tensor<T>::full(std::move(shape), fill, false);
  index_[name] = {false, buffers_.size()};
  buffers_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown tensor: " + name);
  auto& list = it->second.first ? params_ : buffers_;
  return list[it->second.second].second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

template <typename T>
Index ParamStore<T>::param_count() const {
  Index n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

template <typename T>
void he_uniform(Tensor<T>& weight, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& v : weight.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template class ParamStore<float>;
template class ParamStore<double>;
template void he_uniform(Tensor<float>&, Index, Rng&);
template void he_uniform(Tensor<double>&, Index, Rng&);

}  // namespace detectlab::nn
