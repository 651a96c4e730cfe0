// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "detectlab/rng.hpp"
#include "detectlab/tensor.hpp"

namespace detectlab::nn {

/// Flat registry of named tensors for one block or model. Trainable
/// parameters and non-trainable buffers (norm running statistics) are kept
/// apart; only parameters count towards param_count().
template <typename T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T> add_param(const std::string& name, Shape shape);
  Tensor<T> add_buffer(const std::string& name, Shape shape, T fill);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  const std::vector<Entry>& params() const { return params_; }
  const std::vector<Entry>& buffers() const { return buffers_; }

  Index param_count() const;
  void zero_grad();

 private:
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
  std::map<std::string, std::pair<bool, std::size_t>> index_;  // name -> (is_param, slot)
};

template <typename T>
Index param_count(const ParamStore<T>& store) {
  return store.param_count();
}

/// U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
void he_uniform(Tensor<T>& weight, Index fan_in, Rng& rng);

}  // namespace detectlab::nn
