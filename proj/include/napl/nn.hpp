#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "napl/ops.hpp"
#include "napl/random.hpp"
#include "napl/tensor.hpp"

namespace napl {

/// Named handles to trainable tensors. Handles share storage with the
/// model, so writing through them updates the model.
template <typename T>
using ParamList = std::vector<std::pair<std::string, BasicTensor<T>>>;

template <typename T>
void append_params(ParamList<T>& out, const ParamList<T>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

template <typename T>
BasicTensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(normal(rng, 0.0, stddev));
  return BasicTensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
BasicTensor<T> constant_tensor(Shape shape, T value) {
  std::vector<T> v(shape_numel(shape), value);
  return BasicTensor<T>::from(std::move(shape), std::move(v), true);
}

/// y = x·W + b with W [in×out].
template <typename T>
struct Linear {
  BasicTensor<T> weight;
  BasicTensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng, double gain = std::sqrt(2.0)) {
    return {normal_tensor<T>({in, out}, gain / std::sqrt(static_cast<double>(in)), rng),
            constant_tensor<T>({out}, T(0))};
  }

  static Linear zeros(std::size_t in, std::size_t out) {
    return {constant_tensor<T>({in, out}, T(0)), constant_tensor<T>({out}, T(0))};
  }

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add_rowvec(matmul(x, weight), bias); }

  ParamList<T> params(const std::string& prefix) const { return {{prefix + ".weight", weight}, {prefix + ".bias", bias}}; }
};

template <typename T>
struct LayerNorm {
  BasicTensor<T> gain;
  BasicTensor<T> bias;

  static LayerNorm init(std::size_t n) { return {constant_tensor<T>({n}, T(1)), constant_tensor<T>({n}, T(0))}; }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gain, bias); }

  ParamList<T> params(const std::string& prefix) const { return {{prefix + ".gain", gain}, {prefix + ".bias", bias}}; }
};

}  // namespace napl
