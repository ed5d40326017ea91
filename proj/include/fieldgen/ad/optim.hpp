#pragma once

#include <vector>

#include "fieldgen/ad/tensor.hpp"

namespace fieldgen::ad {

// RMSProp: running mean-square accumulator per parameter,
//   acc <- decay*acc + (1-decay)*g^2
//   p   <- p - lr * g / (sqrt(acc) + eps)
template <class T>
struct OptimizerState {
  double learning_rate = 1e-4;
  double decay = 0.99;
  double epsilon = 1e-8;
  std::vector<Buf<T>> accum;

  void init_like(const std::vector<Tensor<T>>& params) {
    accum.clear();
    accum.reserve(params.size());
    for (const auto& p : params) accum.push_back(Buf<T>::Zero(p.numel()));
  }
};

template <class T>
void rmsprop_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state) {
  require(params.size() == state.accum.size(),
          "rmsprop_step: state tracks " + std::to_string(state.accum.size()) +
              " params, got " + std::to_string(params.size()));
  const T lr = static_cast<T>(state.learning_rate);
  const T decay = static_cast<T>(state.decay);
  const T eps = static_cast<T>(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i];
    Buf<T>& acc = state.accum[i];
    require(acc.size() == p.numel(),
            "rmsprop_step: accumulator shape mismatch for param " +
                std::to_string(i));
    if (!p.has_grad()) {
      acc *= decay;  // zero gradient: parameter unchanged
      continue;
    }
    const Buf<T>& g = p.grad();
    acc = decay * acc + (T(1) - decay) * g.square();
    p.mutable_value() -= lr * g / (acc.sqrt() + eps);
  }
}

}  // namespace fieldgen::ad
