#pragma once

#include <Eigen/Dense>

#include "fieldgen/ad/ops.hpp"
#include "fieldgen/ad/tensor.hpp"

namespace fieldgen::ad {

// Persistent power-iteration vectors for one weight, held as plain tensors
// so they serialize with the parameters. Conv weights are viewed as
// [out, rest] matrices.
template <class T>
struct SpectralState {
  Tensor<T> u, v;  // [rows], [cols]; requires_grad is always false
  T sigma = T(1);
  bool initialized = false;

  void init(long rows, long cols, Rng& rng) {
    u = Tensor<T>::randn({rows}, rng);
    v = Tensor<T>::randn({cols}, rng);
    auto normalize = [](Tensor<T>& t) {
      auto m = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(
          t.mutable_value().data(), t.numel());
      m.normalize();
    };
    normalize(u);
    normalize(v);
    initialized = true;
  }

  // After loading u/v/weight from a checkpoint the cached estimate is
  // recomputed; same inputs give the bit-identical sigma.
  void recompute_sigma(const Tensor<T>& weight) {
    const long rows = weight.dim(0);
    const long cols = weight.numel() / rows;
    ConstMatMap<T> wm(weight.value().data(), rows, cols);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> um(u.value().data(),
                                                             rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> vm(v.value().data(),
                                                             cols);
    sigma = um.dot(wm * vm);
    initialized = true;
  }
};

// Returns weight / sigma_hat where sigma_hat estimates the largest singular
// value via power iteration; the persistent vectors advance `iters` steps.
// sigma_hat is treated as a constant in the graph. A zero weight is returned
// unchanged. First use seeds the vectors and adds a short burn-in so the
// estimate is usable immediately.
template <class T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralState<T>& state,
                             int iters, Rng* init_rng = nullptr) {
  require(weight.rank() >= 2, "spectral_normalize: matrix-like weight "
                              "required, got " + shape_str(weight.shape()));
  require(iters >= 1, "spectral_normalize: iters must be >= 1");
  const long rows = weight.dim(0);
  const long cols = weight.numel() / rows;
  if (!state.initialized) {
    Rng fallback(fnv1a64("spectral-init", 0x5eed));
    state.init(rows, cols, init_rng ? *init_rng : fallback);
    iters += 10;
  }
  require(state.u.numel() == rows && state.v.numel() == cols,
          "spectral_normalize: persistent vectors do not match weight " +
              shape_str(weight.shape()));
  ConstMatMap<T> wm(weight.value().data(), rows, cols);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> um(
      state.u.mutable_value().data(), rows);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vm(
      state.v.mutable_value().data(), cols);
  for (int it = 0; it < iters; ++it) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> wu = wm.transpose() * um;
    const T nv = wu.norm();
    if (nv < T(1e-20)) {
      state.sigma = T(0);
      return weight;  // zero weight: do not divide
    }
    vm = wu / nv;
    Eigen::Matrix<T, Eigen::Dynamic, 1> wv = wm * vm;
    const T nu = wv.norm();
    if (nu < T(1e-20)) {
      state.sigma = T(0);
      return weight;
    }
    um = wv / nu;
  }
  state.sigma = um.dot(wm * vm);
  if (state.sigma < T(1e-20)) return weight;
  return scale(weight, 1.0 / static_cast<double>(state.sigma));
}

}  // namespace fieldgen::ad
