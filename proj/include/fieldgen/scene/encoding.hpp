#pragma once

#include "fieldgen/ad/tensor.hpp"
#include "fieldgen/scene/transform.hpp"

namespace fieldgen::scene {

// NeRF-style positional encoding, axis-major layout: for each axis the
// entries run [sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{n-1} pi v),
// cos(2^{n-1} pi v)]; output width 3*2*n_freq. Points and directions are
// inputs to the pipeline, never parameters, so the result is a constant.
template <class T>
ad::Tensor<T> positional_encode(const Points& v, long n_freq) {
  if (n_freq < 1)
    throw std::invalid_argument("positional_encode: n_freq must be >= 1");
  const long n = static_cast<long>(v.rows());
  const long width = 3 * 2 * n_freq;
  ad::Buf<T> out(n * width);
  Eigen::ArrayXd arg(n), s(n), c(n);
  for (long axis = 0; axis < 3; ++axis) {
    const Eigen::ArrayXd col = v.col(axis).array();
    double freq = kPi;  // 2^0 * pi
    for (long f = 0; f < n_freq; ++f) {
      arg = freq * col;
      s = arg.sin();
      c = arg.cos();
      T* base = out.data() + axis * 2 * n_freq + 2 * f;
      for (long i = 0; i < n; ++i) {
        base[i * width] = static_cast<T>(s[i]);
        base[i * width + 1] = static_cast<T>(c[i]);
      }
      freq *= 2.0;
    }
  }
  return ad::Tensor<T>::from_buf({n, width}, std::move(out));
}

inline long encoding_width(long n_freq) { return 3 * 2 * n_freq; }

// Smooth box window: ~1 inside the unit cube in object coordinates, decaying
// to 0 outside. Keeps object densities local so composition and alpha-mask
// diagnostics behave; the background entity is never windowed.
template <class T>
ad::Tensor<T> box_window(const Points& object_coords, double sharpness = 8.0) {
  const long n = static_cast<long>(object_coords.rows());
  ad::Buf<T> out(n);
  for (long i = 0; i < n; ++i) {
    double w = 1.0;
    for (long axis = 0; axis < 3; ++axis) {
      const double u = object_coords(i, axis);
      w *= 1.0 / (1.0 + std::exp(-sharpness * (u + 1.0)));
      w *= 1.0 / (1.0 + std::exp(-sharpness * (1.0 - u)));
    }
    out[i] = static_cast<T>(w);
  }
  return ad::Tensor<T>::from_buf({n, 1}, std::move(out));
}

}  // namespace fieldgen::scene
