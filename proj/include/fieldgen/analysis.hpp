#pragma once

#include <queue>
#include <vector>

#include "fieldgen/ad/tensor.hpp"

// Mask diagnostics over alpha maps: centroids for controllability checks,
// connected components for composition checks.

namespace fieldgen::analysis {

struct Centroid {
  double row = 0.0;
  double col = 0.0;
  double mass = 0.0;
};

// Alpha-weighted centroid of a [1,1,H,W] (or [H,W]) map.
template <class T>
Centroid alpha_centroid(const ad::Tensor<T>& alpha) {
  long h, w;
  if (alpha.rank() == 4 && alpha.dim(0) == 1 && alpha.dim(1) == 1) {
    h = alpha.dim(2);
    w = alpha.dim(3);
  } else if (alpha.rank() == 2) {
    h = alpha.dim(0);
    w = alpha.dim(1);
  } else {
    throw shape_error("alpha_centroid: [1,1,H,W] or [H,W] required, got " +
                      ad::shape_str(alpha.shape()));
  }
  Centroid c;
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      const double v = static_cast<double>(alpha.at(i * w + j));
      c.mass += v;
      c.row += v * static_cast<double>(i);
      c.col += v * static_cast<double>(j);
    }
  if (c.mass > 0) {
    c.row /= c.mass;
    c.col /= c.mass;
  }
  return c;
}

// 4-connected components of {alpha > threshold}.
template <class T>
long connected_components(const ad::Tensor<T>& alpha, double threshold) {
  long h, w;
  if (alpha.rank() == 4 && alpha.dim(0) == 1 && alpha.dim(1) == 1) {
    h = alpha.dim(2);
    w = alpha.dim(3);
  } else if (alpha.rank() == 2) {
    h = alpha.dim(0);
    w = alpha.dim(1);
  } else {
    throw shape_error("connected_components: [1,1,H,W] or [H,W] required");
  }
  std::vector<bool> mask(static_cast<std::size_t>(h * w));
  for (long i = 0; i < h * w; ++i)
    mask[static_cast<std::size_t>(i)] = static_cast<double>(alpha.at(i)) > threshold;
  std::vector<bool> seen(static_cast<std::size_t>(h * w), false);
  long components = 0;
  for (long start = 0; start < h * w; ++start) {
    if (!mask[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) continue;
    ++components;
    std::queue<long> frontier;
    frontier.push(start);
    seen[static_cast<std::size_t>(start)] = true;
    while (!frontier.empty()) {
      const long p = frontier.front();
      frontier.pop();
      const long r = p / w, c = p % w;
      const long neighbors[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& nb : neighbors) {
        if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
        const long q = nb[0] * w + nb[1];
        if (mask[static_cast<std::size_t>(q)] && !seen[static_cast<std::size_t>(q)]) {
          seen[static_cast<std::size_t>(q)] = true;
          frontier.push(q);
        }
      }
    }
  }
  return components;
}

// Pearson correlation between two equally shaped maps.
template <class T>
double pearson(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  if (a.numel() != b.numel())
    throw shape_error("pearson: size mismatch");
  const long n = a.numel();
  double ma = 0, mb = 0;
  for (long i = 0; i < n; ++i) {
    ma += static_cast<double>(a.at(i));
    mb += static_cast<double>(b.at(i));
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (long i = 0; i < n; ++i) {
    const double da = static_cast<double>(a.at(i)) - ma;
    const double db = static_cast<double>(b.at(i)) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace fieldgen::analysis
