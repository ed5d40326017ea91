#pragma once

#include <vector>

#include "fieldgen/ad/ops.hpp"

namespace fieldgen::metrics {

// Fixed-seed random convolutional feature extractor standing in for the
// pretrained backbones of FID/LPIPS. Weights are immutable after
// construction; the same seed always builds the same embedder. Absolute
// distance values are not comparable to pretrained-backbone metrics; only
// comparisons between values from the same embedder are meaningful.
template <class T>
struct FeatureEmbedder {
  std::uint64_t seed = 1234;
  long embed_dim = 64;
  std::vector<ad::Tensor<T>> conv_w;  // constants, no bias

  static FeatureEmbedder make(std::uint64_t seed, long embed_dim = 64) {
    FeatureEmbedder e;
    e.seed = seed;
    e.embed_dim = embed_dim;
    Rng rng(fnv1a64("feature-embedder", seed));
    const long widths[3] = {16, 32, embed_dim};
    long in_ch = 3;
    for (long layer = 0; layer < 3; ++layer) {
      const double he = std::sqrt(2.0 / static_cast<double>(in_ch * 9));
      e.conv_w.push_back(ad::Tensor<T>::randn(
          {widths[layer], in_ch, 3, 3}, rng, static_cast<T>(he)));
      in_ch = widths[layer];
    }
    return e;
  }

  // Per-layer feature maps after leaky-relu and 2x pooling.
  std::vector<ad::Tensor<T>> layer_features(const ad::Tensor<T>& images) const {
    ad::require(images.rank() == 4 && images.dim(1) == 3,
                "FeatureEmbedder: [N,3,H,W] images required, got " +
                    ad::shape_str(images.shape()));
    std::vector<ad::Tensor<T>> feats;
    auto x = images;
    for (const auto& w : conv_w) {
      x = ad::avg_pool2x(ad::leaky_relu(ad::conv2d(x, w, ad::Tensor<T>(), 1), 0.2));
      feats.push_back(x);
    }
    return feats;
  }

  // [N, embed_dim] global-average-pooled deepest features.
  ad::Tensor<T> embed(const ad::Tensor<T>& images) const {
    auto feats = layer_features(images);
    const auto& last = feats.back();
    const long n = last.dim(0), c = last.dim(1),
               hw = last.dim(2) * last.dim(3);
    auto rows = ad::reshape(last, {n * c, hw});
    return ad::reshape(ad::scale(ad::sum_cols(rows), 1.0 / hw), {n, c});
  }
};

// Sum over embedder layers of mean squared differences between
// channel-normalized features; zero iff the features agree. Differentiable;
// the fixed-random backend is this artifact's LPIPS substitute.
template <class T>
ad::Tensor<T> perceptual_distance(const FeatureEmbedder<T>& embedder,
                                  const ad::Tensor<T>& a,
                                  const ad::Tensor<T>& b) {
  ad::require(a.shape() == b.shape(), "perceptual_distance: shape mismatch " +
                                          ad::shape_str(a.shape()) + " vs " +
                                          ad::shape_str(b.shape()));
  auto fa = embedder.layer_features(a);
  auto fb = embedder.layer_features(b);
  ad::Tensor<T> total = ad::Tensor<T>::zeros({1});
  for (std::size_t layer = 0; layer < fa.size(); ++layer) {
    auto normalize = [](const ad::Tensor<T>& f) {
      const long n = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
      // unit-normalize the channel vector at every pixel
      std::vector<ad::Tensor<T>> per_image;
      for (long i = 0; i < n; ++i) {
        auto rows = ad::reshape(
            ad::slice_rows(ad::reshape(f, {n * c, hw}), i * c, c), {c, hw});
        auto inv_norm = ad::reciprocal(ad::sqrt_op(
            ad::add_scalar(ad::sum_rows(ad::square(rows)), 1e-10)));
        per_image.push_back(ad::mul(rows, ad::broadcast_rows(inv_norm, c)));
      }
      return per_image;
    };
    auto na = normalize(fa[layer]);
    auto nb = normalize(fb[layer]);
    ad::Tensor<T> layer_sum = ad::Tensor<T>::zeros({1});
    for (std::size_t i = 0; i < na.size(); ++i)
      layer_sum = ad::add(layer_sum, ad::mean(ad::square(ad::sub(na[i], nb[i]))));
    total = ad::add(total, ad::scale(layer_sum, 1.0 / static_cast<double>(na.size())));
  }
  return total;
}

}  // namespace fieldgen::metrics
