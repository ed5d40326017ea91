#pragma once

#include <vector>

#include "fieldgen/neural/layers.hpp"

namespace fieldgen::gan {

// Residual convolutional discriminator: spectral-normalized blocks with
// avg-pool downsampling to 4x4, global pooling, and a spectral-normalized
// linear head producing one raw logit per image (probability = sigmoid).
template <class T>
struct Discriminator {
  long image_res = 32;
  long base_channels = 32;

  std::vector<neural::ResBlockDown<T>> blocks;
  neural::LinearSn<T> head;

  static Discriminator init(long image_res, long base_channels, Rng& rng) {
    if (image_res < 8 || (image_res & (image_res - 1)) != 0)
      throw std::invalid_argument(
          "Discriminator: image resolution must be a power of two >= 8");
    Discriminator d;
    d.image_res = image_res;
    d.base_channels = base_channels;
    const auto policy = neural::activation_policy();
    long ch = 3, res = image_res;
    long width = base_channels;
    while (res > 4) {
      d.blocks.push_back(neural::ResBlockDown<T>::init(
          ch, width, rng, policy.discriminator, /*spectral=*/true,
          policy.leaky_slope));
      ch = width;
      width = std::min<long>(width * 2, 4 * base_channels);
      res /= 2;
    }
    d.head = neural::LinearSn<T>::init(1, ch, rng);
    return d;
  }

  // images: [B,3,R,R] -> logits [B,1]
  ad::Tensor<T> forward(const ad::Tensor<T>& images) const {
    ad::require(images.rank() == 4 && images.dim(1) == 3 &&
                    images.dim(2) == image_res && images.dim(3) == image_res,
                "Discriminator: expected [B,3," + std::to_string(image_res) +
                    "," + std::to_string(image_res) + "], got " +
                    ad::shape_str(images.shape()));
    auto x = images;
    for (const auto& b : blocks) x = b.forward(x);
    return head.forward(neural::global_avg_pool(x));
  }

  void refresh_spectral(int iters) {
    for (auto& b : blocks) b.refresh(iters);
    head.refresh(iters);
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].register_params(store, prefix + ".block" + std::to_string(i));
    head.register_params(store, prefix + ".head");
  }

  void post_load() {
    for (auto& b : blocks) b.post_load();
    head.post_load();
  }

  std::vector<const neural::ConvSn<T>*> spectral_convs() const {
    std::vector<const neural::ConvSn<T>*> out;
    for (const auto& b : blocks) {
      out.push_back(&b.conv1);
      out.push_back(&b.conv2);
      out.push_back(&b.proj);
    }
    return out;
  }

  const neural::LinearSn<T>& spectral_head() const { return head; }
};

template <class T>
ad::Tensor<T> discriminate(const Discriminator<T>& d,
                           const ad::Tensor<T>& images) {
  return d.forward(images);
}

}  // namespace fieldgen::gan
