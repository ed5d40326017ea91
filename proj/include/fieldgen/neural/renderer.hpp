#pragma once

#include <vector>

#include "fieldgen/neural/layers.hpp"

namespace fieldgen::neural {

// Feature-map decoder: residual spectral-normalized upsampling blocks with
// per-level skips to an RGB accumulator. Features travel through
// nearest-neighbour upsampling, the image accumulator through bilinear
// upsampling; the final image is tanh-squashed into [-1,1]. Channel widths
// halve per block down to min_channels. Residual branches start at zero, so
// freshly appended blocks are exact identities.
template <class T>
struct ImageRenderer {
  long m_f = 32;
  long feature_res = 16;
  long out_res = 32;
  long min_channels = 16;

  ConvSn<T> rgb_in;                   // skip from the raw feature map
  std::vector<ResBlock<T>> up_blocks;
  std::vector<ConvSn<T>> level_rgb;   // skips after blocks 0..B-2
  std::vector<ResBlock<T>> extra_blocks;  // resolution-preserving refiners
  ConvSn<T> rgb_out;                  // final skip, after the extras
  bool has_rgb_out = false;

  static long block_count(long feature_res, long out_res) {
    long b = 0, r = feature_res;
    while (r < out_res) {
      r *= 2;
      ++b;
    }
    if (r != out_res)
      throw std::invalid_argument(
          "ImageRenderer: output resolution must be feature_res * 2^B");
    return b;
  }

  static ImageRenderer init(long m_f, long feature_res, long out_res,
                            Rng& rng, long min_channels = 16,
                            long n_extra_blocks = 0) {
    ImageRenderer r;
    r.m_f = m_f;
    r.feature_res = feature_res;
    r.out_res = out_res;
    r.min_channels = min_channels;
    const long b_count = block_count(feature_res, out_res);
    r.rgb_in = ConvSn<T>::init(3, m_f, 1, 0, rng);
    long ch = m_f;
    for (long i = 0; i < b_count; ++i) {
      const long next = std::max(min_channels, ch / 2);
      r.up_blocks.push_back(ResBlock<T>::init(
          ch, next, rng, activation_policy().renderer,
          /*zero_init_branch=*/true, /*spectral=*/true));
      if (i + 1 < b_count)
        r.level_rgb.push_back(ConvSn<T>::init(3, next, 1, 0, rng));
      ch = next;
    }
    for (long i = 0; i < n_extra_blocks; ++i)
      r.extra_blocks.push_back(ResBlock<T>::init(
          ch, ch, rng, activation_policy().renderer, true, true));
    if (b_count > 0) {
      r.rgb_out = ConvSn<T>::init(3, ch, 1, 0, rng);
      r.has_rgb_out = true;
    }
    return r;
  }

  // F: [B, M_f, feature_res, feature_res] -> [B, 3, out_res, out_res]
  ad::Tensor<T> forward(const ad::Tensor<T>& features) const {
    ad::require(features.rank() == 4 && features.dim(1) == m_f &&
                    features.dim(2) == feature_res &&
                    features.dim(3) == feature_res,
                "ImageRenderer: expected [B," + std::to_string(m_f) + "," +
                    std::to_string(feature_res) + "," +
                    std::to_string(feature_res) + "], got " +
                    ad::shape_str(features.shape()));
    auto x = features;
    auto acc = rgb_in.forward(features);
    for (std::size_t i = 0; i < up_blocks.size(); ++i) {
      x = up_blocks[i].forward(ad::upsample_nearest2x(x));
      acc = ad::upsample_bilinear2x(acc);
      if (i < level_rgb.size()) acc = ad::add(acc, level_rgb[i].forward(x));
    }
    for (const auto& blk : extra_blocks) x = blk.forward(x);
    if (has_rgb_out) acc = ad::add(acc, rgb_out.forward(x));
    return ad::tanh_op(acc);
  }

  void refresh_spectral(int iters) {
    rgb_in.refresh(iters);
    for (auto& b : up_blocks) b.refresh(iters);
    for (auto& c : level_rgb) c.refresh(iters);
    for (auto& b : extra_blocks) b.refresh(iters);
    if (has_rgb_out) rgb_out.refresh(iters);
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    rgb_in.register_params(store, prefix + ".rgb_in");
    for (std::size_t i = 0; i < up_blocks.size(); ++i)
      up_blocks[i].register_params(store, prefix + ".up" + std::to_string(i));
    for (std::size_t i = 0; i < level_rgb.size(); ++i)
      level_rgb[i].register_params(store,
                                   prefix + ".rgb" + std::to_string(i));
    for (std::size_t i = 0; i < extra_blocks.size(); ++i)
      extra_blocks[i].register_params(store,
                                      prefix + ".extra" + std::to_string(i));
    if (has_rgb_out) rgb_out.register_params(store, prefix + ".rgb_out");
  }

  void post_load() {
    rgb_in.post_load();
    for (auto& b : up_blocks) b.post_load();
    for (auto& c : level_rgb) c.post_load();
    for (auto& b : extra_blocks) b.post_load();
    if (has_rgb_out) rgb_out.post_load();
  }

  // Every spectral conv in declaration order (for norm audits).
  std::vector<const ConvSn<T>*> spectral_convs() const {
    std::vector<const ConvSn<T>*> out{&rgb_in};
    auto add_block = [&out](const ResBlock<T>& b) {
      out.push_back(&b.conv1);
      out.push_back(&b.conv2);
      if (b.has_proj) out.push_back(&b.proj);
    };
    for (const auto& b : up_blocks) add_block(b);
    for (const auto& c : level_rgb) out.push_back(&c);
    for (const auto& b : extra_blocks) add_block(b);
    if (has_rgb_out) out.push_back(&rgb_out);
    return out;
  }
};

// Functional form of the decoder.
template <class T>
ad::Tensor<T> render_image(const ImageRenderer<T>& renderer,
                           const ad::Tensor<T>& feature_map) {
  return renderer.forward(feature_map);
}

}  // namespace fieldgen::neural
