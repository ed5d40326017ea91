#pragma once

#include "fieldgen/inv/inverter.hpp"

namespace fieldgen::inv {

template <class T>
struct ZeroShotResult {
  scene::LatentCode<T> code;
  std::vector<ad::Tensor<T>> views;          // [1,3,R,R] each
  std::vector<ad::Tensor<T>> object_alphas;  // [1,1,F,F] each
  long encoder_forwards = 0;                 // must be exactly 1
};

// Single-forward inversion of an unseen image, then renders at each
// requested pose. Performs no optimization and no parameter updates.
template <class T>
ZeroShotResult<T> zero_shot_invert(const Inverter<T>& inverter,
                                   const gan::Generator<T>& gen,
                                   const ad::Tensor<T>& image,
                                   const std::vector<vol::CameraPose>& poses,
                                   const scene::AffineTransform& t_default) {
  ZeroShotResult<T> out;
  const long before = inverter.forward_count;
  ad::NoGradGuard ng;
  out.code = invert(inverter, image);
  for (const auto& pose : poses) {
    auto rendered = reconstruct(gen, out.code, {t_default}, pose,
                                /*want_object_alpha=*/true);
    out.views.push_back(rendered.images);
    out.object_alphas.push_back(rendered.object_alpha);
  }
  out.encoder_forwards = inverter.forward_count - before;
  return out;
}

template <class T>
struct StyleMixResult {
  ad::Tensor<T> image;
  ad::Tensor<T> object_alpha;
  scene::LatentCode<T> code;
};

// Shape code from image_a, appearance code from image_b; background codes
// from image_a. The alpha map therefore matches image_a's plain inversion
// exactly (density never sees the appearance code).
template <class T>
StyleMixResult<T> style_mix(const Inverter<T>& inverter,
                            const gan::Generator<T>& gen,
                            const ad::Tensor<T>& image_a,
                            const ad::Tensor<T>& image_b,
                            const vol::CameraPose& pose,
                            const scene::AffineTransform& t_default) {
  ad::NoGradGuard ng;
  auto code_a = invert(inverter, image_a);
  auto code_b = invert(inverter, image_b);
  scene::LatentCode<T> mixed;
  mixed.entities.emplace_back(code_a.entities[0].first,
                              code_b.entities[0].second);
  mixed.entities.emplace_back(code_a.entities[1].first,
                              code_a.entities[1].second);
  auto rendered = reconstruct(gen, mixed, {t_default}, pose, true);
  StyleMixResult<T> out;
  out.image = rendered.images;
  out.object_alpha = rendered.object_alpha;
  out.code = std::move(mixed);
  return out;
}

template <class T>
struct ComposeResult {
  ad::Tensor<T> image;
  ad::Tensor<T> object_alpha;
};

// Scene with two inverted objects plus image_a's background, rendered
// through the ordinary composition path.
template <class T>
ComposeResult<T> compose_two_objects(const Inverter<T>& inverter,
                                     const gan::Generator<T>& gen,
                                     const ad::Tensor<T>& image_a,
                                     const ad::Tensor<T>& image_b,
                                     const scene::AffineTransform& t_a,
                                     const scene::AffineTransform& t_b,
                                     const vol::CameraPose& pose) {
  ad::NoGradGuard ng;
  auto code_a = invert(inverter, image_a);
  auto code_b = invert(inverter, image_b);
  scene::LatentCode<T> assembled;
  assembled.entities.push_back(code_a.entities[0]);
  assembled.entities.push_back(code_b.entities[0]);
  assembled.entities.push_back(code_a.entities[1]);  // background
  auto rendered = reconstruct(gen, assembled, {t_a, t_b}, pose, true);
  return {rendered.images, rendered.object_alpha};
}

}  // namespace fieldgen::inv
