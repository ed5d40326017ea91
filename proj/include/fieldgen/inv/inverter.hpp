#pragma once

#include <array>
#include <optional>

#include "fieldgen/gan/train.hpp"
#include "fieldgen/metrics/embedder.hpp"
#include "fieldgen/metrics/ssim.hpp"

namespace fieldgen::inv {

// Zero-shot inverter: a residual ReLU encoder downsampling to 4x4 with four
// linear heads, one per code slot (object shape/appearance, background
// shape/appearance). Encoder forwards are counted so the zero-shot contract
// (one forward per image, no updates) can be audited.
template <class T>
struct Inverter {
  long image_res = 32;
  long d_z = 64;
  long base_channels = 32;

  std::vector<neural::ResBlockDown<T>> blocks;
  std::array<neural::LinearSn<T>, 4> heads;  // obj_s, obj_a, bg_s, bg_a
  mutable long forward_count = 0;

  static Inverter init(long image_res, long d_z, long base_channels,
                       Rng& rng) {
    if (image_res < 8 || (image_res & (image_res - 1)) != 0)
      throw std::invalid_argument(
          "Inverter: image resolution must be a power of two >= 8");
    Inverter inv;
    inv.image_res = image_res;
    inv.d_z = d_z;
    inv.base_channels = base_channels;
    long ch = 3, res = image_res, width = base_channels;
    while (res > 4) {
      inv.blocks.push_back(neural::ResBlockDown<T>::init(
          ch, width, rng, neural::Activation::kRelu, /*spectral=*/false));
      ch = width;
      width = std::min<long>(width * 2, 4 * base_channels);
      res /= 2;
    }
    const long flat = ch * 4 * 4;
    for (auto& head : inv.heads)
      head = neural::LinearSn<T>::init(d_z, flat, rng, /*spectral=*/false);
    return inv;
  }

  struct Codes {
    ad::Tensor<T> obj_s, obj_a, bg_s, bg_a;  // [B, d_z] each
  };

  Codes forward(const ad::Tensor<T>& images) const {
    ad::require(images.rank() == 4 && images.dim(1) == 3 &&
                    images.dim(2) == image_res && images.dim(3) == image_res,
                "Inverter: expected [B,3," + std::to_string(image_res) + "," +
                    std::to_string(image_res) + "], got " +
                    ad::shape_str(images.shape()));
    forward_count += 1;
    auto x = images;
    for (const auto& b : blocks) x = b.forward(x);
    auto flat = ad::reshape(
        x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
    Codes c;
    c.obj_s = heads[0].forward(flat);
    c.obj_a = heads[1].forward(flat);
    c.bg_s = heads[2].forward(flat);
    c.bg_a = heads[3].forward(flat);
    return c;
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].register_params(store, prefix + ".block" + std::to_string(i));
    const char* names[4] = {".head_obj_s", ".head_obj_a", ".head_bg_s",
                            ".head_bg_a"};
    for (std::size_t i = 0; i < 4; ++i)
      heads[i].register_params(store, prefix + names[i]);
  }
};

// Single-image inversion to a latent code (object first, background last).
template <class T>
scene::LatentCode<T> invert(const Inverter<T>& inverter,
                            const ad::Tensor<T>& image) {
  ad::require(image.rank() == 4 && image.dim(0) == 1,
              "invert: single image [1,3,R,R] required, got " +
                  ad::shape_str(image.shape()));
  auto codes = inverter.forward(image);
  scene::LatentCode<T> out;
  out.entities.emplace_back(codes.obj_s, codes.obj_a);
  out.entities.emplace_back(codes.bg_s, codes.bg_a);
  out.validate();
  return out;
}

// Full generator pass with predicted codes and the SOURCE pose/transforms;
// deterministic (bin midpoints, no stratification).
template <class T>
typename gan::Generator<T>::Output reconstruct(
    const gan::Generator<T>& gen, const scene::LatentCode<T>& code,
    const std::vector<scene::AffineTransform>& object_transforms,
    const vol::CameraPose& pose, bool want_object_alpha = false,
    vol::RenderProbe* probe = nullptr) {
  code.validate();
  const long n_objects = code.entity_count() - 1;
  ad::require(static_cast<long>(object_transforms.size()) == n_objects,
              "reconstruct: " + std::to_string(object_transforms.size()) +
                  " transforms for " + std::to_string(n_objects) + " objects");
  ad::require(n_objects + 1 <= gen.sampling.max_entities,
              "reconstruct: entity cap exceeded");
  scene::SceneSpec<T> scn;
  scn.pose = pose;
  for (long i = 0; i < n_objects; ++i) {
    scene::EntitySpec<T> e;
    e.z_s = code.entities[static_cast<std::size_t>(i)].first;
    e.z_a = code.entities[static_cast<std::size_t>(i)].second;
    e.transform = object_transforms[static_cast<std::size_t>(i)];
    e.is_background = false;
    scn.entities.push_back(std::move(e));
  }
  scene::EntitySpec<T> bg;
  bg.z_s = code.entities.back().first;
  bg.z_a = code.entities.back().second;
  bg.transform = scene::AffineTransform::make(
      Eigen::Vector3d::Constant(gen.sampling.background_scale),
      Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity());
  bg.is_background = true;
  scn.entities.push_back(std::move(bg));
  return gen.synthesize({scn}, nullptr, want_object_alpha, probe);
}

struct InverterLossWeights {
  double lambda_latent = 10.0;
  double lambda_reconst = 100.0;
  double lambda_percept = 1.0;
  bool use_reconst = true;
  bool use_gan = true;
  bool use_percept = true;
};

template <class T>
struct InverterLoss {
  ad::Tensor<T> total;
  double gan = 0.0;      // unweighted part values; disabled parts stay 0
  double latent = 0.0;
  double reconst = 0.0;
  double percept = 0.0;
};

namespace detail {

template <class T>
ad::Tensor<T> flatten_code(const scene::LatentCode<T>& code) {
  std::vector<ad::Tensor<T>> parts;
  for (const auto& [zs, za] : code.entities) {
    parts.push_back(zs);
    parts.push_back(za);
  }
  return ad::concat_cols(parts);
}

}  // namespace detail

// L_I = L_GAN(rec) + l1 * L1(z) + l2 * L1(images) + l3 * ((1-SSIM) + LPIPS
// substitute). Disabled parts are exactly zero and skipped entirely.
template <class T>
InverterLoss<T> inverter_loss(const scene::LatentCode<T>& z_src,
                              const scene::LatentCode<T>& z_pred,
                              const ad::Tensor<T>& img_src,
                              const ad::Tensor<T>& img_rec,
                              const gan::Discriminator<T>& disc,
                              const metrics::FeatureEmbedder<T>& embedder,
                              const InverterLossWeights& w) {
  ad::require(img_src.shape() == img_rec.shape(),
              "inverter_loss: image shape mismatch " +
                  ad::shape_str(img_src.shape()) + " vs " +
                  ad::shape_str(img_rec.shape()));
  InverterLoss<T> out;
  auto latent_term =
      ad::l1(detail::flatten_code(z_src), detail::flatten_code(z_pred));
  out.latent = static_cast<double>(latent_term.item());
  ad::Tensor<T> total = ad::scale(latent_term, w.lambda_latent);

  if (w.use_reconst) {
    auto rec_term = ad::l1(img_src, img_rec);
    out.reconst = static_cast<double>(rec_term.item());
    total = ad::add(total, ad::scale(rec_term, w.lambda_reconst));
  }
  if (w.use_gan) {
    auto gan_term = ad::mean(ad::softplus(ad::neg(disc.forward(img_rec))));
    out.gan = static_cast<double>(gan_term.item());
    total = ad::add(total, gan_term);
  }
  if (w.use_percept) {
    auto ssim_term = ad::add_scalar(ad::neg(metrics::ssim(img_src, img_rec)), 1.0);
    const long batch = img_src.dim(0);
    ad::Tensor<T> lpips_total = ad::Tensor<T>::zeros({1});
    for (long i = 0; i < batch; ++i) {
      auto src_i = ad::reshape(
          ad::slice_rows(ad::reshape(img_src, {batch, img_src.numel() / batch}),
                         i, 1),
          {1, img_src.dim(1), img_src.dim(2), img_src.dim(3)});
      auto rec_i = ad::reshape(
          ad::slice_rows(ad::reshape(img_rec, {batch, img_rec.numel() / batch}),
                         i, 1),
          {1, img_rec.dim(1), img_rec.dim(2), img_rec.dim(3)});
      lpips_total =
          ad::add(lpips_total, metrics::perceptual_distance(embedder, src_i, rec_i));
    }
    auto percept_term = ad::add(
        ssim_term, ad::scale(lpips_total, 1.0 / static_cast<double>(batch)));
    out.percept = static_cast<double>(percept_term.item());
    total = ad::add(total, ad::scale(percept_term, w.lambda_percept));
  }
  out.total = total;
  return out;
}

}  // namespace fieldgen::inv
