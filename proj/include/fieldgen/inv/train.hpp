#pragma once

#include "fieldgen/inv/inverter.hpp"

namespace fieldgen::inv {

struct InvHypers {
  long batch_size = 8;
  double lr = 1e-4;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;
};

struct InvStepReport {
  long step = 0;
  double total = 0, gan = 0, latent = 0, reconst = 0, percept = 0;
  std::uint64_t frozen_hash = 0;
  bool aborted = false;

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << step << ',' << total << ',' << latent << ',' << reconst << ','
       << gan << ',' << percept << ',' << std::hex << frozen_hash;
    return os.str();
  }
  static const char* csv_header() {
    return "step,total,latent,reconst,gan,percept,frozen_hash";
  }
};

// Inverter training against a frozen generator/discriminator pair. Freezing
// is structural (requires_grad stripped) and audited (value hash compared
// after every step; a change is a hard failure).
template <class T>
struct InvTrainState {
  Inverter<T> inverter;
  gan::Generator<T> gen;
  gan::Discriminator<T> disc;
  metrics::FeatureEmbedder<T> embedder;
  InverterLossWeights weights;
  InvHypers hp;
  std::vector<ad::Tensor<T>> params;
  ad::OptimizerState<T> opt;
  Rng rng;
  long step = 0;
  std::uint64_t frozen_hash = 0;

  static InvTrainState init(Inverter<T> inverter, gan::Generator<T> gen,
                            gan::Discriminator<T> disc,
                            metrics::FeatureEmbedder<T> embedder,
                            const InverterLossWeights& weights,
                            const InvHypers& hp, std::uint64_t seed) {
    InvTrainState st{std::move(inverter), std::move(gen),   std::move(disc),
                     std::move(embedder), weights,          hp,
                     {},                  {},               Rng(seed),
                     0,                   0};
    ad::ParamStore<T> frozen;
    st.gen.register_params(frozen, "gen");
    st.disc.register_params(frozen, "disc");
    for (auto& [name, t] : frozen.entries)
      if (t.requires_grad()) t.set_requires_grad(false);
    st.frozen_hash = frozen.value_hash();

    ad::ParamStore<T> own;
    st.inverter.register_params(own, "inverter");
    st.params = own.trainable();
    st.opt.learning_rate = hp.lr;
    st.opt.decay = hp.rms_decay;
    st.opt.epsilon = hp.rms_eps;
    st.opt.init_like(st.params);
    return st;
  }

  std::uint64_t current_frozen_hash() const {
    ad::ParamStore<T> frozen;
    const_cast<InvTrainState*>(this)->gen.register_params(frozen, "gen");
    const_cast<InvTrainState*>(this)->disc.register_params(frozen, "disc");
    return frozen.value_hash();
  }
};

// One inverter step: sample scenes, synthesize sources, invert, reconstruct
// with the SOURCE transforms and pose, apply L_I, update the inverter only.
template <class T>
InvStepReport inverter_train_step(InvTrainState<T>& st,
                                  vol::RenderProbe* probe = nullptr) {
  InvStepReport report;
  report.step = st.step;
  try {
    const long b = st.hp.batch_size;
    auto scenes = st.gen.sample_scenes(b, st.rng);
    ad::Tensor<T> src_images;
    {
      ad::NoGradGuard ng;
      src_images = st.gen.synthesize(scenes).images;
    }
    auto codes = st.inverter.forward(src_images);

    // reconstruction scenes reuse the source transforms and poses verbatim
    std::vector<scene::SceneSpec<T>> rec_scenes;
    rec_scenes.reserve(b);
    for (long i = 0; i < b; ++i) {
      scene::SceneSpec<T> rs;
      rs.pose = scenes[static_cast<std::size_t>(i)].pose;
      scene::EntitySpec<T> obj;
      obj.z_s = ad::slice_rows(codes.obj_s, i, 1);
      obj.z_a = ad::slice_rows(codes.obj_a, i, 1);
      obj.transform = scenes[static_cast<std::size_t>(i)].entities[0].transform;
      obj.is_background = false;
      rs.entities.push_back(std::move(obj));
      scene::EntitySpec<T> bg;
      bg.z_s = ad::slice_rows(codes.bg_s, i, 1);
      bg.z_a = ad::slice_rows(codes.bg_a, i, 1);
      bg.transform = scenes[static_cast<std::size_t>(i)].entities.back().transform;
      bg.is_background = true;
      rs.entities.push_back(std::move(bg));
      rec_scenes.push_back(std::move(rs));
    }
    auto rec_images =
        vol::render_feature_maps(rec_scenes, st.gen.object_field,
                                 st.gen.background_field, st.gen.render_cfg,
                                 nullptr, false, probe);
    auto img_rec = st.gen.renderer.forward(rec_images.features);

    // batched code tensors for the latent term
    std::vector<ad::Tensor<T>> src_rows;
    for (const auto& scn : scenes) {
      std::vector<ad::Tensor<T>> parts;
      for (const auto& e : scn.entities) {
        parts.push_back(e.z_s);
        parts.push_back(e.z_a);
      }
      src_rows.push_back(ad::concat_cols(parts));
    }
    auto z_src_flat = ad::concat_rows(src_rows);
    auto z_pred_flat = ad::concat_cols<T>(
        {codes.obj_s, codes.obj_a, codes.bg_s, codes.bg_a});

    auto latent_term = ad::l1(z_src_flat, z_pred_flat);
    report.latent = static_cast<double>(latent_term.item());
    ad::Tensor<T> total = ad::scale(latent_term, st.weights.lambda_latent);
    if (st.weights.use_reconst) {
      auto rec_term = ad::l1(src_images, img_rec);
      report.reconst = static_cast<double>(rec_term.item());
      total = ad::add(total, ad::scale(rec_term, st.weights.lambda_reconst));
    }
    if (st.weights.use_gan) {
      auto gan_term =
          ad::mean(ad::softplus(ad::neg(st.disc.forward(img_rec))));
      report.gan = static_cast<double>(gan_term.item());
      total = ad::add(total, gan_term);
    }
    if (st.weights.use_percept) {
      auto ssim_term =
          ad::add_scalar(ad::neg(metrics::ssim(src_images, img_rec)), 1.0);
      ad::Tensor<T> lpips_total = ad::Tensor<T>::zeros({1});
      for (long i = 0; i < b; ++i) {
        auto pick = [&](const ad::Tensor<T>& imgs) {
          return ad::reshape(
              ad::slice_rows(ad::reshape(imgs, {b, imgs.numel() / b}), i, 1),
              {1, imgs.dim(1), imgs.dim(2), imgs.dim(3)});
        };
        lpips_total = ad::add(
            lpips_total, metrics::perceptual_distance(
                             st.embedder, pick(src_images), pick(img_rec)));
      }
      auto percept_term =
          ad::add(ssim_term, ad::scale(lpips_total, 1.0 / b));
      report.percept = static_cast<double>(percept_term.item());
      total = ad::add(total, ad::scale(percept_term, st.weights.lambda_percept));
    }
    report.total = static_cast<double>(total.item());

    ad::zero_grad(st.params);
    ad::backward(total);
    ad::rmsprop_step(st.params, st.opt);
  } catch (const numeric_error&) {
    report.aborted = true;
  }
  report.frozen_hash = st.current_frozen_hash();
  if (report.frozen_hash != st.frozen_hash)
    throw std::logic_error(
        "inverter_train_step: frozen generator/discriminator changed");
  st.step += 1;
  return report;
}

}  // namespace fieldgen::inv
