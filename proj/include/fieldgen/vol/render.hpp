#pragma once

#include <vector>

#include "fieldgen/scene/field.hpp"
#include "fieldgen/scene/scene_spec.hpp"
#include "fieldgen/vol/camera.hpp"

namespace fieldgen::vol {

struct RenderConfig {
  long feature_res = 16;  // H_v = W_v
  long n_samples = 32;
  double near = 0.6;
  double far = 4.2;
  double window_sharpness = 8.0;
};

// Test hook: records what actually reaches the renderer.
struct RenderProbe {
  std::vector<CameraPose> poses;
  std::vector<std::vector<scene::AffineTransform>> transforms;
};

template <class T>
struct FeatureMapBatch {
  ad::Tensor<T> features;      // [B, M_f, R, R]
  ad::Tensor<T> alpha;         // [B, 1, R, R], full scene
  ad::Tensor<T> object_alpha;  // [B, 1, R, R], objects only; optional
};

// Alpha-compositing quadrature over fixed-width bins:
//   alpha_j = 1 - exp(-sigma_j * delta),  T_j = prod_{k<j} (1 - alpha_k),
//   w_j = T_j * alpha_j.
// sigma_rows is [N, S]; returns weights [N, S].
template <class T>
ad::Tensor<T> composite_weights(const ad::Tensor<T>& sigma_rows,
                                double delta) {
  ad::require(sigma_rows.rank() == 2 && sigma_rows.dim(1) >= 2,
              "composite_weights: [rays, n_samples>=2] required, got " +
                  ad::shape_str(sigma_rows.shape()));
  auto sd = ad::scale(sigma_rows, delta);
  auto transmittance = ad::exp_op(ad::neg(ad::cumsum_excl(sd)));
  auto alpha = ad::add_scalar(ad::neg(ad::exp_op(ad::neg(sd))), 1.0);
  return ad::mul(transmittance, alpha);
}

// Reference-style single-bundle compositing used by tests and diagnostics:
// sigma [P,S], features [P*S, M] (sample-major rows) -> (F [P,M], alpha [P,1]).
template <class T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> composite_rays(
    const ad::Tensor<T>& sigma_rows, const ad::Tensor<T>& features,
    double delta) {
  auto w = composite_weights(sigma_rows, delta);
  const long s = sigma_rows.dim(1);
  auto w_flat = ad::reshape(w, {sigma_rows.dim(0) * s, 1});
  auto f = ad::group_sum_rows(ad::mul_colvec(features, w_flat), s);
  auto a = ad::sum_cols(w);
  return {f, a};
}

namespace detail {

// Geometry constants for one (scene, entity) pair.
struct EntityGeom {
  long scene = 0;
  bool is_background = false;
};

}  // namespace detail

// Renders every scene in the batch to a feature map plus alpha maps.
// Differentiable w.r.t. field parameters and the latent codes carried by the
// scenes; geometry (rays, transforms, encodings) enters as constants. All
// object entities across the batch run through one field evaluation, and the
// backgrounds through another, so the matmuls stay large. With
// `stratified_rng`, sample positions are jittered within their bins (draw
// order: scene, ray, sample); otherwise bin midpoints are used.
template <class T>
FeatureMapBatch<T> render_feature_maps(
    const std::vector<scene::SceneSpec<T>>& scenes,
    const scene::FieldParams<T>& object_field,
    const scene::FieldParams<T>& background_field, const RenderConfig& cfg,
    Rng* stratified_rng = nullptr, bool want_object_alpha = false,
    RenderProbe* probe = nullptr) {
  ad::require(!scenes.empty(), "render_feature_maps: no scenes");
  ad::require(cfg.n_samples >= 2, "render_feature_maps: n_samples >= 2");
  const long res = cfg.feature_res;
  const long p_count = res * res;
  const long s_count = cfg.n_samples;
  const long rows = p_count * s_count;  // per entity per scene
  const double dt = (cfg.far - cfg.near) / static_cast<double>(s_count);
  const long m_f = object_field.m_f;
  ad::require(background_field.m_f == m_f,
              "render_feature_maps: feature dims disagree between fields");

  const long b = static_cast<long>(scenes.size());
  bool uniform_single_object = true;
  for (const auto& scn : scenes) {
    ad::require(!scn.entities.empty() && scn.entities.back().is_background,
                "render_feature_maps: scene must end with a background entity");
    for (std::size_t e = 0; e + 1 < scn.entities.size(); ++e)
      ad::require(!scn.entities[e].is_background,
                  "render_feature_maps: background must come last");
    if (scn.entities.size() != 2) uniform_single_object = false;
  }

  // --- constants: rays, sample points, encodings, windows ---
  std::vector<ad::Tensor<T>> obj_x_parts, obj_d_parts, obj_win_parts;
  std::vector<ad::Tensor<T>> bg_x_parts, bg_d_parts;
  scene::FieldBlocks<T> obj_in, bg_in;
  std::vector<detail::EntityGeom> obj_geom;

  for (long i = 0; i < b; ++i) {
    const auto& scn = scenes[static_cast<std::size_t>(i)];
    if (probe) {
      probe->poses.push_back(scn.pose);
      std::vector<scene::AffineTransform> ts;
      for (const auto& e : scn.entities) ts.push_back(e.transform);
      probe->transforms.push_back(std::move(ts));
    }
    RayBundle rays = generate_rays(scn.pose, res, cfg.near, cfg.far);
    scene::Points pts(rows, 3);
    for (long p = 0; p < p_count; ++p) {
      for (long s = 0; s < s_count; ++s) {
        const double jitter = stratified_rng ? stratified_rng->uniform() : 0.5;
        const double t = cfg.near + (static_cast<double>(s) + jitter) * dt;
        pts.row(p * s_count + s) =
            rays.origins.row(p) + t * rays.directions.row(p);
      }
    }
    for (const auto& ent : scn.entities) {
      const scene::Points q =
          scene::apply_inverse_transform(ent.transform, pts);
      const scene::Points dq =
          scene::apply_inverse_directions(ent.transform, rays.directions);
      const scene::FieldParams<T>& field =
          ent.is_background ? background_field : object_field;
      auto x_enc = scene::positional_encode<T>(q, field.n_freq_x);
      auto d_enc = ad::repeat_rows_grouped(
          scene::positional_encode<T>(dq, field.n_freq_d), s_count);
      if (ent.is_background) {
        bg_x_parts.push_back(std::move(x_enc));
        bg_d_parts.push_back(std::move(d_enc));
        bg_in.codes.emplace_back(ent.z_s, ent.z_a);
        bg_in.rows.push_back(rows);
      } else {
        obj_x_parts.push_back(std::move(x_enc));
        obj_d_parts.push_back(std::move(d_enc));
        obj_win_parts.push_back(
            scene::box_window<T>(q, cfg.window_sharpness));
        obj_in.codes.emplace_back(ent.z_s, ent.z_a);
        obj_in.rows.push_back(rows);
        obj_geom.push_back({i, false});
      }
    }
  }
  auto cat = [](std::vector<ad::Tensor<T>>& parts) {
    return parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
  };
  obj_in.x_enc = cat(obj_x_parts);
  obj_in.d_enc = cat(obj_d_parts);
  bg_in.x_enc = cat(bg_x_parts);
  bg_in.d_enc = cat(bg_d_parts);

  // --- two batched field evaluations ---
  auto obj_eval = scene::eval_field_blocks(object_field, obj_in);
  obj_eval.sigma = ad::mul(obj_eval.sigma, cat(obj_win_parts));
  auto bg_eval = scene::eval_field_blocks(background_field, bg_in);

  // --- composition ---
  ad::Tensor<T> sigma_all, feat_all, obj_sigma_all;
  if (uniform_single_object) {
    // rows already align scene-major for both fields
    auto composed = scene::compose<T>({obj_eval, bg_eval});
    sigma_all = composed.sigma;
    feat_all = composed.feature;
    obj_sigma_all = obj_eval.sigma;
  } else {
    std::vector<ad::Tensor<T>> sig_parts, feat_parts, obj_sig_parts;
    long obj_cursor = 0;
    for (long i = 0; i < b; ++i) {
      std::vector<scene::FieldSample<T>> parts;
      ad::Tensor<T> scene_obj_sigma;
      while (obj_cursor < static_cast<long>(obj_geom.size()) &&
             obj_geom[static_cast<std::size_t>(obj_cursor)].scene == i) {
        scene::FieldSample<T> s;
        s.sigma = ad::slice_rows(obj_eval.sigma, obj_cursor * rows, rows);
        s.feature = ad::slice_rows(obj_eval.feature, obj_cursor * rows, rows);
        scene_obj_sigma = scene_obj_sigma.defined()
                              ? ad::add(scene_obj_sigma, s.sigma)
                              : s.sigma;
        parts.push_back(std::move(s));
        ++obj_cursor;
      }
      scene::FieldSample<T> bg;
      bg.sigma = ad::slice_rows(bg_eval.sigma, i * rows, rows);
      bg.feature = ad::slice_rows(bg_eval.feature, i * rows, rows);
      parts.push_back(std::move(bg));
      auto composed = scene::compose(parts);
      sig_parts.push_back(composed.sigma);
      feat_parts.push_back(composed.feature);
      ad::require(scene_obj_sigma.defined(),
                  "render_feature_maps: scene without objects");
      obj_sig_parts.push_back(scene_obj_sigma);
    }
    sigma_all = cat(sig_parts);
    feat_all = cat(feat_parts);
    obj_sigma_all = cat(obj_sig_parts);
  }

  // --- quadrature ---
  auto sigma_rows = ad::reshape(sigma_all, {b * p_count, s_count});
  auto [f_rows, alpha_rows] = composite_rays(sigma_rows, feat_all, dt);

  // [B*P, M] -> [B, M, R, R]
  std::vector<ad::Tensor<T>> per_scene;
  for (long i = 0; i < b; ++i) {
    auto block = ad::slice_rows(f_rows, i * p_count, p_count);
    per_scene.push_back(
        ad::reshape(ad::transpose2d(block), {1, m_f * p_count}));
  }
  FeatureMapBatch<T> out;
  out.features = ad::reshape(
      b == 1 ? per_scene[0] : ad::concat_rows(per_scene), {b, m_f, res, res});
  out.alpha = ad::reshape(alpha_rows, {b, 1, res, res});

  if (want_object_alpha) {
    auto w_obj = composite_weights(
        ad::reshape(obj_sigma_all, {b * p_count, s_count}), dt);
    out.object_alpha = ad::reshape(ad::sum_cols(w_obj), {b, 1, res, res});
  }
  return out;
}

template <class T>
FeatureMapBatch<T> render_feature_map(const scene::SceneSpec<T>& scn,
                                      const scene::FieldParams<T>& object_field,
                                      const scene::FieldParams<T>& bg_field,
                                      const RenderConfig& cfg,
                                      Rng* stratified_rng = nullptr,
                                      bool want_object_alpha = false,
                                      RenderProbe* probe = nullptr) {
  return render_feature_maps(std::vector<scene::SceneSpec<T>>{scn},
                             object_field, bg_field, cfg, stratified_rng,
                             want_object_alpha, probe);
}

}  // namespace fieldgen::vol
