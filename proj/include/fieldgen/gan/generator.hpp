#pragma once

#include "fieldgen/neural/renderer.hpp"
#include "fieldgen/vol/render.hpp"

namespace fieldgen::gan {

struct GeneratorDims {
  long d_z = 64;
  long m_f = 32;
  long field_hidden = 64;
  long field_depth = 4;
  long n_freq_x = 6;
  long n_freq_d = 4;
  long image_res = 32;
  long feature_res = 16;
  long renderer_min_channels = 16;
  long renderer_extra_blocks = 0;
};

// Full generator G: per-entity feature fields -> volume rendering ->
// neural image renderer. Object entities share one field's weights; the
// background has its own.
template <class T>
struct Generator {
  GeneratorDims dims;
  scene::FieldParams<T> object_field;
  scene::FieldParams<T> background_field;
  neural::ImageRenderer<T> renderer;
  scene::SceneSamplingConfig sampling;
  vol::RenderConfig render_cfg;

  static Generator init(const GeneratorDims& dims,
                        const scene::SceneSamplingConfig& sampling,
                        const vol::RenderConfig& render_cfg, Rng& rng) {
    if (sampling.d_z != dims.d_z)
      throw std::invalid_argument("Generator: sampling d_z disagrees");
    Generator g;
    g.dims = dims;
    g.sampling = sampling;
    g.render_cfg = render_cfg;
    Rng obj_rng = rng.fork("object-field");
    Rng bg_rng = rng.fork("background-field");
    Rng ren_rng = rng.fork("renderer");
    g.object_field = scene::FieldParams<T>::init(
        dims.d_z, dims.m_f, dims.field_hidden, dims.field_depth,
        dims.n_freq_x, dims.n_freq_d, obj_rng);
    g.background_field = scene::FieldParams<T>::init(
        dims.d_z, dims.m_f, dims.field_hidden, dims.field_depth,
        dims.n_freq_x, dims.n_freq_d, bg_rng);
    g.renderer = neural::ImageRenderer<T>::init(
        dims.m_f, dims.feature_res, dims.image_res, ren_rng,
        dims.renderer_min_channels, dims.renderer_extra_blocks);
    return g;
  }

  struct Output {
    ad::Tensor<T> images;        // [B,3,R,R] in [-1,1]
    ad::Tensor<T> alpha;         // [B,1,F,F] full-scene alpha
    ad::Tensor<T> object_alpha;  // [B,1,F,F] when requested
  };

  Output synthesize(const std::vector<scene::SceneSpec<T>>& scenes,
                    Rng* stratified_rng = nullptr,
                    bool want_object_alpha = false,
                    vol::RenderProbe* probe = nullptr) const {
    auto fm = vol::render_feature_maps(scenes, object_field, background_field,
                                       render_cfg, stratified_rng,
                                       want_object_alpha, probe);
    Output out;
    out.images = renderer.forward(fm.features);
    out.alpha = fm.alpha;
    out.object_alpha = fm.object_alpha;
    return out;
  }

  std::vector<scene::SceneSpec<T>> sample_scenes(long count, Rng& rng) const {
    std::vector<scene::SceneSpec<T>> scenes;
    scenes.reserve(count);
    for (long i = 0; i < count; ++i)
      scenes.push_back(scene::sample_scene_spec<T>(rng, sampling));
    return scenes;
  }

  void refresh_spectral(int iters) { renderer.refresh_spectral(iters); }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    object_field.register_params(store, prefix + ".obj");
    background_field.register_params(store, prefix + ".bg");
    renderer.register_params(store, prefix + ".renderer");
  }

  void post_load() { renderer.post_load(); }
};

}  // namespace fieldgen::gan
