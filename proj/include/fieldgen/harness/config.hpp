#pragma once

#include <string>

#include "fieldgen/gan/train.hpp"
#include "fieldgen/inv/train.hpp"
#include "fieldgen/synth/synth.hpp"

namespace fieldgen::harness {

// Flat sectioned key-value experiment configuration. Every value is
// validated on load and unknown keys are rejected; the canonical
// serialization is hashed into checkpoints and output manifests.
struct ExperimentConfig {
  // [model]
  long d_z = 64;
  long m_f = 32;
  long field_hidden = 64;
  long field_depth = 4;
  long n_freq_x = 6;
  long n_freq_d = 4;
  long renderer_min_channels = 16;
  long renderer_extra_blocks = 0;
  long disc_base_channels = 32;
  long inverter_base_channels = 32;
  long max_entities = 4;

  // [render]
  long image_res = 32;
  long feature_res = 16;
  long n_samples = 32;
  double radius = 2.4;
  double elevation = 0.25;
  double fov_deg = 50.0;
  double half_extent = 1.8;  // near/far = radius -/+ half_extent
  double window_sharpness = 8.0;
  double background_scale = 3.0;

  // [pose]
  double azimuth_min = 0.0;
  double azimuth_max = 2.0 * kPi;

  // [transform]
  double scale_min = 0.35;
  double scale_max = 0.60;
  double translate_max = 0.35;
  double rotation_max = 2.0 * kPi;

  // [train]
  long batch_size = 16;
  long gan_iters = 5000;
  long inverter_iters = 2500;
  long inverter_batch = 8;
  double lr_g = 1e-4;
  double lr_d = 7e-5;
  double lr_inverter = 1e-4;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;
  double r1_lambda = 10.0;
  std::string r1_mode = "autodiff";  // autodiff | fd
  std::string gan_form = "nonsat";   // nonsat | sat
  long sn_iters = 1;
  bool stratified = true;
  double lambda_latent = 10.0;
  double lambda_reconst = 100.0;
  double lambda_percept = 1.0;
  bool use_reconst = true;
  bool use_gan = true;
  bool use_percept = true;
  std::uint64_t seed = 1;
  long log_every = 1;
  long checkpoint_every = 500;
  long sample_every = 500;

  // [data]
  std::string data_root = "data/synth";
  std::string scene_class = "face_like";
  long train_count = 512;
  long test_count = 64;
  long ood_count = 64;

  // [eval]
  long eval_samples = 512;
  std::uint64_t embedder_seed = 1234;
  long embed_dim = 64;

  void validate() const;
  std::string canonical_text() const;
  std::uint64_t hash() const { return fnv1a64(canonical_text()); }
  // Hash of the architecture-determining sections only ([model], [render],
  // [pose], [transform]); checkpoints from ablation runs share it.
  std::uint64_t dims_hash() const;

  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  void write_file(const std::string& path) const;

  gan::GeneratorDims generator_dims() const {
    gan::GeneratorDims d;
    d.d_z = d_z;
    d.m_f = m_f;
    d.field_hidden = field_hidden;
    d.field_depth = field_depth;
    d.n_freq_x = n_freq_x;
    d.n_freq_d = n_freq_d;
    d.image_res = image_res;
    d.feature_res = feature_res;
    d.renderer_min_channels = renderer_min_channels;
    d.renderer_extra_blocks = renderer_extra_blocks;
    return d;
  }

  scene::SceneSamplingConfig sampling_config() const {
    scene::SceneSamplingConfig s;
    s.d_z = d_z;
    s.n_objects = 1;
    s.max_entities = max_entities;
    s.azimuth_min = azimuth_min;
    s.azimuth_max = azimuth_max;
    s.elevation = elevation;
    s.radius = radius;
    s.fov_deg = fov_deg;
    s.scale_min = scale_min;
    s.scale_max = scale_max;
    s.translate_max = translate_max;
    s.rotation_max = rotation_max;
    s.background_scale = background_scale;
    return s;
  }

  vol::RenderConfig render_config() const {
    vol::RenderConfig r;
    r.feature_res = feature_res;
    r.n_samples = n_samples;
    r.near = radius - half_extent;
    r.far = radius + half_extent;
    r.window_sharpness = window_sharpness;
    return r;
  }

  gan::GanHypers gan_hypers() const {
    gan::GanHypers h;
    h.batch_size = batch_size;
    h.lr_g = lr_g;
    h.lr_d = lr_d;
    h.rms_decay = rms_decay;
    h.rms_eps = rms_eps;
    h.r1_lambda = r1_lambda;
    h.r1_mode = r1_mode == "fd" ? gan::R1Mode::kFiniteDifference
                                : gan::R1Mode::kAutodiff;
    h.gan_form = gan_form == "sat" ? gan::GanForm::kSaturating
                                   : gan::GanForm::kNonSaturating;
    h.sn_iters = static_cast<int>(sn_iters);
    h.stratified_sampling = stratified;
    return h;
  }

  inv::InvHypers inverter_hypers() const {
    inv::InvHypers h;
    h.batch_size = inverter_batch;
    h.lr = lr_inverter;
    h.rms_decay = rms_decay;
    h.rms_eps = rms_eps;
    return h;
  }

  inv::InverterLossWeights inverter_weights() const {
    inv::InverterLossWeights w;
    w.lambda_latent = lambda_latent;
    w.lambda_reconst = lambda_reconst;
    w.lambda_percept = lambda_percept;
    w.use_reconst = use_reconst;
    w.use_gan = use_gan;
    w.use_percept = use_percept;
    return w;
  }

  synth::SynthDataConfig synth_config(int threads = 1) const {
    synth::SynthDataConfig s;
    s.root = data_root;
    s.scene_class = synth::SceneClassConfig::by_name(scene_class);
    s.scene_class.azimuth_min = azimuth_min;
    s.scene_class.azimuth_max = azimuth_max;
    s.scene_class.elevation = elevation;
    s.scene_class.radius = radius;
    s.scene_class.fov_deg = fov_deg;
    s.resolution = image_res;
    s.train_count = train_count;
    s.test_count = test_count;
    s.ood_count = ood_count;
    s.seed = seed;
    s.threads = threads;
    return s;
  }
};

}  // namespace fieldgen::harness
