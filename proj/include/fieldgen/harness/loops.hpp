#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>

#include "fieldgen/analysis.hpp"
#include "fieldgen/harness/bundle.hpp"
#include "fieldgen/harness/image_io.hpp"
#include "fieldgen/metrics/frechet.hpp"

namespace fieldgen::harness {

namespace fs = std::filesystem;

inline std::string to_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// In-memory split of PNG-backed training images.
template <class T>
struct DataCache {
  long res = 0;
  std::vector<ad::Buf<T>> images;  // [3*R*R] each, in [-1,1]

  static DataCache load(const synth::DatasetManifest& m,
                        const std::string& split) {
    DataCache c;
    c.res = m.resolution;
    for (const auto* rec : m.split(split)) {
      auto t = img::u8_to_tensor<T>(
          img::read_png((fs::path(m.root) / rec->path).string()));
      c.images.push_back(t.value());
    }
    if (c.images.empty())
      throw io_error("dataset split '" + split + "' is empty under " + m.root);
    return c;
  }

  ad::Tensor<T> batch(Rng& rng, long count) const {
    ad::Buf<T> out(count * 3 * res * res);
    for (long i = 0; i < count; ++i) {
      const auto idx = static_cast<std::size_t>(
          rng.next_u64() % images.size());
      out.segment(i * 3 * res * res, 3 * res * res) = images[idx];
    }
    return ad::Tensor<T>::from_buf({count, 3, res, res}, std::move(out));
  }

  ad::Tensor<T> image(std::size_t i) const {
    ad::Buf<T> b = images.at(i);
    return ad::Tensor<T>::from_buf({1, 3, res, res}, std::move(b));
  }
};

template <class T>
gan::GanTrainState<T> gan_state_from_bundle(CheckpointBundle<T>& b) {
  gan::GanTrainState<T> st{b.gen,    b.disc, {}, {}, b.opt_g,
                           b.opt_d,  b.rng,  b.gan_step,
                           b.cfg.gan_hypers()};
  ad::ParamStore<T> gs = b.gen_store();
  ad::ParamStore<T> ds = b.disc_store();
  st.params_g = gs.trainable();
  st.params_d = ds.trainable();
  return st;
}

template <class T>
void sync_gan_state(CheckpointBundle<T>& b, const gan::GanTrainState<T>& st) {
  b.opt_g = st.opt_g;
  b.opt_d = st.opt_d;
  b.rng = st.rng;
  b.gan_step = st.step;
}

struct TrainResult {
  long steps_run = 0;
  bool aborted = false;
  std::string checkpoint_path;
  std::string log_path;
};

template <class T>
void write_sample_grid(CheckpointBundle<T>& bundle, const fs::path& dir,
                       long step, Rng& rng) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const long count = 8;
  auto scenes = bundle.gen.sample_scenes(count, rng);
  ad::NoGradGuard ng;
  auto out = bundle.gen.synthesize(scenes);
  std::vector<ad::Tensor<T>> tiles;
  for (long i = 0; i < count; ++i) {
    auto row = ad::slice_rows(
        ad::reshape(out.images, {count, out.images.numel() / count}), i, 1);
    tiles.push_back(ad::reshape(row, {1, 3, bundle.cfg.image_res,
                                      bundle.cfg.image_res}));
  }
  img::write_png((dir / ("step_" + std::to_string(step) + ".png")).string(),
                 img::tile_grid(tiles, 4));
  // provenance record per generated sample
  for (long i = 0; i < count; ++i) {
    std::ofstream os(dir / ("step_" + std::to_string(step) + "_scene" +
                            std::to_string(i) + ".txt"));
    os << scene::scene_spec_to_text(scenes[static_cast<std::size_t>(i)]);
  }
}

// GAN phase: alternating updates for cfg.gan_iters steps with periodic
// checkpoints and sample grids. A numeric abort stops the run, leaving the
// last periodic checkpoint in place.
template <class T>
TrainResult train_gan(CheckpointBundle<T>& bundle, const std::string& out_dir,
                      const synth::DatasetManifest& data) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  auto cache = DataCache<T>::load(data, "train");
  if (cache.res != bundle.cfg.image_res)
    throw config_error("train_gan: dataset resolution " +
                       std::to_string(cache.res) + " != config image_res " +
                       std::to_string(bundle.cfg.image_res));
  auto st = gan_state_from_bundle(bundle);

  TrainResult result;
  result.log_path = (fs::path(out_dir) / "gan_log.csv").string();
  result.checkpoint_path = (fs::path(out_dir) / "gan_checkpoint.fgb").string();
  std::ofstream log(result.log_path,
                    bundle.gan_step == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw io_error("train_gan: cannot write " + result.log_path);
  if (bundle.gan_step == 0)
    log << gan::GanBatchReport::csv_header() << "\n";

  const long target = bundle.cfg.gan_iters;
  while (st.step < target) {
    auto batch = cache.batch(st.rng, st.hp.batch_size);
    auto rep = gan::gan_train_step(st, batch);
    log << rep.csv_row() << "\n";
    ++result.steps_run;
    if (rep.aborted) {
      result.aborted = true;
      break;
    }
    if (st.step % bundle.cfg.sample_every == 0)
      write_sample_grid(bundle, fs::path(out_dir) / "samples", st.step,
                        st.rng);
    if (st.step % bundle.cfg.checkpoint_every == 0) {
      sync_gan_state(bundle, st);
      bundle.save(result.checkpoint_path);
    }
    if (st.step % bundle.cfg.log_every == 0) log.flush();
  }
  log.flush();
  if (!result.aborted) {
    sync_gan_state(bundle, st);
    bundle.save(result.checkpoint_path);
  }
  return result;
}

template <class T>
inv::InvTrainState<T> inverter_state_from_bundle(CheckpointBundle<T>& b) {
  auto st = inv::InvTrainState<T>::init(
      b.inverter, b.gen, b.disc,
      metrics::FeatureEmbedder<T>::make(b.cfg.embedder_seed, b.cfg.embed_dim),
      b.cfg.inverter_weights(), b.cfg.inverter_hypers(), /*seed=*/0);
  st.rng = b.rng;
  st.step = b.inv_step;
  st.opt = b.opt_inv;
  return st;
}

// Inverter phase against the frozen generator/discriminator. The frozen
// hash is recorded in the log; any drift is a hard failure inside the step.
template <class T>
TrainResult train_inverter(CheckpointBundle<T>& bundle,
                           const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  auto st = inverter_state_from_bundle(bundle);

  TrainResult result;
  result.log_path = (fs::path(out_dir) / "inverter_log.csv").string();
  result.checkpoint_path =
      (fs::path(out_dir) / "inverter_checkpoint.fgb").string();
  std::ofstream log(result.log_path,
                    bundle.inv_step == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw io_error("train_inverter: cannot write " + result.log_path);
  if (bundle.inv_step == 0)
    log << inv::InvStepReport::csv_header() << "\n";

  auto sync = [&] {
    bundle.opt_inv = st.opt;
    bundle.rng = st.rng;
    bundle.inv_step = st.step;
  };
  const long target = bundle.cfg.inverter_iters;
  while (st.step < target) {
    auto rep = inv::inverter_train_step(st);
    log << rep.csv_row() << "\n";
    ++result.steps_run;
    if (rep.aborted) {
      result.aborted = true;
      break;
    }
    if (st.step % bundle.cfg.checkpoint_every == 0) {
      sync();
      bundle.save(result.checkpoint_path);
    }
    if (st.step % bundle.cfg.log_every == 0) log.flush();
  }
  log.flush();
  if (!result.aborted) {
    sync();
    bundle.save(result.checkpoint_path);
  }
  return result;
}

template <class T>
vol::CameraPose canonical_pose(const ExperimentConfig& cfg) {
  vol::CameraPose p;
  p.azimuth = 0.5 * (cfg.azimuth_min + cfg.azimuth_max);
  p.elevation = cfg.elevation;
  p.radius = cfg.radius;
  p.fov_deg = cfg.fov_deg;
  return p;
}

// Batched synthesis of `count` images with freshly sampled scene specs.
template <class T>
std::vector<ad::Tensor<T>> sample_generator_images(CheckpointBundle<T>& b,
                                                   long count, Rng& rng,
                                                   long chunk = 16) {
  std::vector<ad::Tensor<T>> out;
  ad::NoGradGuard ng;
  while (static_cast<long>(out.size()) < count) {
    const long n = std::min(chunk, count - static_cast<long>(out.size()));
    auto scenes = b.gen.sample_scenes(n, rng);
    auto batch = b.gen.synthesize(scenes).images;
    for (long i = 0; i < n; ++i) {
      auto row = ad::slice_rows(
          ad::reshape(batch, {n, batch.numel() / n}), i, 1);
      out.push_back(ad::reshape(
          row, {1, 3, b.cfg.image_res, b.cfg.image_res}));
    }
  }
  return out;
}

// Evaluation protocol: unconditional and conditional distribution distances
// plus reconstruction quality on held-out generated scenes. Absolute values
// come from the fixed-seed embedder and are only comparable within one
// embedder seed.
template <class T>
nlohmann::json run_eval(CheckpointBundle<T>& bundle,
                        const synth::DatasetManifest& data,
                        std::uint64_t eval_seed) {
  const auto& cfg = bundle.cfg;
  auto embedder =
      metrics::FeatureEmbedder<T>::make(cfg.embedder_seed, cfg.embed_dim);
  Rng rng(eval_seed);
  ad::NoGradGuard ng;

  auto test_cache = DataCache<T>::load(data, "test");
  const long n_real =
      std::min<long>(cfg.eval_samples, static_cast<long>(test_cache.images.size()));
  std::vector<ad::Tensor<T>> reals;
  for (long i = 0; i < n_real; ++i) reals.push_back(test_cache.image(i));
  auto real_stats = metrics::collect_stats(embedder, reals);

  const long n_fake = cfg.eval_samples;
  auto fakes = sample_generator_images(bundle, n_fake, rng);
  auto fake_stats = metrics::collect_stats(embedder, fakes);
  const double fid_uncond = metrics::frechet_distance(real_stats, fake_stats);

  // conditional: invert held-out reals, re-render at the canonical pose
  std::vector<ad::Tensor<T>> conditional;
  for (long i = 0; i < n_real; ++i) {
    auto code = inv::invert(bundle.inverter, reals[static_cast<std::size_t>(i)]);
    auto rec = inv::reconstruct(bundle.gen, code,
                                {scene::AffineTransform::identity()},
                                canonical_pose<T>(cfg));
    conditional.push_back(rec.images);
  }
  auto cond_stats = metrics::collect_stats(embedder, conditional);
  const double fid_cond = metrics::frechet_distance(real_stats, cond_stats);

  // reconstruction quality on held-out generated images
  const long n_rec = std::min<long>(64, cfg.eval_samples);
  double ssim_acc = 0, psnr_acc = 0;
  for (long i = 0; i < n_rec; ++i) {
    auto scn = scene::sample_scene_spec<T>(rng, bundle.gen.sampling);
    auto src = bundle.gen.synthesize({scn}).images;
    auto code = inv::invert(bundle.inverter, src);
    auto rec = inv::reconstruct(bundle.gen, code,
                                {scn.entities[0].transform}, scn.pose);
    ssim_acc += static_cast<double>(metrics::ssim(src, rec.images).item());
    psnr_acc += metrics::psnr(src, rec.images);
  }

  nlohmann::json report;
  report["config_hash"] = to_hex(cfg.hash());
  report["eval_seed"] = eval_seed;
  report["metrics"] = nlohmann::json::array();
  auto add = [&](const char* name, double value, long count) {
    report["metrics"].push_back({{"metric", name},
                                 {"value", value},
                                 {"sample_count", count},
                                 {"embedder_seed", cfg.embedder_seed}});
  };
  add("fid_substitute_unconditional", fid_uncond, n_fake);
  add("fid_substitute_conditional", fid_cond, n_real);
  add("reconstruction_ssim_mean", ssim_acc / n_rec, n_rec);
  add("reconstruction_psnr_mean", psnr_acc / n_rec, n_rec);
  return report;
}

}  // namespace fieldgen::harness
