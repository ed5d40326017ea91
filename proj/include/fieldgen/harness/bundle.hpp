#pragma once

#include <filesystem>
#include <fstream>

#include "fieldgen/harness/config.hpp"
#include "fieldgen/inv/zero_shot.hpp"

namespace fieldgen::harness {

inline constexpr std::uint32_t kBundleMagic = 0x4c424746;  // "FGBL"
inline constexpr std::uint8_t kBundleVersion = 1;

// Everything needed to resume training bit-exactly: config snapshot, all
// three parameter sets (with their power-iteration buffers), optimizer
// accumulators, step counters, and the rng state.
template <class T>
struct CheckpointBundle {
  ExperimentConfig cfg;
  gan::Generator<T> gen;
  gan::Discriminator<T> disc;
  inv::Inverter<T> inverter;
  ad::OptimizerState<T> opt_g, opt_d, opt_inv;
  Rng rng;
  long gan_step = 0;
  long inv_step = 0;

  static CheckpointBundle fresh(const ExperimentConfig& cfg) {
    cfg.validate();
    CheckpointBundle b;
    b.cfg = cfg;
    Rng init_rng(cfg.seed);
    b.gen = gan::Generator<T>::init(cfg.generator_dims(),
                                    cfg.sampling_config(), cfg.render_config(),
                                    init_rng);
    b.disc = gan::Discriminator<T>::init(cfg.image_res,
                                         cfg.disc_base_channels, init_rng);
    b.inverter = inv::Inverter<T>::init(cfg.image_res, cfg.d_z,
                                        cfg.inverter_base_channels, init_rng);
    b.opt_g = make_opt(cfg.lr_g, cfg);
    b.opt_d = make_opt(cfg.lr_d, cfg);
    b.opt_inv = make_opt(cfg.lr_inverter, cfg);
    b.opt_g.init_like(b.gen_store().trainable());
    b.opt_d.init_like(b.disc_store().trainable());
    b.opt_inv.init_like(b.inv_store().trainable());
    b.rng = Rng(cfg.seed ^ 0x7261696eull);  // training stream
    return b;
  }

  ad::ParamStore<T> gen_store() {
    ad::ParamStore<T> s;
    gen.register_params(s, "gen");
    return s;
  }
  ad::ParamStore<T> disc_store() {
    ad::ParamStore<T> s;
    disc.register_params(s, "disc");
    return s;
  }
  ad::ParamStore<T> inv_store() {
    ad::ParamStore<T> s;
    inverter.register_params(s, "inverter");
    return s;
  }

  void save(const std::string& path) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw io_error("checkpoint: cannot open " + tmp.string());
      ad::detail::write_pod(os, kBundleMagic);
      ad::detail::write_pod(os, kBundleVersion);
      ad::detail::write_pod(os, static_cast<std::uint8_t>(sizeof(T)));
      write_string(os, cfg.canonical_text());
      ad::detail::write_pod(os, cfg.hash());
      write_string(os, rng.serialize());
      ad::detail::write_pod(os, static_cast<std::uint64_t>(gan_step));
      ad::detail::write_pod(os, static_cast<std::uint64_t>(inv_step));
      ad::save_params(gen_store(), os);
      ad::save_params(disc_store(), os);
      ad::save_params(inv_store(), os);
      write_accum(os, opt_g);
      write_accum(os, opt_d);
      write_accum(os, opt_inv);
      if (!os) throw io_error("checkpoint: write failed for " + path);
    }
    fs::rename(tmp, target);
  }

  static CheckpointBundle load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("checkpoint: cannot open " + path);
    if (ad::detail::read_pod<std::uint32_t>(is) != kBundleMagic)
      throw io_error("checkpoint: bad magic in " + path);
    if (ad::detail::read_pod<std::uint8_t>(is) != kBundleVersion)
      throw io_error("checkpoint: unsupported version in " + path);
    if (ad::detail::read_pod<std::uint8_t>(is) != sizeof(T))
      throw io_error("checkpoint: scalar width mismatch in " + path);
    const std::string cfg_text = read_string(is);
    const auto stored_hash = ad::detail::read_pod<std::uint64_t>(is);
    CheckpointBundle b = fresh(ExperimentConfig::from_text(cfg_text));
    if (b.cfg.hash() != stored_hash)
      throw io_error("checkpoint: config hash mismatch in " + path);
    b.rng.deserialize(read_string(is));
    b.gan_step = static_cast<long>(ad::detail::read_pod<std::uint64_t>(is));
    b.inv_step = static_cast<long>(ad::detail::read_pod<std::uint64_t>(is));
    auto gs = b.gen_store();
    auto ds = b.disc_store();
    auto is_ = b.inv_store();
    ad::load_params(gs, is);
    ad::load_params(ds, is);
    ad::load_params(is_, is);
    read_accum(is, b.opt_g);
    read_accum(is, b.opt_d);
    read_accum(is, b.opt_inv);
    b.gen.post_load();
    b.disc.post_load();
    return b;
  }

 private:
  static ad::OptimizerState<T> make_opt(double lr,
                                        const ExperimentConfig& cfg) {
    ad::OptimizerState<T> o;
    o.learning_rate = lr;
    o.decay = cfg.rms_decay;
    o.epsilon = cfg.rms_eps;
    return o;
  }

  static void write_string(std::ostream& os, const std::string& s) {
    ad::detail::write_pod(os, static_cast<std::uint64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  static std::string read_string(std::istream& is) {
    const auto len = ad::detail::read_pod<std::uint64_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) throw io_error("checkpoint: truncated string");
    return s;
  }

  static void write_accum(std::ostream& os, const ad::OptimizerState<T>& o) {
    ad::detail::write_pod(os, static_cast<std::uint64_t>(o.accum.size()));
    for (const auto& a : o.accum) {
      ad::detail::write_pod(os, static_cast<std::uint64_t>(a.size()));
      os.write(reinterpret_cast<const char*>(a.data()),
               static_cast<std::streamsize>(sizeof(T) * a.size()));
    }
  }

  static void read_accum(std::istream& is, ad::OptimizerState<T>& o) {
    const auto count = ad::detail::read_pod<std::uint64_t>(is);
    if (count != o.accum.size())
      throw io_error("checkpoint: optimizer state arity mismatch");
    for (auto& a : o.accum) {
      const auto len = ad::detail::read_pod<std::uint64_t>(is);
      if (static_cast<long>(len) != a.size())
        throw io_error("checkpoint: optimizer accumulator length mismatch");
      is.read(reinterpret_cast<char*>(a.data()),
              static_cast<std::streamsize>(sizeof(T) * len));
    }
    if (!is) throw io_error("checkpoint: truncated optimizer state");
  }
};

}  // namespace fieldgen::harness
