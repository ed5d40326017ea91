#pragma once

#include "fieldgen/ad/optim.hpp"
#include "fieldgen/gan/generator.hpp"
#include "fieldgen/gan/losses.hpp"

namespace fieldgen::gan {

struct GanHypers {
  long batch_size = 16;
  double lr_g = 1e-4;
  double lr_d = 7e-5;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;
  double r1_lambda = 10.0;  // applied as (lambda/2) * ||grad||^2
  R1Mode r1_mode = R1Mode::kAutodiff;
  GanForm gan_form = GanForm::kNonSaturating;
  int sn_iters = 1;
  bool stratified_sampling = true;
};

struct GanBatchReport {
  long step = 0;
  double d_loss = 0;
  double g_loss = 0;
  double r1_penalty = 0;
  double d_real_mean = 0;
  double d_fake_mean = 0;
  bool aborted = false;

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << step << ',' << d_loss << ',' << g_loss << ',' << r1_penalty << ','
       << d_real_mean << ',' << d_fake_mean;
    return os.str();
  }
  static const char* csv_header() {
    return "step,d_loss,g_loss,r1_penalty,d_real_mean,d_fake_mean";
  }
};

template <class T>
struct GanTrainState {
  Generator<T> gen;
  Discriminator<T> disc;
  std::vector<ad::Tensor<T>> params_g, params_d;
  ad::OptimizerState<T> opt_g, opt_d;
  Rng rng;
  long step = 0;
  GanHypers hp;

  static GanTrainState init(Generator<T> gen, Discriminator<T> disc,
                            const GanHypers& hp, std::uint64_t seed) {
    GanTrainState st{std::move(gen), std::move(disc), {}, {}, {}, {},
                     Rng(seed), 0, hp};
    ad::ParamStore<T> gs, ds;
    st.gen.register_params(gs, "gen");
    st.disc.register_params(ds, "disc");
    st.params_g = gs.trainable();
    st.params_d = ds.trainable();
    st.opt_g.learning_rate = hp.lr_g;
    st.opt_g.decay = hp.rms_decay;
    st.opt_g.epsilon = hp.rms_eps;
    st.opt_g.init_like(st.params_g);
    st.opt_d.learning_rate = hp.lr_d;
    st.opt_d.decay = hp.rms_decay;
    st.opt_d.epsilon = hp.rms_eps;
    st.opt_d.init_like(st.params_d);
    return st;
  }
};

namespace detail {

// Abort snapshots cover every registered tensor (weights, biases, and the
// spectral power-iteration buffers) plus the optimizer accumulators.
template <class T>
struct Snapshot {
  std::vector<ad::Buf<T>> all_vals, g_acc, d_acc;
  std::vector<T> gen_sigmas, disc_sigmas;
};

template <class T>
std::vector<const ad::SpectralState<T>*> spectral_states(
    GanTrainState<T>& st, bool gen) {
  std::vector<const ad::SpectralState<T>*> out;
  if (gen) {
    for (const auto* conv : st.gen.renderer.spectral_convs())
      out.push_back(&conv->sn);
  } else {
    for (const auto* conv : st.disc.spectral_convs()) out.push_back(&conv->sn);
    out.push_back(&st.disc.spectral_head().sn);
  }
  return out;
}

template <class T>
Snapshot<T> take_snapshot(GanTrainState<T>& st) {
  Snapshot<T> s;
  ad::ParamStore<T> store;
  st.gen.register_params(store, "gen");
  st.disc.register_params(store, "disc");
  for (const auto& [name, t] : store.entries) s.all_vals.push_back(t.value());
  s.g_acc = st.opt_g.accum;
  s.d_acc = st.opt_d.accum;
  for (const auto* sn : spectral_states(st, true))
    s.gen_sigmas.push_back(sn->sigma);
  for (const auto* sn : spectral_states(st, false))
    s.disc_sigmas.push_back(sn->sigma);
  return s;
}

template <class T>
void restore_snapshot(GanTrainState<T>& st, const Snapshot<T>& s) {
  ad::ParamStore<T> store;
  st.gen.register_params(store, "gen");
  st.disc.register_params(store, "disc");
  for (std::size_t i = 0; i < store.entries.size(); ++i)
    store.entries[i].second.mutable_value() = s.all_vals[i];
  st.opt_g.accum = s.g_acc;
  st.opt_d.accum = s.d_acc;
  std::size_t i = 0;
  for (const auto* sn : spectral_states(st, true))
    const_cast<ad::SpectralState<T>*>(sn)->sigma = s.gen_sigmas[i++];
  i = 0;
  for (const auto* sn : spectral_states(st, false))
    const_cast<ad::SpectralState<T>*>(sn)->sigma = s.disc_sigmas[i++];
}

}  // namespace detail

// One adversarial step: a discriminator update with R1 on the reals, then a
// generator update on freshly sampled scenes. A non-finite value anywhere
// aborts the step and restores the pre-step parameters.
template <class T>
GanBatchReport gan_train_step(GanTrainState<T>& st,
                              const ad::Tensor<T>& real_batch) {
  ad::require(real_batch.rank() == 4 && real_batch.dim(0) == st.hp.batch_size,
              "gan_train_step: real batch " +
                  ad::shape_str(real_batch.shape()) + " does not match batch " +
                  std::to_string(st.hp.batch_size));
  GanBatchReport report;
  report.step = st.step;
  auto snapshot = detail::take_snapshot(st);
  try {
    Rng* strat = st.hp.stratified_sampling ? &st.rng : nullptr;

    // --- discriminator update ---
    st.disc.refresh_spectral(st.hp.sn_iters);
    st.gen.refresh_spectral(st.hp.sn_iters);
    auto scenes_d = st.gen.sample_scenes(st.hp.batch_size, st.rng);
    ad::Tensor<T> fakes_d;
    {
      ad::NoGradGuard ng;  // generator is not updated in this half-step
      fakes_d = st.gen.synthesize(scenes_d, strat).images;
    }
    auto real_logits = st.disc.forward(real_batch);
    auto fake_logits = st.disc.forward(fakes_d);
    auto losses = gan_losses(real_logits, fake_logits, st.hp.gan_form);
    auto r1 = r1_penalty(st.disc, real_batch, st.hp.r1_mode, &st.rng);
    auto d_total =
        ad::add(losses.d_loss, ad::scale(r1.penalty, 0.5 * st.hp.r1_lambda));
    ad::zero_grad(st.params_d);
    ad::backward(d_total);
    ad::rmsprop_step(st.params_d, st.opt_d);

    // --- generator update ---
    auto scenes_g = st.gen.sample_scenes(st.hp.batch_size, st.rng);
    auto fakes_g = st.gen.synthesize(scenes_g, strat).images;
    auto fake_logits_g = st.disc.forward(fakes_g);
    auto g_loss = st.hp.gan_form == GanForm::kNonSaturating
                      ? ad::mean(ad::softplus(ad::neg(fake_logits_g)))
                      : ad::neg(ad::mean(ad::softplus(fake_logits_g)));
    ad::zero_grad(st.params_g);
    ad::backward(g_loss);
    ad::rmsprop_step(st.params_g, st.opt_g);

    report.d_loss = static_cast<double>(losses.d_loss.item());
    report.g_loss = static_cast<double>(g_loss.item());
    report.r1_penalty = static_cast<double>(r1.penalty.item());
    report.d_real_mean =
        static_cast<double>(ad::mean(real_logits).item());
    report.d_fake_mean =
        static_cast<double>(ad::mean(fake_logits).item());
  } catch (const numeric_error&) {
    detail::restore_snapshot(st, snapshot);
    report.aborted = true;
  }
  st.step += 1;
  return report;
}

}  // namespace fieldgen::gan
