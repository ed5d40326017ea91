#pragma once

#include <string>

#include "fieldgen/ad/ops.hpp"
#include "fieldgen/ad/param_store.hpp"
#include "fieldgen/ad/spectral.hpp"

namespace fieldgen::neural {

// 3x3/1x1 convolution with optional spectral normalization. The power
// iteration advances only in refresh(); forward uses the cached estimate so
// inference is pure.
template <class T>
struct ConvSn {
  ad::Tensor<T> w, b;
  ad::SpectralState<T> sn;
  long pad = 1;
  bool spectral = true;

  static ConvSn init(long out_ch, long in_ch, long k, long pad, Rng& rng,
                     bool spectral = true, double weight_scale = 1.0) {
    ConvSn c;
    const double he = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
    c.w = ad::Tensor<T>::randn({out_ch, in_ch, k, k}, rng,
                               static_cast<T>(he * weight_scale), true);
    c.b = ad::Tensor<T>::zeros({out_ch}, true);
    c.pad = pad;
    c.spectral = spectral;
    if (spectral) {
      Rng init_rng = rng.fork("sn");
      ad::NoGradGuard ng;
      (void)ad::spectral_normalize(c.w.detach(), c.sn, 1, &init_rng);
    }
    return c;
  }

  ad::Tensor<T> effective_weight() const {
    if (!spectral || sn.sigma < T(1e-20)) return w;
    return ad::scale(w, 1.0 / static_cast<double>(sn.sigma));
  }

  ad::Tensor<T> forward(const ad::Tensor<T>& x) const {
    return ad::conv2d(x, effective_weight(), b, pad);
  }

  void refresh(int iters) {
    if (!spectral) return;
    // a weight leaving the zero state needs its vectors re-warmed
    if (sn.sigma == T(0)) iters += 10;
    (void)ad::spectral_normalize(w.detach(), sn, iters);
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".w", w);
    store.add(prefix + ".b", b);
    if (spectral) {
      store.add(prefix + ".sn_u", sn.u);
      store.add(prefix + ".sn_v", sn.v);
    }
  }

  void post_load() {
    if (spectral) sn.recompute_sigma(w);
  }
};

template <class T>
struct LinearSn {
  ad::Tensor<T> w, b;  // [out, in], [out]
  ad::SpectralState<T> sn;
  bool spectral = true;

  static LinearSn init(long out_dim, long in_dim, Rng& rng,
                       bool spectral = true, double weight_scale = 1.0) {
    LinearSn l;
    const double he = std::sqrt(2.0 / static_cast<double>(in_dim));
    l.w = ad::Tensor<T>::randn({out_dim, in_dim}, rng,
                               static_cast<T>(he * weight_scale), true);
    l.b = ad::Tensor<T>::zeros({out_dim}, true);
    l.spectral = spectral;
    if (spectral) {
      Rng init_rng = rng.fork("sn");
      ad::NoGradGuard ng;
      (void)ad::spectral_normalize(l.w.detach(), l.sn, 1, &init_rng);
    }
    return l;
  }

  ad::Tensor<T> effective_weight() const {
    if (!spectral || sn.sigma < T(1e-20)) return w;
    return ad::scale(w, 1.0 / static_cast<double>(sn.sigma));
  }

  ad::Tensor<T> forward(const ad::Tensor<T>& x) const {
    return ad::linear(x, effective_weight(), b);
  }

  void refresh(int iters) {
    if (!spectral) return;
    if (sn.sigma == T(0)) iters += 10;
    (void)ad::spectral_normalize(w.detach(), sn, iters);
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".w", w);
    store.add(prefix + ".b", b);
    if (spectral) {
      store.add(prefix + ".sn_u", sn.u);
      store.add(prefix + ".sn_v", sn.v);
    }
  }

  void post_load() {
    if (spectral) sn.recompute_sigma(w);
  }
};

enum class Activation { kRelu, kLeakyRelu };

// Fixed activation assignment: the image renderer uses ReLU, the
// discriminator leaky ReLU with slope 0.2.
struct ActivationPolicy {
  Activation renderer = Activation::kRelu;
  Activation discriminator = Activation::kLeakyRelu;
  double leaky_slope = 0.2;
};

inline ActivationPolicy activation_policy() { return {}; }

template <class T>
ad::Tensor<T> apply_activation(const ad::Tensor<T>& x, Activation a,
                               double slope = 0.2) {
  return a == Activation::kRelu ? ad::relu(x) : ad::leaky_relu(x, slope);
}

// Residual block: out = identity(x) + conv2(act(conv1(x))); identity is a
// 1x1 projection when channel counts differ. conv2 may start at zero so the
// block is exactly the identity at init.
template <class T>
struct ResBlock {
  ConvSn<T> conv1, conv2;
  ConvSn<T> proj;  // 1x1; used only when channels differ
  bool has_proj = false;
  Activation act = Activation::kRelu;
  double slope = 0.2;

  static ResBlock init(long in_ch, long out_ch, Rng& rng, Activation act,
                       bool zero_init_branch, bool spectral,
                       double slope = 0.2) {
    ResBlock b;
    b.conv1 = ConvSn<T>::init(out_ch, in_ch, 3, 1, rng, spectral);
    b.conv2 = ConvSn<T>::init(out_ch, out_ch, 3, 1, rng, spectral,
                              zero_init_branch ? 0.0 : 1.0);
    b.act = act;
    b.slope = slope;
    if (in_ch != out_ch) {
      b.proj = ConvSn<T>::init(out_ch, in_ch, 1, 0, rng, spectral);
      b.has_proj = true;
    }
    return b;
  }

  ad::Tensor<T> branch(const ad::Tensor<T>& x) const {
    return conv2.forward(apply_activation(conv1.forward(x), act, slope));
  }

  ad::Tensor<T> forward(const ad::Tensor<T>& x) const {
    auto ident = has_proj ? proj.forward(x) : x;
    return ad::add(ident, branch(x));
  }

  void refresh(int iters) {
    conv1.refresh(iters);
    conv2.refresh(iters);
    if (has_proj) proj.refresh(iters);
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    conv1.register_params(store, prefix + ".conv1");
    conv2.register_params(store, prefix + ".conv2");
    if (has_proj) proj.register_params(store, prefix + ".proj");
  }

  void post_load() {
    conv1.post_load();
    conv2.post_load();
    if (has_proj) proj.post_load();
  }
};

// Downsampling residual block: branch convs then avg-pool, shortcut
// avg-pool then 1x1 projection.
template <class T>
struct ResBlockDown {
  ConvSn<T> conv1, conv2, proj;
  Activation act = Activation::kLeakyRelu;
  double slope = 0.2;

  static ResBlockDown init(long in_ch, long out_ch, Rng& rng, Activation act,
                           bool spectral, double slope = 0.2) {
    ResBlockDown b;
    b.conv1 = ConvSn<T>::init(out_ch, in_ch, 3, 1, rng, spectral);
    b.conv2 = ConvSn<T>::init(out_ch, out_ch, 3, 1, rng, spectral);
    b.proj = ConvSn<T>::init(out_ch, in_ch, 1, 0, rng, spectral);
    b.act = act;
    b.slope = slope;
    return b;
  }

  ad::Tensor<T> forward(const ad::Tensor<T>& x) const {
    auto h = apply_activation(conv1.forward(x), act, slope);
    h = apply_activation(conv2.forward(h), act, slope);
    auto branch = ad::avg_pool2x(h);
    auto shortcut = proj.forward(ad::avg_pool2x(x));
    return ad::add(branch, shortcut);
  }

  void refresh(int iters) {
    conv1.refresh(iters);
    conv2.refresh(iters);
    proj.refresh(iters);
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    conv1.register_params(store, prefix + ".conv1");
    conv2.register_params(store, prefix + ".conv2");
    proj.register_params(store, prefix + ".proj");
  }

  void post_load() {
    conv1.post_load();
    conv2.post_load();
    proj.post_load();
  }
};

// Spatial mean over H and W: [B,C,H,W] -> [B,C].
template <class T>
ad::Tensor<T> global_avg_pool(const ad::Tensor<T>& x) {
  ad::require(x.rank() == 4, "global_avg_pool: [N,C,H,W] required");
  const long b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto rows = ad::reshape(x, {b * c, hw});
  return ad::reshape(ad::scale(ad::sum_cols(rows), 1.0 / hw), {b, c});
}

}  // namespace fieldgen::neural
