#pragma once

#include "fieldgen/ad/graph.hpp"
#include "fieldgen/gan/discriminator.hpp"

namespace fieldgen::gan {

enum class GanForm { kNonSaturating, kSaturating };

template <class T>
struct GanLossPair {
  ad::Tensor<T> d_loss;
  ad::Tensor<T> g_loss;
};

// Cross-entropy GAN objective on raw logits.
//   d = E[softplus(-real)] + E[softplus(fake)]
//   g = E[softplus(-fake)]            (non-saturating, default)
//   g = -E[softplus(fake)]            (saturating variant)
template <class T>
GanLossPair<T> gan_losses(const ad::Tensor<T>& real_logits,
                          const ad::Tensor<T>& fake_logits,
                          GanForm form = GanForm::kNonSaturating) {
  ad::require(real_logits.shape() == fake_logits.shape(),
              "gan_losses: batch mismatch " +
                  ad::shape_str(real_logits.shape()) + " vs " +
                  ad::shape_str(fake_logits.shape()));
  GanLossPair<T> out;
  out.d_loss = ad::add(ad::mean(ad::softplus(ad::neg(real_logits))),
                       ad::mean(ad::softplus(fake_logits)));
  out.g_loss = form == GanForm::kNonSaturating
                   ? ad::mean(ad::softplus(ad::neg(fake_logits)))
                   : ad::neg(ad::mean(ad::softplus(fake_logits)));
  return out;
}

enum class R1Mode { kAutodiff, kFiniteDifference };

template <class T>
struct R1Result {
  ad::Tensor<T> penalty;      // mean over batch of ||grad_x D(x)||^2
  bool disconnected = false;  // constant discriminator
};

// R1 penalty through true double differentiation: the input gradient is a
// graph tensor, so the penalty backward reaches the weights. disc_fn maps
// an image batch to per-image logits.
template <class T, class DiscFn>
R1Result<T> r1_penalty_autodiff(DiscFn&& disc_fn,
                                const ad::Tensor<T>& real_images) {
  const long batch = real_images.dim(0);
  auto x = real_images.detach();
  x.set_requires_grad(true);
  auto logits = disc_fn(x);
  auto ig = ad::input_gradient(ad::sum(logits), x, /*create_graph=*/true);
  R1Result<T> out;
  out.disconnected = ig.disconnected;
  out.penalty = ad::scale(ad::sum(ad::square(ig.value)),
                          1.0 / static_cast<double>(batch));
  return out;
}

// Flag-selectable fallback that avoids double backward: a central difference
// along one Gaussian direction per image estimates (u . grad D)^2, whose
// expectation over u ~ N(0, I) is ||grad D||^2. Differentiable w.r.t. the
// weights through the two plain forward passes.
template <class T, class DiscFn>
R1Result<T> r1_penalty_fd(DiscFn&& disc_fn, const ad::Tensor<T>& real_images,
                          Rng& rng, double eps = 1e-3) {
  ad::Tensor<T> u;
  {
    ad::NoGradGuard ng;
    u = ad::Tensor<T>::randn(real_images.shape(), rng);
  }
  auto x = real_images.detach();
  auto plus = disc_fn(ad::add(x, ad::scale(u, eps)));
  auto minus = disc_fn(ad::sub(x, ad::scale(u, eps)));
  auto directional = ad::scale(ad::sub(plus, minus), 1.0 / (2.0 * eps));
  R1Result<T> out;
  out.penalty = ad::mean(ad::square(directional));
  out.disconnected = !out.penalty.requires_grad();
  return out;
}

template <class T>
R1Result<T> r1_penalty(const Discriminator<T>& disc,
                       const ad::Tensor<T>& real_images,
                       R1Mode mode = R1Mode::kAutodiff, Rng* fd_rng = nullptr,
                       double fd_eps = 1e-3) {
  auto disc_fn = [&disc](const ad::Tensor<T>& x) { return disc.forward(x); };
  if (mode == R1Mode::kAutodiff)
    return r1_penalty_autodiff<T>(disc_fn, real_images);
  ad::require(fd_rng != nullptr,
              "r1_penalty: finite-difference mode needs an rng");
  return r1_penalty_fd<T>(disc_fn, real_images, *fd_rng, fd_eps);
}

}  // namespace fieldgen::gan
