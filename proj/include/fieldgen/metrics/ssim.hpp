#pragma once

#include "fieldgen/ad/ops.hpp"

namespace fieldgen::metrics {

namespace detail {

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
template <class T>
ad::Tensor<T> gaussian_window() {
  constexpr long k = 11;
  constexpr double sigma = 1.5;
  ad::Buf<T> w(k * k);
  double total = 0.0;
  for (long i = 0; i < k; ++i)
    for (long j = 0; j < k; ++j) {
      const double di = static_cast<double>(i) - (k - 1) / 2.0;
      const double dj = static_cast<double>(j) - (k - 1) / 2.0;
      const double v = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      w[i * k + j] = static_cast<T>(v);
      total += v;
    }
  for (long i = 0; i < k * k; ++i) w[i] = static_cast<T>(w[i] / total);
  return ad::Tensor<T>::from_buf({1, 1, k, k}, std::move(w));
}

// Valid-mode Gaussian filtering with channels folded into the batch.
template <class T>
ad::Tensor<T> filt(const ad::Tensor<T>& x, const ad::Tensor<T>& window) {
  auto folded =
      ad::reshape(x, {x.dim(0) * x.dim(1), 1, x.dim(2), x.dim(3)});
  return ad::conv2d(folded, window, ad::Tensor<T>(), /*pad=*/0);
}

}  // namespace detail

// Windowed SSIM over an 11x11 Gaussian window, averaged over window
// positions and channels. Stabilizers use the standard (0.01 L)^2 and
// (0.03 L)^2 with L = 2 for the [-1, 1] image range. Differentiable in
// both images.
template <class T>
ad::Tensor<T> ssim(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  ad::require(a.shape() == b.shape(), "ssim: shape mismatch " +
                                          ad::shape_str(a.shape()) + " vs " +
                                          ad::shape_str(b.shape()));
  ad::require(a.rank() == 4, "ssim: [N,C,H,W] images required");
  ad::require(a.dim(2) >= 11 && a.dim(3) >= 11,
              "ssim: images smaller than the 11x11 window");
  constexpr double kL = 2.0;
  constexpr double c1 = (0.01 * kL) * (0.01 * kL);
  constexpr double c2 = (0.03 * kL) * (0.03 * kL);
  auto window = detail::gaussian_window<T>();

  auto mu_a = detail::filt(a, window);
  auto mu_b = detail::filt(b, window);
  auto mu_aa = ad::mul(mu_a, mu_a);
  auto mu_bb = ad::mul(mu_b, mu_b);
  auto mu_ab = ad::mul(mu_a, mu_b);
  auto var_a = ad::sub(detail::filt(ad::mul(a, a), window), mu_aa);
  auto var_b = ad::sub(detail::filt(ad::mul(b, b), window), mu_bb);
  auto cov = ad::sub(detail::filt(ad::mul(a, b), window), mu_ab);

  auto numer = ad::mul(ad::add_scalar(ad::scale(mu_ab, 2.0), c1),
                       ad::add_scalar(ad::scale(cov, 2.0), c2));
  auto denom = ad::mul(ad::add_scalar(ad::add(mu_aa, mu_bb), c1),
                       ad::add_scalar(ad::add(var_a, var_b), c2));
  return ad::mean(ad::mul(numer, ad::reciprocal(denom)));
}

// 10 log10(peak^2 / mse) with peak 2 for the [-1,1] range.
template <class T>
double psnr(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  ad::require(a.shape() == b.shape(), "psnr: shape mismatch");
  ad::NoGradGuard ng;
  const double mse = static_cast<double>(ad::mean(ad::square(ad::sub(a, b))).item());
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

}  // namespace fieldgen::metrics
