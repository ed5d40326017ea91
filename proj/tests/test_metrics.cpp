#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fieldgen/analysis.hpp"
#include "fieldgen/ad/graph.hpp"
#include "fieldgen/metrics/frechet.hpp"
#include "fieldgen/metrics/ssim.hpp"
#include "oracle_utils.hpp"

using namespace fieldgen;
using ad::Tensor;

TEST_CASE("ssim(x, x) = 1 for arbitrary images") {
  Rng rng(41);
  for (int trial = 0; trial < 3; ++trial) {
    auto x = ad::tanh_op(Tensor<double>::randn({1, 3, 16, 16}, rng, 0.8));
    CHECK(metrics::ssim(x, x).item() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("ssim of a zero-mean image against its negation is negative") {
  // Random band-limited images: window means cancel while window variance
  // stays high, so the structure term dominates and flips sign under
  // negation. (For iid noise the luminance term can flip too, making the
  // product positive; that regime is not what the property is about.)
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    ad::Buf<double> v(16 * 16);
    v.setZero();
    for (int wave = 0; wave < 4; ++wave) {
      const double fi = rng.uniform(0.15, 0.3), fj = rng.uniform(0.15, 0.3);
      const double phase = rng.uniform(0, 2 * kPi);
      const double amp = rng.uniform(0.1, 0.3);
      for (long i = 0; i < 16; ++i)
        for (long j = 0; j < 16; ++j)
          v[i * 16 + j] +=
              amp * std::sin(2 * kPi * (fi * i + fj * j) + phase);
    }
    v -= v.mean();
    auto x = Tensor<double>::from_buf({1, 1, 16, 16}, std::move(v));
    auto s = metrics::ssim(x, ad::neg(x));
    INFO("ssim(x, -x) = " << s.item());
    CHECK(s.item() < 0.0);
  }
}

TEST_CASE("ssim of two equal constants is 1") {
  auto a = Tensor<double>::full({1, 1, 12, 12}, 0.3);
  auto b = Tensor<double>::full({1, 1, 12, 12}, 0.3);
  CHECK(metrics::ssim(a, b).item() == doctest::Approx(1.0));
}

TEST_CASE("ssim rejects shape mismatches and undersized images") {
  auto a = Tensor<double>::zeros({1, 1, 12, 12});
  auto b = Tensor<double>::zeros({1, 1, 14, 14});
  CHECK_THROWS_AS(metrics::ssim(a, b), shape_error);
  auto small = Tensor<double>::zeros({1, 1, 8, 8});
  CHECK_THROWS_AS(metrics::ssim(small, small), shape_error);
}

TEST_CASE("ssim gradient passes the finite-difference check") {
  Rng rng(43);
  auto target = ad::tanh_op(Tensor<double>::randn({1, 1, 12, 12}, rng, 0.6));
  auto x = Tensor<double>::randn({1, 1, 12, 12}, rng, 0.5, true);
  auto fn = [&] { return metrics::ssim(x, target); };
  CHECK(oracle::max_rel_grad_err(x, fn, 1e-5) < 1e-3);
}

TEST_CASE("embedder is pinned by seed and immutable") {
  auto e1 = metrics::FeatureEmbedder<double>::make(7);
  auto e2 = metrics::FeatureEmbedder<double>::make(7);
  auto e3 = metrics::FeatureEmbedder<double>::make(8);
  Rng rng(44);
  auto img = ad::tanh_op(Tensor<double>::randn({2, 3, 16, 16}, rng, 0.5));
  auto a = e1.embed(img), b = e2.embed(img), c = e3.embed(img);
  for (long i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
  double diff = 0;
  for (long i = 0; i < a.numel(); ++i)
    diff = std::max(diff, std::abs(a.at(i) - c.at(i)));
  CHECK(diff > 1e-6);
  for (const auto& w : e1.conv_w) CHECK_FALSE(w.requires_grad());
}

TEST_CASE("perceptual distance: identity, symmetry, monotone blends") {
  Rng rng(45);
  auto emb = metrics::FeatureEmbedder<double>::make(11);
  auto a = ad::tanh_op(Tensor<double>::randn({1, 3, 16, 16}, rng, 0.6));
  auto b = ad::tanh_op(Tensor<double>::randn({1, 3, 16, 16}, rng, 0.6));

  CHECK(metrics::perceptual_distance(emb, a, a).item() == doctest::Approx(0.0));
  const double dab = metrics::perceptual_distance(emb, a, b).item();
  const double dba = metrics::perceptual_distance(emb, b, a).item();
  CHECK(std::abs(dab - dba) < 1e-9);
  CHECK(dab > 0.0);

  double prev = 0.0;
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    auto blend = ad::add(ad::scale(a, 1.0 - t), ad::scale(b, t));
    const double d = metrics::perceptual_distance(emb, a, blend).item();
    CHECK(d >= prev - 1e-9);
    prev = d;
  }
}

TEST_CASE("perceptual distance is differentiable (it sits inside L_I)") {
  Rng rng(46);
  auto emb = metrics::FeatureEmbedder<double>::make(13);
  auto target = ad::tanh_op(Tensor<double>::randn({1, 3, 8, 8}, rng, 0.5));
  auto x = Tensor<double>::randn({1, 3, 8, 8}, rng, 0.4, true);
  auto fn = [&] { return metrics::perceptual_distance(emb, x, target); };
  CHECK(oracle::max_rel_grad_err(x, fn, 1e-5) < 1e-3);
}

TEST_CASE("frechet distance: identities and the 1-D analytic case") {
  metrics::GaussianStats p, q;
  p.mean = Eigen::VectorXd::Zero(1);
  p.cov = Eigen::MatrixXd::Identity(1, 1);
  p.count = 100;
  q = p;
  CHECK(metrics::frechet_distance(p, q) == doctest::Approx(0.0).epsilon(1e-6));
  q.mean[0] = 1.0;
  CHECK(metrics::frechet_distance(p, q) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(metrics::frechet_distance(q, p) ==
        doctest::Approx(metrics::frechet_distance(p, q)).epsilon(1e-6));
}

TEST_CASE("frechet distance matches the diagonal closed form") {
  Rng rng(47);
  const long e = 6;
  metrics::GaussianStats p, q;
  p.mean = Eigen::VectorXd::Zero(e);
  q.mean = Eigen::VectorXd::Zero(e);
  p.cov = Eigen::MatrixXd::Zero(e, e);
  q.cov = Eigen::MatrixXd::Zero(e, e);
  p.count = q.count = 100;
  double expected = 0.0;
  for (long i = 0; i < e; ++i) {
    p.mean[i] = rng.normal();
    q.mean[i] = rng.normal();
    const double sp = rng.uniform(0.2, 2.0), sq = rng.uniform(0.2, 2.0);
    p.cov(i, i) = sp;
    q.cov(i, i) = sq;
    const double dm = p.mean[i] - q.mean[i];
    expected += dm * dm + sp + sq - 2.0 * std::sqrt(sp * sq);
  }
  CHECK(metrics::frechet_distance(p, q) ==
        doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("frechet distance rejects non-PSD inputs beyond tolerance") {
  metrics::GaussianStats p, q;
  p.mean = Eigen::VectorXd::Zero(2);
  q.mean = Eigen::VectorXd::Zero(2);
  p.cov = Eigen::MatrixXd::Identity(2, 2);
  q.cov = Eigen::MatrixXd::Identity(2, 2);
  p.cov(0, 0) = -0.5;
  p.count = q.count = 10;
  CHECK_THROWS_AS(metrics::frechet_distance(p, q), std::invalid_argument);
}

TEST_CASE("collect_stats: duplicates, order invariance, two-pass oracle") {
  Rng rng(48);
  auto emb = metrics::FeatureEmbedder<double>::make(3, 8);
  std::vector<Tensor<double>> imgs;
  for (int i = 0; i < 6; ++i)
    imgs.push_back(ad::tanh_op(Tensor<double>::randn({1, 3, 16, 16}, rng, 0.5)));

  // duplicated set: zero covariance
  std::vector<Tensor<double>> dup(4, imgs[0]);
  auto s_dup = metrics::collect_stats(emb, dup);
  CHECK(s_dup.cov.cwiseAbs().maxCoeff() < 1e-12);

  auto s1 = metrics::collect_stats(emb, imgs);
  auto shuffled = imgs;
  std::swap(shuffled[0], shuffled[5]);
  std::swap(shuffled[1], shuffled[3]);
  auto s2 = metrics::collect_stats(emb, shuffled);
  CHECK((s1.mean - s2.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s1.cov - s2.cov).cwiseAbs().maxCoeff() < 1e-10);

  // naive two-pass oracle
  ad::NoGradGuard ng;
  std::vector<Eigen::VectorXd> rows;
  for (const auto& img : imgs) {
    auto e = emb.embed(img);
    Eigen::VectorXd r(e.numel());
    for (long j = 0; j < e.numel(); ++j) r[j] = e.at(j);
    rows.push_back(r);
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
  for (const auto& r : rows) mean += r;
  mean /= static_cast<double>(rows.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(8, 8);
  for (const auto& r : rows) cov += (r - mean) * (r - mean).transpose();
  cov /= static_cast<double>(rows.size() - 1);
  CHECK((s1.mean - mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((s1.cov - cov).cwiseAbs().maxCoeff() < 1e-8);

  CHECK_THROWS_AS(metrics::collect_stats(emb, {imgs[0]}), shape_error);
}

TEST_CASE("frechet separates distinct image families") {
  Rng rng(49);
  auto emb = metrics::FeatureEmbedder<double>::make(21, 8);
  auto family = [&](double offset, double gain, int n) {
    std::vector<Tensor<double>> out;
    for (int i = 0; i < n; ++i) {
      auto img = Tensor<double>::randn({1, 3, 16, 16}, rng, 0.3);
      out.push_back(ad::tanh_op(ad::add_scalar(ad::scale(img, gain), offset)));
    }
    return out;
  };
  auto a1 = metrics::collect_stats(emb, family(0.5, 1.0, 24));
  auto a2 = metrics::collect_stats(emb, family(0.5, 1.0, 24));
  auto b1 = metrics::collect_stats(emb, family(-0.5, 2.0, 24));
  const double within = metrics::frechet_distance(a1, a2);
  const double between = metrics::frechet_distance(a1, b1);
  INFO("within " << within << " between " << between);
  CHECK(between > within);
}

TEST_CASE("psnr of identical images is infinite, of offsets finite") {
  auto a = Tensor<double>::full({1, 1, 4, 4}, 0.2);
  CHECK(std::isinf(metrics::psnr(a, a)));
  auto b = Tensor<double>::full({1, 1, 4, 4}, 0.4);
  CHECK(metrics::psnr(a, b) == doctest::Approx(10.0 * std::log10(4.0 / 0.04)));
}

TEST_CASE("alpha centroid and connected components on crafted masks") {
  ad::Buf<double> m = ad::Buf<double>::Zero(64);
  m[2 * 8 + 3] = 1.0;  // single blob at (2,3)
  auto mask = Tensor<double>::from_buf({1, 1, 8, 8}, std::move(m));
  auto c = analysis::alpha_centroid(mask);
  CHECK(c.row == doctest::Approx(2.0));
  CHECK(c.col == doctest::Approx(3.0));
  CHECK(analysis::connected_components(mask, 0.5) == 1);

  ad::Buf<double> two = ad::Buf<double>::Zero(64);
  two[0] = 1.0;
  two[1] = 1.0;     // component 1 (adjacent cells)
  two[7 * 8 + 7] = 1.0;  // component 2
  auto mask2 = Tensor<double>::from_buf({1, 1, 8, 8}, std::move(two));
  CHECK(analysis::connected_components(mask2, 0.5) == 2);
  CHECK(analysis::connected_components(mask2, 1.5) == 0);
}

TEST_CASE("pearson correlation sanity") {
  auto a = Tensor<double>::from_data({4}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({4}, {2, 4, 6, 8});
  auto c = Tensor<double>::from_data({4}, {4, 3, 2, 1});
  CHECK(analysis::pearson(a, b) == doctest::Approx(1.0));
  CHECK(analysis::pearson(a, c) == doctest::Approx(-1.0));
}
