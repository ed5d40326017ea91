#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/SVD>

#include "fieldgen/ad/graph.hpp"
#include "fieldgen/ad/optim.hpp"
#include "fieldgen/ad/spectral.hpp"
#include "oracle_utils.hpp"

using namespace fieldgen;
using ad::Tensor;

TEST_CASE("rmsprop: zero gradient leaves parameters unchanged") {
  auto w = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  std::vector<Tensor<double>> params{w};
  ad::OptimizerState<double> st;
  st.init_like(params);
  ad::rmsprop_step(params, st);  // no grad populated
  CHECK(w.at(0) == 1.0);
  CHECK(w.at(2) == 3.0);
}

TEST_CASE("rmsprop: first-step accumulator follows the recurrence") {
  auto w = Tensor<double>::from_data({2}, {0.5, -0.5}, true);
  std::vector<Tensor<double>> params{w};
  ad::OptimizerState<double> st;
  st.decay = 0.99;
  st.init_like(params);
  auto loss = ad::sum(ad::mul(w, w));  // grad = 2w = [1,-1]
  ad::backward(loss);
  ad::rmsprop_step(params, st);
  CHECK(st.accum[0][0] == doctest::Approx(0.01 * 1.0));
  CHECK(st.accum[0][1] == doctest::Approx(0.01 * 1.0));
  CHECK(st.accum[0][0] >= 0.0);
}

TEST_CASE("rmsprop: 100 steps on w^2 match the scalar recurrence oracle") {
  const double lr = 1e-2, decay = 0.99, eps = 1e-8;
  auto w = Tensor<double>::from_data({1}, {1.0}, true);
  std::vector<Tensor<double>> params{w};
  ad::OptimizerState<double> st;
  st.learning_rate = lr;
  st.decay = decay;
  st.epsilon = eps;
  st.init_like(params);
  for (int i = 0; i < 100; ++i) {
    w.zero_grad();
    auto loss = ad::sum(ad::mul(w, w));
    ad::backward(loss);
    ad::rmsprop_step(params, st);
  }
  const double expected = oracle::rmsprop_scalar_run(
      1.0, lr, decay, eps, 100, [](double x) { return 2.0 * x; });
  CHECK(w.at(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(w.at(0)) < 0.5);
}

TEST_CASE("rmsprop: shape mismatch raises") {
  auto w = Tensor<double>::from_data({2}, {1, 2}, true);
  std::vector<Tensor<double>> params{w};
  ad::OptimizerState<double> st;
  st.accum.push_back(ad::Buf<double>::Zero(3));
  auto loss = ad::sum(w);
  ad::backward(loss);
  CHECK_THROWS_AS(ad::rmsprop_step(params, st), shape_error);
}

TEST_CASE("spectral_normalize: diagonal matrix with known singular values") {
  auto w = Tensor<double>::from_data({2, 2}, {2, 0, 0, 1});
  ad::SpectralState<double> st;
  Rng rng(3);
  auto normalized = ad::spectral_normalize(w, st, 100, &rng);
  CHECK(st.sigma == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(normalized.at(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(normalized.at(3) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("spectral_normalize: orthogonal matrix is unchanged") {
  const double c = std::cos(0.4), s = std::sin(0.4);
  auto w = Tensor<double>::from_data({2, 2}, {c, -s, s, c});
  ad::SpectralState<double> st;
  Rng rng(4);
  auto normalized = ad::spectral_normalize(w, st, 3, &rng);
  CHECK(st.sigma == doctest::Approx(1.0).epsilon(1e-12));
  for (long i = 0; i < 4; ++i)
    CHECK(normalized.at(i) == doctest::Approx(w.at(i)).epsilon(1e-9));
}

TEST_CASE("spectral_normalize: 16x16 with 5 iters vs full SVD oracle") {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    auto w = Tensor<double>::randn({16, 16}, rng, 1.0);
    ad::SpectralState<double> st;
    auto normalized = ad::spectral_normalize(w, st, 5, &rng);
    // oracle: true largest singular value of the normalized matrix
    Eigen::MatrixXd m(16, 16);
    for (long i = 0; i < 16; ++i)
      for (long j = 0; j < 16; ++j) m(i, j) = normalized.at(i * 16 + j);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const double top = svd.singularValues()(0);
    INFO("seed " << seed << " sigma(normalized) = " << top);
    CHECK(top >= 0.9);
    CHECK(top <= 1.01);
  }
}

TEST_CASE("spectral_normalize: idempotent in the limit") {
  Rng rng(42);
  auto w = Tensor<double>::randn({12, 8}, rng, 1.0);
  ad::SpectralState<double> st;
  auto n1 = ad::spectral_normalize(w, st, 50, &rng);
  ad::SpectralState<double> st2;
  auto n2 = ad::spectral_normalize(n1.detach(), st2, 50, &rng);
  CHECK(std::abs(st2.sigma - 1.0) < 1e-3);
}

TEST_CASE("spectral_normalize: zero weight returned unchanged, no divide") {
  auto w = Tensor<double>::zeros({4, 4});
  ad::SpectralState<double> st;
  Rng rng(9);
  auto n = ad::spectral_normalize(w, st, 3, &rng);
  for (long i = 0; i < 16; ++i) CHECK(n.at(i) == 0.0);
  CHECK(st.sigma == 0.0);
}

TEST_CASE("spectral_normalize keeps gradient flow through the weight") {
  // sigma_hat is a constant in the graph by policy, so the gradient of
  // sum((w/sigma)^2) w.r.t. w is exactly 2*w/sigma^2.
  Rng rng(21);
  auto w = Tensor<double>::randn({4, 4}, rng, 1.0, true);
  ad::SpectralState<double> st;
  auto n = ad::spectral_normalize(w, st, 10, &rng);
  CHECK(n.requires_grad());
  auto loss = ad::sum(ad::square(n));
  auto g = ad::grad_of(loss, {w}, false);
  for (long i = 0; i < w.numel(); ++i)
    CHECK(g[0].at(i) ==
          doctest::Approx(2.0 * w.at(i) / (st.sigma * st.sigma)));
}
