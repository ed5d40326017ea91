#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fieldgen/ad/graph.hpp"
#include "fieldgen/ad/ops.hpp"
#include "oracle_utils.hpp"

using namespace fieldgen;
using ad::Tensor;

TEST_CASE("input_gradient of sum(x^2)/2 is x") {
  Rng rng(5);
  auto x = Tensor<double>::randn({2, 3}, rng, 1.0, true);
  auto out = ad::scale(ad::sum(ad::square(x)), 0.5);
  auto ig = ad::input_gradient(out, x);
  CHECK_FALSE(ig.disconnected);
  for (long i = 0; i < x.numel(); ++i)
    CHECK(ig.value.at(i) == doctest::Approx(x.at(i)));
}

TEST_CASE("input_gradient of a constant output is zero with a flag") {
  Rng rng(6);
  auto x = Tensor<double>::randn({2, 2}, rng, 1.0, true);
  auto other = Tensor<double>::randn({2}, rng, 1.0, true);
  auto out = ad::sum(ad::square(other));  // independent of x
  auto ig = ad::input_gradient(out, x);
  CHECK(ig.disconnected);
  for (long i = 0; i < x.numel(); ++i) CHECK(ig.value.at(i) == 0.0);
}

namespace {

// Tiny two-layer discriminator-like network on a [1,2,4,4] input.
struct TinyNet {
  Tensor<double> w1, b1, w2, b2;

  static TinyNet make(Rng& rng) {
    TinyNet n;
    n.w1 = Tensor<double>::randn({3, 2, 3, 3}, rng, 0.4, true);
    n.b1 = Tensor<double>::randn({3}, rng, 0.1, true);
    n.w2 = Tensor<double>::randn({1, 3 * 2 * 2}, rng, 0.4, true);
    n.b2 = Tensor<double>::randn({1}, rng, 0.1, true);
    return n;
  }

  Tensor<double> forward(const Tensor<double>& x) const {
    auto h = ad::leaky_relu(ad::conv2d(x, w1, b1, 1), 0.2);
    auto p = ad::avg_pool2x(h);  // [1,3,2,2]
    auto flat = ad::reshape(p, {1, 12});
    return ad::sum(ad::linear(flat, w2, b2));
  }
};

}  // namespace

TEST_CASE("double backward: grad of ||grad_x D||^2 w.r.t. weights matches FD") {
  Rng rng(7);
  auto net = TinyNet::make(rng);
  auto x = Tensor<double>::randn({1, 2, 4, 4}, rng, 0.8, true);
  // keep pre-activations away from the leaky-relu kink for clean FD
  oracle::keep_away_from_zero(x.mutable_value(), 0.05);

  auto penalty_of = [&]() {
    auto out = net.forward(x);
    auto ig = ad::input_gradient(out, x, /*create_graph=*/true);
    return ad::sum(ad::square(ig.value));
  };

  auto penalty = penalty_of();
  auto grads = ad::grad_of(penalty, {net.w1, net.w2}, false);

  for (int which = 0; which < 2; ++which) {
    Tensor<double>& w = which == 0 ? net.w1 : net.w2;
    auto fd = oracle::fd_gradient(w.mutable_value(),
                                  [&] { return penalty_of().item(); }, 1e-5);
    const double err = oracle::max_rel_err(fd, grads[which].value(), 1e-5);
    INFO("weight " << which << " rel err " << err);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("input gradient participates in further differentiation chains") {
  // d/dw of sum(input_gradient(w*x^2, x)) with scalar weight w:
  // grad_x = 2*w*x so the outer grad wrt w is sum(2x).
  auto w = Tensor<double>::scalar(1.5, true);
  auto x = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  auto out = ad::sum(ad::mul(ad::broadcast_scalar(w, {3}), ad::square(x)));
  auto ig = ad::input_gradient(out, x, true);
  auto outer = ad::sum(ig.value);
  auto gw = ad::grad_of(outer, {w}, false);
  CHECK(gw[0].item() == doctest::Approx(2.0 * (1 + 2 + 3)));
}

TEST_CASE("grad_of leaves .grad buffers untouched") {
  auto w = Tensor<double>::from_data({2}, {1, 2}, true);
  auto loss = ad::sum(ad::square(w));
  auto g = ad::grad_of(loss, {w}, false);
  CHECK(g[0].at(1) == doctest::Approx(4.0));
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  auto w = Tensor<double>::from_data({2}, {1, 2}, true);
  ad::Tensor<double> y;
  {
    ad::NoGradGuard ng;
    y = ad::sum(ad::square(w));
  }
  CHECK_FALSE(y.requires_grad());
  auto ig = ad::input_gradient(y, w);
  CHECK(ig.disconnected);
}

TEST_CASE("second-order through the full op family used by the R1 path") {
  // conv -> leaky -> pool -> linear with square/mean on the input gradient;
  // checks the vjp-of-vjp compositions (conv2d_weight_grad, flip, etc.).
  Rng rng(17);
  auto net = TinyNet::make(rng);
  auto x = Tensor<double>::randn({1, 2, 4, 4}, rng, 0.6, true);
  oracle::keep_away_from_zero(x.mutable_value(), 0.05);

  auto penalty_of = [&]() {
    auto out = net.forward(x);
    auto ig = ad::input_gradient(out, x, true);
    return ad::mean(ad::square(ig.value));
  };
  auto grads = ad::grad_of(penalty_of(), {net.b1, net.b2}, false);
  // Piecewise-linear activations: penalty is locally independent of biases
  // only through the masks, so FD agreement still holds a.e.
  for (int which = 0; which < 2; ++which) {
    Tensor<double>& b = which == 0 ? net.b1 : net.b2;
    auto fd = oracle::fd_gradient(b.mutable_value(),
                                  [&] { return penalty_of().item(); }, 1e-5);
    CHECK(oracle::max_rel_err(fd, grads[which].value(), 1e-5) < 1e-3);
  }
}
