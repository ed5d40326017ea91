#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fieldgen/ad/graph.hpp"
#include "fieldgen/neural/renderer.hpp"
#include "oracle_utils.hpp"

using namespace fieldgen;
using ad::Tensor;

TEST_CASE("activation policy: renderer relu, discriminator leaky 0.2") {
  const auto p = neural::activation_policy();
  CHECK(p.renderer == neural::Activation::kRelu);
  CHECK(p.discriminator == neural::Activation::kLeakyRelu);
  CHECK(p.leaky_slope == 0.2);

  auto x = Tensor<double>::from_data({3}, {-1.0, -2.0, 0.5});
  auto r = neural::apply_activation(x, p.renderer);
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 0.5);
  auto l = neural::apply_activation(x, p.discriminator, p.leaky_slope);
  CHECK(l.at(0) == doctest::Approx(-0.2));
  CHECK(l.at(1) == doctest::Approx(-0.4));
  CHECK(l.at(2) == 0.5);
}

TEST_CASE("residual branch is exactly zero on negative pre-activations") {
  Rng rng(11);
  auto block = neural::ResBlock<double>::init(
      4, 4, rng, neural::Activation::kRelu, /*zero_init_branch=*/false, true);
  // force conv1 outputs negative
  block.conv1.b.mutable_value().setConstant(-100.0);
  auto x = Tensor<double>::randn({1, 4, 6, 6}, rng, 0.3);
  auto branch = block.branch(x);
  for (long i = 0; i < branch.numel(); ++i) CHECK(branch.at(i) == 0.0);
}

TEST_CASE("identity path bypasses the activation entirely") {
  Rng rng(12);
  auto block = neural::ResBlock<double>::init(
      4, 4, rng, neural::Activation::kRelu, /*zero_init_branch=*/true, true);
  auto x = Tensor<double>::randn({1, 4, 6, 6}, rng, 0.5);
  auto y = block.forward(x);
  // zero-init branch: forward is the identity bit-for-bit
  for (long i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("renderer output shape: feature 16 with one block gives 32x32x3") {
  Rng rng(13);
  auto r = neural::ImageRenderer<double>::init(8, 16, 32, rng);
  auto f = Tensor<double>::randn({1, 8, 16, 16}, rng, 0.5);
  auto img = r.forward(f);
  CHECK(img.shape() == ad::Shape{1, 3, 32, 32});
  CHECK(neural::ImageRenderer<double>::block_count(16, 32) == 1);
  CHECK(neural::ImageRenderer<double>::block_count(8, 32) == 2);
  CHECK_THROWS_AS(neural::ImageRenderer<double>::block_count(10, 32),
                  std::invalid_argument);
}

TEST_CASE("all-zero weights give the constant squashed-bias image") {
  Rng rng(14);
  auto r = neural::ImageRenderer<double>::init(6, 8, 16, rng);
  ad::ParamStore<double> store;
  r.register_params(store, "r");
  for (auto& [name, t] : store.entries)
    if (t.requires_grad()) t.mutable_value().setZero();
  r.post_load();
  auto f = Tensor<double>::randn({2, 6, 8, 8}, rng, 1.0);
  auto img = r.forward(f);
  for (long i = 0; i < img.numel(); ++i) CHECK(img.at(i) == 0.0);  // tanh(0)
}

TEST_CASE("image range always inside [-1, 1]") {
  Rng rng(15);
  auto r = neural::ImageRenderer<double>::init(6, 8, 16, rng);
  // exaggerate weights to push the accumulator hard
  ad::ParamStore<double> store;
  r.register_params(store, "r");
  for (auto& [name, t] : store.entries)
    if (t.requires_grad()) t.mutable_value() *= 20.0;
  r.post_load();
  auto f = Tensor<double>::randn({1, 6, 8, 8}, rng, 2.0);
  auto img = r.forward(f);
  for (long i = 0; i < img.numel(); ++i) {
    CHECK(img.at(i) <= 1.0);
    CHECK(img.at(i) >= -1.0);
  }
}

TEST_CASE("appended identity-initialized blocks preserve the output") {
  Rng rng(16);
  auto with_extras =
      neural::ImageRenderer<double>::init(6, 8, 16, rng, 16, /*extra=*/2);
  auto f = Tensor<double>::randn({1, 6, 8, 8}, rng, 0.7);
  auto img_full = with_extras.forward(f);
  auto stripped = with_extras;
  stripped.extra_blocks.clear();
  auto img_stripped = stripped.forward(f);
  double max_diff = 0;
  for (long i = 0; i < img_full.numel(); ++i)
    max_diff = std::max(max_diff,
                        std::abs(img_full.at(i) - img_stripped.at(i)));
  CHECK(max_diff < 1e-5);
}

TEST_CASE("gradient of mean pixel w.r.t. first block weight matches FD") {
  Rng rng(17);
  auto r = neural::ImageRenderer<double>::init(5, 4, 8, rng);
  auto f = Tensor<double>::randn({1, 5, 4, 4}, rng, 0.6);
  auto fn = [&] { return ad::mean(r.forward(f)); };
  CHECK(oracle::max_rel_grad_err(r.up_blocks[0].conv1.w, fn, 1e-5) < 1e-3);
  CHECK(oracle::max_rel_grad_err(r.rgb_in.w, fn, 1e-5) < 1e-3);
}

TEST_CASE("renderer spectral norms sit in the power-iteration band") {
  Rng rng(18);
  auto r = neural::ImageRenderer<double>::init(8, 8, 16, rng);
  r.refresh_spectral(3);
  for (const auto* conv : r.spectral_convs()) {
    if (conv->sn.sigma == 0.0) continue;  // zero-init branch convs
    const long rows = conv->w.dim(0);
    const long cols = conv->w.numel() / rows;
    Eigen::MatrixXd m(rows, cols);
    auto eff = conv->effective_weight();
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) m(i, j) = eff.at(i * cols + j);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    CHECK(svd.singularValues()(0) >= 0.9);
    CHECK(svd.singularValues()(0) <= 1.05);
  }
}

TEST_CASE("renderer rejects mismatched feature resolution") {
  Rng rng(19);
  auto r = neural::ImageRenderer<double>::init(6, 8, 16, rng);
  auto bad = Tensor<double>::randn({1, 6, 4, 4}, rng);
  CHECK_THROWS_AS(r.forward(bad), shape_error);
}
