#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fieldgen/ad/graph.hpp"
#include "fieldgen/ad/ops.hpp"
#include "fieldgen/ad/tensor.hpp"
#include "oracle_utils.hpp"

using namespace fieldgen;
using ad::Tensor;

TEST_CASE("shape bookkeeping and invariants") {
  auto t = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor<double>::from_data({2, 2}, {1, 2, 3}), shape_error);
}

TEST_CASE("leaf data must be finite") {
  CHECK_THROWS_AS(
      Tensor<double>::from_data({2}, {1.0, std::nan("")}), numeric_error);
}

TEST_CASE("non-finite op output raises numeric error") {
  auto big = Tensor<double>::from_data({1}, {1e308});
  CHECK_THROWS_AS(ad::exp_op(big), numeric_error);
  auto z = Tensor<double>::from_data({1}, {0.0});
  CHECK_THROWS_AS(ad::reciprocal(z), numeric_error);
}

TEST_CASE("forward_op: relu definition") {
  auto x = Tensor<double>::from_data({3}, {-1, 0, 2});
  auto y = ad::forward_op<double>("relu", {x});
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 2.0);
}

TEST_CASE("forward_op: matmul identity") {
  Rng rng(7);
  auto a = Tensor<double>::randn({3, 3}, rng);
  auto eye = Tensor<double>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = ad::forward_op<double>("matmul", {eye, a});
  for (long i = 0; i < 9; ++i) CHECK(y.at(i) == doctest::Approx(a.at(i)));
}

TEST_CASE("forward_op: zero conv kernel maps any image to zeros") {
  Rng rng(3);
  auto x = Tensor<double>::randn({1, 1, 5, 5}, rng);
  auto w = Tensor<double>::zeros({1, 1, 3, 3});
  auto y = ad::forward_op<double>("conv2d", {x, w});
  CHECK(y.shape() == ad::Shape{1, 1, 5, 5});
  for (long i = 0; i < y.numel(); ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("forward_op rejects unknown tags and bad arity") {
  auto x = Tensor<double>::ones({2});
  CHECK_THROWS_AS(ad::forward_op<double>("det", {x}), shape_error);
  CHECK_THROWS_AS(ad::forward_op<double>("add", {x}), shape_error);
}

TEST_CASE("shape mismatch error names the op and both shapes") {
  auto a = Tensor<double>::ones({2, 3});
  auto b = Tensor<double>::ones({3, 2});
  try {
    ad::add(a, b);
    FAIL("expected shape_error");
  } catch (const shape_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("backward: analytic examples from the elementwise rules") {
  SUBCASE("sum of squares") {
    auto w = Tensor<double>::from_data({2}, {1, 2}, true);
    auto loss = ad::sum(ad::mul(w, w));
    ad::backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
  }
  SUBCASE("mean of relu") {
    auto w = Tensor<double>::from_data({2}, {-1, 1}, true);
    auto loss = ad::mean(ad::relu(w));
    ad::backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(0.0));
    CHECK(w.grad()[1] == doctest::Approx(0.5));
  }
}

TEST_CASE("backward errors: non-scalar loss, double backward") {
  auto w = Tensor<double>::from_data({2}, {1, 2}, true);
  auto y = ad::mul(w, w);
  CHECK_THROWS_AS(ad::backward(y), shape_error);

  auto loss = ad::sum(y);
  ad::Graph<double> g(loss);
  g.backward();
  CHECK_THROWS_AS(g.backward(), std::logic_error);
  g.reset();
  g.backward();  // fine after reset
  CHECK(w.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("fan-out accumulates gradients additively across paths") {
  auto w = Tensor<double>::from_data({2}, {0.5, -0.3}, true);
  // loss = sum(w*w) + 3*sum(w): grad = 2w + 3
  auto loss = ad::add(ad::sum(ad::mul(w, w)), ad::scale(ad::sum(w), 3.0));
  ad::backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(2 * 0.5 + 3));
  CHECK(w.grad()[1] == doctest::Approx(2 * -0.3 + 3));
}

TEST_CASE("graph order is topological and backward visits nodes once") {
  auto w = Tensor<double>::from_data({3}, {0.2, 0.4, 0.8}, true);
  auto a = ad::mul(w, w);
  auto b = ad::add(a, w);
  auto loss = ad::sum(ad::mul(b, a));
  ad::Graph<double> g(loss);
  const auto& nodes = g.nodes();
  // ids ascend, and every parent of a node appears earlier
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i) CHECK(nodes[i]->id > nodes[i - 1]->id);
    for (const auto& p : nodes[i]->parents) {
      bool found_before = false;
      for (std::size_t j = 0; j < i; ++j)
        if (nodes[j].get() == &p.node()) found_before = true;
      if (p.requires_grad()) CHECK(found_before);
    }
  }
  g.backward();
  CHECK(g.last_backward_visits() == static_cast<long>(nodes.size()));

  // grads match finite differences on this fan-out graph
  auto fn = [&] {
    auto a2 = ad::mul(w, w);
    auto b2 = ad::add(a2, w);
    return ad::sum(ad::mul(b2, a2));
  };
  CHECK(oracle::max_rel_grad_err(w, fn) < 1e-6);
}

TEST_CASE("composite gradients match central finite differences") {
  Rng rng(11);
  for (int seed = 0; seed < 5; ++seed) {
    auto w = Tensor<double>::randn({4, 3}, rng, 0.8, true);
    auto fn = [&] {
      auto h = ad::sigmoid(ad::matmul(w, ad::transpose2d(w)));
      auto z = ad::sin_op(ad::scale(h, 1.3));
      return ad::mean(ad::mul(z, z));
    };
    CHECK(oracle::max_rel_grad_err(w, fn) < 1e-4);
  }
}

TEST_CASE("determinism: identical seeds give bit-identical tensors and ops") {
  Rng r1(42), r2(42);
  auto a1 = Tensor<float>::randn({16}, r1);
  auto a2 = Tensor<float>::randn({16}, r2);
  for (long i = 0; i < 16; ++i) CHECK(a1.at(i) == a2.at(i));
  auto y1 = ad::softplus(ad::scale(a1, 1.7));
  auto y2 = ad::softplus(ad::scale(a2, 1.7));
  for (long i = 0; i < 16; ++i) CHECK(y1.at(i) == y2.at(i));
}

TEST_CASE("grad buffer matches tensor shape when populated") {
  auto w = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  auto loss = ad::sum(ad::square(w));
  ad::backward(loss);
  CHECK(w.grad().size() == w.numel());
}
