#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "gfnode/tape.hpp"
#include "test_util.hpp"

using namespace gfnode;
using namespace gfnode::ad;

TEST_CASE("d/dx x^2 = 2x", "[tape]") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0), true);
  Var y = square(x);
  t.backward(y);
  REQUIRE(t.grad(x).item() == Catch::Approx(6.0));
}

TEST_CASE("d/dA tr(AB) = B^T", "[tape]") {
  Rng rng(1);
  Tensor A = Tensor::from_eigen(testutil::random_matrix(rng, 2, 2));
  Tensor B = Tensor::from_eigen(testutil::random_matrix(rng, 2, 2));

  auto f = [&](Tape& t, const std::vector<Var>& vs) {
    Var prod = matmul(vs[0], vs[1]);
    // trace = sum of diagonal entries
    Var d0 = slice(prod, 0, 1, 0, 1);
    Var d1 = slice(prod, 1, 1, 1, 1);
    return add(d0, d1);
  };

  Tape t;
  Var a = t.leaf(A, true);
  Var b = t.leaf(B, false);
  t.backward(f(t, {a, b}));
  Eigen::MatrixXd ga = t.grad(a).to_eigen();
  REQUIRE((ga - B.to_eigen().transpose()).cwiseAbs().maxCoeff() < 1e-12);

  REQUIRE(grad_check(f, {A, B}, 1e-4) < 1e-8);
}

TEST_CASE("softmax rows sum to one and gradients sum to zero", "[tape]") {
  Rng rng(2);
  Tape t;
  Var x = t.leaf(Tensor::from_eigen(testutil::random_matrix(rng, 3, 5)), true);
  Var y = softmax(x);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += t.val(y).at(i, j);
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  }
  // arbitrary scalar head
  Var w = t.leaf(Tensor::from_eigen(testutil::random_matrix(rng, 3, 5)), false);
  t.backward(sum(mul(y, w)));
  const Tensor& gx = t.grad(x);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += gx.at(i, j);
    REQUIRE(std::abs(s) < 1e-8);
  }
}

TEST_CASE("every primitive agrees with finite differences", "[tape]") {
  Rng rng(3);
  Tensor X = Tensor::from_eigen(testutil::random_matrix(rng, 3, 4));
  Tensor Y = Tensor::from_eigen(testutil::random_matrix(rng, 3, 4));
  Tensor W = Tensor::from_eigen(testutil::random_matrix(rng, 4, 2));
  Tensor pos = Tensor::from_eigen(testutil::random_matrix(rng, 3, 4));
  for (double& v : pos.data) v = std::abs(v) + 0.5;  // for sqrt

  auto check = [&](const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                   std::vector<Tensor> params) {
    REQUIRE(grad_check(f, params, 1e-4) < 1e-5);
  };

  check([](Tape& t, const std::vector<Var>& v) { return sum(add(v[0], v[1])); }, {X, Y});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(sub(v[0], v[1]))); }, {X, Y});
  check([](Tape& t, const std::vector<Var>& v) { return sum(mul(v[0], v[1])); }, {X, Y});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(matmul(v[0], v[1]))); },
        {X, W});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(transpose(v[0]))); }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(reshape(v[0], {4, 3}))); },
        {X});
  check([](Tape& t, const std::vector<Var>& v) {
    return sum(square(concat({v[0], v[1]}, 0)));
  }, {X, Y});
  check([](Tape& t, const std::vector<Var>& v) {
    return sum(square(concat({v[0], v[1]}, 1)));
  }, {X, Y});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(slice(v[0], 1, 2, 1, 3))); },
        {X});
  check([](Tape& t, const std::vector<Var>& v) { return square(mean(v[0])); }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(sum_rows(v[0]))); }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(sum_cols(v[0]))); }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(silu(v[0]))); }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(softmax(v[0]))); }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(exp(v[0]))); }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(sqrt(v[0]))); }, {pos});
  check([](Tape& t, const std::vector<Var>& v) {
    Var row = slice(v[0], 0, 1, 0, 4);
    return sum(square(broadcast(row, 5, 4)));
  }, {X});
  check([](Tape& t, const std::vector<Var>& v) {
    return sum(square(gather_rows(v[0], {2, 0, 0, 1})));
  }, {X});
  check([](Tape& t, const std::vector<Var>& v) {
    return sum(square(scatter_add_rows(v[0], {1, 0, 1}, 4)));
  }, {X});
  check([](Tape& t, const std::vector<Var>& v) { return sum(square(neg(scale(v[0], 1.7)))); },
        {X});
}

TEST_CASE("two-layer MLP loss gradient matches finite differences", "[tape]") {
  Rng rng(4);
  Tensor W1 = Tensor::from_eigen(0.5 * testutil::random_matrix(rng, 3, 8));
  Tensor b1 = Tensor::from_eigen(0.1 * testutil::random_matrix(rng, 1, 8));
  Tensor W2 = Tensor::from_eigen(0.5 * testutil::random_matrix(rng, 8, 1));
  Tensor b2 = Tensor::from_eigen(0.1 * testutil::random_matrix(rng, 1, 1));
  Tensor X = Tensor::from_eigen(testutil::random_matrix(rng, 5, 3));
  Tensor Yt = Tensor::from_eigen(testutil::random_matrix(rng, 5, 1));

  auto f = [&](Tape& t, const std::vector<Var>& v) {
    Var x = t.constant(X);
    Var h = silu(linear(x, v[0], v[1]));
    Var y = linear(h, v[2], v[3]);
    Var d = sub(y, t.constant(Yt));
    return mean(square(d));
  };
  REQUIRE(grad_check(f, {W1, b1, W2, b2}, 1e-4) < 1e-4);
}

TEST_CASE("linear functions check exactly", "[tape]") {
  Rng rng(5);
  Tensor W = Tensor::from_eigen(testutil::random_matrix(rng, 4, 3));
  auto f = [&](Tape& t, const std::vector<Var>& v) { return sum(v[0]); };
  REQUIRE(grad_check(f, {W}, 1e-4) < 1e-10);
}

TEST_CASE("gradients are deterministic", "[tape]") {
  auto run = [] {
    Rng rng(6);
    Tensor X = Tensor::from_eigen(testutil::random_matrix(rng, 4, 4));
    Tape t;
    Var x = t.leaf(X, true);
    Var loss = mean(square(silu(matmul(x, x))));
    t.backward(loss);
    return t.grad(x);
  };
  Tensor a = run(), b = run();
  REQUIRE(a.data == b.data);
}

TEST_CASE("shape mismatches are rejected", "[tape]") {
  Tape t;
  Var a = t.leaf(Tensor::zeros({2, 3}));
  Var b = t.leaf(Tensor::zeros({3, 2}));
  REQUIRE_THROWS_AS(add(a, b), InvalidArgumentError);
  REQUIRE_THROWS_AS(mul(a, b), InvalidArgumentError);
  REQUIRE_THROWS_AS(matmul(a, a), InvalidArgumentError);
  REQUIRE_THROWS_AS(reshape(a, {4, 4}), InvalidArgumentError);
  REQUIRE_THROWS_AS(slice(a, 0, 3, 0, 1), InvalidArgumentError);
}

TEST_CASE("gradient accumulates over reused variables", "[tape]") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(2.0), true);
  Var y = mul(x, x);          // x^2
  Var z = add(y, x);          // x^2 + x
  t.backward(z);
  REQUIRE(t.grad(x).item() == Catch::Approx(5.0));  // 2x + 1
}
