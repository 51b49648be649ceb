#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "crowd/ops.hpp"
#include "crowd/rng.hpp"
#include "crowd/tensor.hpp"

using crowd::Shape;
using crowd::Tensor;

namespace {

Tensor T(const Shape& s, std::vector<double> v, bool rg = false) {
  return Tensor::from_data(s, std::move(v), rg);
}

void check_close(const std::vector<double>& got, const std::vector<double>& want,
                 double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CAPTURE(i);
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
  }
}

// Random values bounded away from zero (and kinks) on both sides.
std::vector<double> signed_values(std::size_t n, std::uint64_t seed) {
  crowd::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) {
    double mag = rng.uniform(0.2, 1.5);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return v;
}

std::vector<double> positive_values(std::size_t n, std::uint64_t seed,
                                    double lo = 0.3, double hi = 1.7) {
  crowd::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

void check_grad(const char* name,
                const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                double tol = 1e-4) {
  double err = crowd::grad_check(f, x);
  CAPTURE(name);
  CHECK(err < tol);
}

}  // namespace

// ---------------------------------------------------------------------------
// Frozen-value oracles (hand-derived closed forms).
// ---------------------------------------------------------------------------

TEST_CASE("sum of squares: value and gradient") {
  Tensor x = T({2}, {1.0, 2.0}, true);
  Tensor y = crowd::sum(crowd::mul(x, x));
  CHECK(y.item() == 5.0);
  crowd::backward(y);
  check_close(x.grad(), {2.0, 4.0});
}

TEST_CASE("relu forward and subgradient at the kink") {
  Tensor x = T({3}, {-1.0, 0.0, 2.0}, true);
  Tensor y = crowd::sum(crowd::relu(x));
  CHECK(y.item() == 2.0);
  crowd::backward(y);
  check_close(x.grad(), {0.0, 0.0, 1.0});
}

TEST_CASE("abs forward and subgradient at the kink") {
  Tensor x = T({3}, {-1.5, 0.0, 2.0}, true);
  Tensor y = crowd::sum(crowd::abs_val(x));
  CHECK(y.item() == 3.5);
  crowd::backward(y);
  check_close(x.grad(), {-1.0, 0.0, 1.0});
}

TEST_CASE("softmax frozen values and first-component gradient") {
  Tensor x = T({2}, {0.0, 0.0}, true);
  Tensor p = crowd::softmax(x);
  check_close(p.value(), {0.5, 0.5});
  // d p0 / dx = [p0 (1 - p0), -p0 p1] = [0.25, -0.25]
  Tensor p0 = crowd::sum(crowd::mul(p, T({2}, {1.0, 0.0})));
  crowd::backward(p0);
  check_close(x.grad(), {0.25, -0.25});

  Tensor q = crowd::softmax(T({2}, {0.0, std::log(3.0)}));
  check_close(q.value(), {0.25, 0.75}, 1e-12);
}

TEST_CASE("matmul frozen values and gradients") {
  Tensor a = T({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = T({2, 2}, {5, 6, 7, 8}, true);
  Tensor c = crowd::matmul(a, b);
  check_close(c.value(), {19, 22, 43, 50});
  crowd::backward(crowd::sum(c));
  check_close(a.grad(), {11, 15, 11, 15});
  check_close(b.grad(), {4, 4, 6, 6});
}

TEST_CASE("conv2d frozen 3x3 input, 2x2 ones kernel") {
  Tensor x = T({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, true);
  Tensor w = T({1, 1, 2, 2}, {1, 1, 1, 1}, true);
  Tensor b = T({1}, {0.0}, true);
  Tensor y = crowd::conv2d(x, w, b);
  REQUIRE(y.shape() == Shape{1, 2, 2});
  check_close(y.value(), {12, 16, 24, 28});
  crowd::backward(crowd::sum(y));
  check_close(x.grad(), {1, 2, 1, 2, 4, 2, 1, 2, 1});
  check_close(w.grad(), {12, 16, 24, 28});
  check_close(b.grad(), {4});
}

TEST_CASE("conv2d with padding preserves spatial size") {
  Tensor x = T({1, 2, 2}, {1, 2, 3, 4});
  Tensor w = T({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor b = T({1}, {0.5});
  Tensor y = crowd::conv2d(x, w, b, 1, 1);
  REQUIRE(y.shape() == Shape{1, 2, 2});
  // Each output = sum of the in-bounds window + bias.
  check_close(y.value(), {10.5, 10.5, 10.5, 10.5});
}

TEST_CASE("maxpool2x2 frozen values and routing") {
  Tensor x = T({1, 2, 2}, {1, 2, 3, 4}, true);
  Tensor y = crowd::maxpool2x2(x);
  check_close(y.value(), {4});
  crowd::backward(crowd::sum(y));
  check_close(x.grad(), {0, 0, 0, 1});
}

TEST_CASE("maxpool2x2 tie routes to the first in scan order") {
  Tensor x = T({1, 2, 2}, {7, 7, 7, 7}, true);
  crowd::backward(crowd::sum(crowd::maxpool2x2(x)));
  check_close(x.grad(), {1, 0, 0, 0});
}

TEST_CASE("bilinear upsample x2: half-pixel centers with border replicate") {
  Tensor x = T({1, 2, 2}, {1, 2, 3, 4});
  Tensor y = crowd::upsample_bilinear(x, 2);
  REQUIRE(y.shape() == Shape{1, 4, 4});
  check_close(y.value(), {1.0, 1.25, 1.75, 2.0,    //
                          1.5, 1.75, 2.25, 2.5,    //
                          2.5, 2.75, 3.25, 3.5,    //
                          3.0, 3.25, 3.75, 4.0});
}

TEST_CASE("bilinear upsample of a constant plane stays constant") {
  Tensor x = Tensor::full({2, 3, 5}, 0.75);
  Tensor y = crowd::upsample_bilinear(x, 4);
  for (double v : y.value()) CHECK(v == 0.75);
}

TEST_CASE("l2 norm frozen 3-4-5") {
  Tensor x = T({2}, {3.0, 4.0}, true);
  Tensor y = crowd::l2_norm(x);
  CHECK(y.item() == 5.0);
  crowd::backward(y);
  check_close(x.grad(), {0.6, 0.8});
}

TEST_CASE("cosine frozen values") {
  CHECK(crowd::cosine(T({2}, {1, 0}), T({2}, {0, 1})).item() == 0.0);
  CHECK(crowd::cosine(T({2}, {2, 2}), T({2}, {5, 5})).item() ==
        doctest::Approx(1.0));
  CHECK(crowd::cosine(T({3}, {1, 2, 3}), T({3}, {-1, -2, -3})).item() ==
        doctest::Approx(-1.0));
}

TEST_CASE("cosine with a zero vector: bounded value, zero gradient") {
  Tensor u = T({2}, {0.0, 0.0}, true);
  Tensor v = T({2}, {1.0, 2.0}, true);
  Tensor c = crowd::cosine(u, v);
  CHECK(c.item() == 0.0);
  crowd::backward(c);
  check_close(u.grad(), {0.0, 0.0});
  check_close(v.grad(), {0.0, 0.0});
}

TEST_CASE("layer norm normalizes each row") {
  Tensor a = T({1, 2}, {1.0, 3.0}, true);
  Tensor gamma = T({2}, {1.0, 1.0});
  Tensor beta = T({2}, {0.0, 0.0});
  Tensor y = crowd::layer_norm_rows(a, gamma, beta);
  double want = 1.0 / std::sqrt(1.0 + 1e-5);
  check_close(y.value(), {-want, want}, 1e-12);
}

TEST_CASE("transpose2d frozen") {
  Tensor a = T({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = crowd::transpose2d(a);
  REQUIRE(t.shape() == Shape{3, 2});
  check_close(t.value(), {1, 4, 2, 5, 3, 6});
}

TEST_CASE("concat along both axes") {
  Tensor a = T({2, 2}, {1, 2, 3, 4});
  Tensor b = T({2, 1}, {5, 6});
  Tensor c = crowd::concat({a, b}, 1);
  REQUIRE(c.shape() == Shape{2, 3});
  check_close(c.value(), {1, 2, 5, 3, 4, 6});

  Tensor d = crowd::concat({a, T({1, 2}, {7, 8})}, 0);
  REQUIRE(d.shape() == Shape{3, 2});
  check_close(d.value(), {1, 2, 3, 4, 7, 8});
}

TEST_CASE("slice_cols / gather_rows / scatter_rows frozen") {
  Tensor a = T({2, 3}, {1, 2, 3, 4, 5, 6});
  check_close(crowd::slice_cols(a, 1, 2).value(), {2, 3, 5, 6});
  check_close(crowd::gather_rows(a, {1, 0, 1}).value(), {4, 5, 6, 1, 2, 3, 4, 5, 6});
  Tensor s = crowd::scatter_rows(T({2, 2}, {1, 2, 3, 4}), {2, 0}, 3);
  check_close(s.value(), {3, 4, 0, 0, 1, 2});
  // Colliding rows accumulate.
  Tensor s2 = crowd::scatter_rows(T({2, 2}, {1, 2, 3, 4}), {1, 1}, 2);
  check_close(s2.value(), {0, 0, 4, 6});
}

TEST_CASE("reductions: sum, mean, axis variants") {
  Tensor a = T({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(crowd::sum(a).item() == 21.0);
  CHECK(crowd::mean(a).item() == 3.5);
  check_close(crowd::sum_axis(a, 0).value(), {5, 7, 9});
  check_close(crowd::sum_axis(a, 1).value(), {6, 15});
  check_close(crowd::mean_axis(a, 0).value(), {2.5, 3.5, 4.5});
  check_close(crowd::mean_axis(a, 1).value(), {2, 5});
}

TEST_CASE("div_by_scalar frozen, gradient to both arguments") {
  Tensor a = T({2}, {2.0, 4.0}, true);
  Tensor s = T({1}, {2.0}, true);
  Tensor y = crowd::sum(crowd::div_by_scalar(a, s));
  CHECK(y.item() == 3.0);
  crowd::backward(y);
  check_close(a.grad(), {0.5, 0.5});
  // d/ds sum(a/s) = -sum(a)/s^2 = -6/4
  check_close(s.grad(), {-1.5});
}

TEST_CASE("custom_grad_scalar injects the supplied gradient") {
  Tensor x = T({3}, {1.0, 2.0, 3.0}, true);
  Tensor y = crowd::custom_grad_scalar(7.5, x, {0.5, -1.0, 2.0});
  CHECK(y.item() == 7.5);
  crowd::backward(crowd::scale(y, 3.0));
  check_close(x.grad(), {1.5, -3.0, 6.0});
}

// ---------------------------------------------------------------------------
// Graph semantics.
// ---------------------------------------------------------------------------

TEST_CASE("diamond graph: each node contributes exactly once") {
  Tensor x = T({1}, {3.0}, true);
  Tensor a = crowd::scale(x, 2.0);
  Tensor b = crowd::add(a, a);  // b = 4x
  crowd::backward(crowd::sum(b));
  check_close(x.grad(), {4.0});
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Tensor x = T({2}, {1.0, 2.0}, true);
  crowd::backward(crowd::sum(crowd::mul(x, x)));
  check_close(x.grad(), {2.0, 4.0});
  crowd::backward(crowd::sum(crowd::mul(x, x)));
  check_close(x.grad(), {4.0, 8.0});
  x.zero_grad();
  crowd::backward(crowd::sum(crowd::mul(x, x)));
  check_close(x.grad(), {2.0, 4.0});
}

TEST_CASE("interior gradients are per-call, not accumulated") {
  Tensor x = T({2}, {1.0, 2.0}, true);
  Tensor h = crowd::mul(x, x);
  crowd::backward(crowd::sum(h));
  check_close(h.grad(), {1.0, 1.0});
  crowd::backward(crowd::sum(crowd::scale(h, 2.0)));
  check_close(h.grad(), {2.0, 2.0});  // fresh values, not 1+2
}

TEST_CASE("detach blocks gradient flow") {
  Tensor x = T({2}, {1.0, 2.0}, true);
  Tensor d = crowd::mul(x, x).detach();
  CHECK_FALSE(d.requires_grad());
  Tensor y = crowd::sum(crowd::mul(d, x));
  crowd::backward(y);
  check_close(x.grad(), {1.0, 4.0});  // only the direct factor, d held constant
}

TEST_CASE("constant-only graphs carry no backward state") {
  Tensor a = T({2}, {1.0, 2.0});
  Tensor y = crowd::sum(crowd::mul(a, a));
  CHECK_FALSE(y.requires_grad());
  crowd::backward(y);  // no-op, must not throw
}

TEST_CASE("backward rejects non-scalar roots and undefined tensors") {
  Tensor x = T({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(crowd::backward(crowd::mul(x, x)), crowd::NonScalarOutput);
  CHECK_THROWS_AS(crowd::backward(Tensor()), crowd::EmptyInput);
  CHECK_THROWS_AS(crowd::mul(x, x).item(), crowd::NonScalarOutput);
}

TEST_CASE("non-finite forward values are rejected at creation") {
  Tensor a = T({2}, {1.0, 0.0});
  CHECK_THROWS_AS(crowd::divide(a, T({2}, {1.0, 0.0})), crowd::NonFiniteValue);
  CHECK_THROWS_AS(crowd::log_elem(T({1}, {0.0})), crowd::NonFiniteValue);
  CHECK_THROWS_AS(crowd::log_elem(T({1}, {-1.0})), crowd::NonFiniteValue);
  CHECK_THROWS_AS(crowd::exp_elem(T({1}, {1e9})), crowd::NonFiniteValue);
}

TEST_CASE("shape validation errors") {
  Tensor a = T({2, 2}, {1, 2, 3, 4});
  Tensor v = T({3}, {1, 2, 3});
  CHECK_THROWS_AS(crowd::add(a, v), crowd::ShapeMismatch);
  CHECK_THROWS_AS(crowd::matmul(a, v), crowd::ShapeMismatch);
  CHECK_THROWS_AS(crowd::matmul(a, T({3, 2}, {1, 2, 3, 4, 5, 6})),
                  crowd::ShapeMismatch);
  CHECK_THROWS_AS(crowd::reshape(a, {3, 2}), crowd::ShapeMismatch);
  CHECK_THROWS_AS(crowd::slice_cols(a, 1, 2), crowd::BadSize);
  CHECK_THROWS_AS(crowd::gather_rows(a, {0, 2}), crowd::BadSize);
  CHECK_THROWS_AS(crowd::scatter_rows(a, {0, 3}, 3), crowd::BadSize);
  CHECK_THROWS_AS(crowd::maxpool2x2(T({1, 3, 2}, {1, 2, 3, 4, 5, 6})),
                  crowd::BadSize);
  CHECK_THROWS_AS(crowd::concat({a, v}, 0), crowd::ShapeMismatch);
  CHECK_THROWS_AS(crowd::concat({a, a}, 2), crowd::BadSize);
  CHECK_THROWS_AS(crowd::concat(std::vector<Tensor>{}, 0), crowd::EmptyInput);
  CHECK_THROWS_AS(
      crowd::conv2d(T({2, 3, 3}, std::vector<double>(18, 1.0)),
                    T({1, 1, 2, 2}, {1, 1, 1, 1}), T({1}, {0.0})),
      crowd::ShapeMismatch);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0}), crowd::ShapeMismatch);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), crowd::BadSize);
}

TEST_CASE("repeated runs of one graph are bitwise identical") {
  auto run = [](std::vector<double>* grads) {
    crowd::Rng rng(404);
    std::vector<double> xv(24), wv(24);
    for (double& v : xv) v = rng.normal();
    for (double& v : wv) v = rng.normal();
    Tensor x = T({4, 6}, xv, true);
    Tensor w = T({6, 4}, wv, true);
    Tensor y = crowd::sum(crowd::relu(crowd::matmul(x, w)));
    crowd::backward(y);
    *grads = x.grad();
    grads->insert(grads->end(), w.grad().begin(), w.grad().end());
    grads->push_back(y.item());
  };
  std::vector<double> g1, g2;
  run(&g1);
  run(&g2);
  REQUIRE(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

// ---------------------------------------------------------------------------
// Finite-difference sweeps over every primitive.
// Inputs are kept away from kinks/zeros so central differences are valid.
// ---------------------------------------------------------------------------

TEST_CASE("grad_check: elementwise ops") {
  Tensor x = T({2, 3}, signed_values(6, 11));
  Tensor c = T({2, 3}, signed_values(6, 12));
  Tensor pos = T({2, 3}, positive_values(6, 13));
  Tensor den = T({2, 3}, positive_values(6, 14, 0.5, 1.5));

  check_grad("add lhs", [&](const Tensor& v) { return crowd::sum(crowd::add(v, c)); }, x);
  check_grad("add rhs", [&](const Tensor& v) { return crowd::sum(crowd::add(c, v)); }, x);
  check_grad("sub lhs", [&](const Tensor& v) { return crowd::sum(crowd::sub(v, c)); }, x);
  check_grad("sub rhs", [&](const Tensor& v) { return crowd::sum(crowd::sub(c, v)); }, x);
  check_grad("mul lhs", [&](const Tensor& v) { return crowd::sum(crowd::mul(v, c)); }, x);
  check_grad("mul rhs", [&](const Tensor& v) { return crowd::sum(crowd::mul(c, v)); }, x);
  check_grad("divide lhs", [&](const Tensor& v) { return crowd::sum(crowd::divide(v, den)); }, x);
  check_grad("divide rhs", [&](const Tensor& v) { return crowd::sum(crowd::divide(c, v)); }, den);
  check_grad("scale", [](const Tensor& v) { return crowd::sum(crowd::scale(v, -2.5)); }, x);
  check_grad("add_scalar", [](const Tensor& v) { return crowd::sum(crowd::add_scalar(v, 3.25)); }, x);
  check_grad("relu", [](const Tensor& v) { return crowd::sum(crowd::relu(v)); }, x);
  check_grad("abs", [](const Tensor& v) { return crowd::sum(crowd::abs_val(v)); }, x);
  check_grad("exp", [](const Tensor& v) { return crowd::sum(crowd::exp_elem(v)); }, x);
  check_grad("log", [](const Tensor& v) { return crowd::sum(crowd::log_elem(v)); }, pos);
}

TEST_CASE("grad_check: shape ops") {
  Tensor x = T({2, 6}, signed_values(12, 21));
  Tensor w6 = T({2, 6}, signed_values(12, 22));
  Tensor w4 = T({3, 4}, signed_values(12, 23));
  Tensor part = T({2, 2}, signed_values(4, 24));
  Tensor wcat = T({2, 8}, signed_values(16, 25));

  check_grad("reshape", [&](const Tensor& v) {
    return crowd::sum(crowd::mul(crowd::reshape(v, {3, 4}), w4));
  }, x);
  check_grad("transpose2d", [&](const Tensor& v) {
    return crowd::sum(crowd::mul(crowd::transpose2d(v), crowd::transpose2d(w6)));
  }, x);
  check_grad("concat axis1", [&](const Tensor& v) {
    return crowd::sum(crowd::mul(crowd::concat({v, part}, 1), wcat));
  }, x);
  check_grad("concat axis0", [&](const Tensor& v) {
    return crowd::sum(crowd::mul(crowd::concat({v, w6}, 0), crowd::concat({w6, w6}, 0)));
  }, x);
  check_grad("slice_cols", [&](const Tensor& v) {
    return crowd::sum(crowd::mul(crowd::slice_cols(v, 1, 3),
                                 crowd::slice_cols(w6, 2, 3)));
  }, x);
  check_grad("gather_rows dup", [&](const Tensor& v) {
    Tensor g = crowd::gather_rows(v, {0, 1, 0});
    return crowd::sum(crowd::mul(g, crowd::gather_rows(w6, {1, 0, 1})));
  }, x);
  check_grad("scatter_rows dup", [&](const Tensor& v) {
    Tensor s = crowd::scatter_rows(v, {2, 2}, 4);
    return crowd::sum(crowd::mul(s, crowd::scatter_rows(w6, {0, 3}, 4)));
  }, x);
}

TEST_CASE("grad_check: linear algebra") {
  Tensor a = T({3, 4}, signed_values(12, 31));
  Tensor b = T({4, 2}, signed_values(8, 32));
  Tensor wout = T({3, 2}, signed_values(6, 33));
  Tensor v = T({4}, signed_values(4, 34));
  Tensor m = T({3, 4}, signed_values(12, 35));

  check_grad("matmul lhs", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::matmul(t, b), wout));
  }, a);
  check_grad("matmul rhs", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::matmul(a, t), wout));
  }, b);
  check_grad("add_rowvec mat", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::add_rowvec(t, v), m));
  }, a);
  check_grad("add_rowvec vec", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::add_rowvec(a, t), m));
  }, v);
}

TEST_CASE("grad_check: reductions and norms") {
  Tensor x = T({3, 4}, signed_values(12, 41));
  Tensor w0 = T({4}, signed_values(4, 42));
  Tensor w1 = T({3}, signed_values(3, 43));
  Tensor u = T({5}, signed_values(5, 44));
  Tensor v = T({5}, signed_values(5, 45));

  check_grad("sum", [](const Tensor& t) { return crowd::sum(t); }, x);
  check_grad("mean", [](const Tensor& t) { return crowd::mean(t); }, x);
  check_grad("sum_axis0", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::sum_axis(t, 0), w0));
  }, x);
  check_grad("sum_axis1", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::sum_axis(t, 1), w1));
  }, x);
  check_grad("mean_axis0", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::mean_axis(t, 0), w0));
  }, x);
  check_grad("mean_axis1", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::mean_axis(t, 1), w1));
  }, x);
  check_grad("l1_norm", [](const Tensor& t) { return crowd::l1_norm(t); }, x);
  check_grad("l2_norm", [](const Tensor& t) { return crowd::l2_norm(t); }, x);
  check_grad("cosine lhs", [&](const Tensor& t) { return crowd::cosine(t, v); }, u);
  check_grad("cosine rhs", [&](const Tensor& t) { return crowd::cosine(u, t); }, v);
  check_grad("div_by_scalar num", [&](const Tensor& t) {
    return crowd::sum(crowd::div_by_scalar(t, T({1}, {1.3})));
  }, x);
  check_grad("div_by_scalar den", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::div_by_scalar(x, t), x));
  }, T({1}, {0.8}));
}

TEST_CASE("grad_check: softmax and layer norm") {
  Tensor x = T({3, 4}, signed_values(12, 51));
  Tensor w = T({3, 4}, signed_values(12, 52));
  Tensor vec = T({6}, signed_values(6, 53));
  Tensor wv = T({6}, signed_values(6, 54));
  Tensor gamma = T({4}, positive_values(4, 55));
  Tensor beta = T({4}, signed_values(4, 56));

  check_grad("softmax rows", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::softmax(t, 1), w));
  }, x);
  check_grad("softmax cols", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::softmax(t, 0), w));
  }, x);
  check_grad("softmax 1d", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::softmax(t), wv));
  }, vec);
  check_grad("layer_norm input", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::layer_norm_rows(t, gamma, beta), w));
  }, x);
  check_grad("layer_norm gamma", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::layer_norm_rows(x, t, beta), w));
  }, gamma);
  check_grad("layer_norm beta", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::layer_norm_rows(x, gamma, t), w));
  }, beta);
}

TEST_CASE("grad_check: conv, pooling, upsampling") {
  Tensor x = T({2, 5, 5}, signed_values(50, 61));
  Tensor w = T({3, 2, 3, 3}, signed_values(54, 62));
  Tensor b = T({3}, signed_values(3, 63));
  Tensor wo_same = T({3, 5, 5}, signed_values(75, 64));
  Tensor wo_strided = T({3, 3, 3}, signed_values(27, 65));
  Tensor wo_up = T({2, 10, 10}, signed_values(200, 66));

  check_grad("conv2d input", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::conv2d(t, w, b, 1, 1), wo_same));
  }, x);
  check_grad("conv2d kernel", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::conv2d(x, t, b, 1, 1), wo_same));
  }, w);
  check_grad("conv2d bias", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::conv2d(x, w, t, 1, 1), wo_same));
  }, b);
  check_grad("conv2d stride2", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::conv2d(t, w, b, 2, 1), wo_strided));
  }, x);
  check_grad("maxpool2x2", [&](const Tensor& t) {
    Tensor p = crowd::maxpool2x2(t);
    return crowd::sum(crowd::mul(p, crowd::maxpool2x2(wo_up)));
  }, T({2, 10, 10}, signed_values(200, 67)));
  check_grad("upsample x2", [&](const Tensor& t) {
    return crowd::sum(crowd::mul(crowd::upsample_bilinear(t, 2), wo_up));
  }, x);
  check_grad("upsample x4", [&](const Tensor& t) {
    Tensor up = crowd::upsample_bilinear(t, 4);
    return crowd::mean(crowd::mul(up, up));
  }, T({1, 3, 3}, signed_values(9, 68)));
}

TEST_CASE("grad_check: custom scalar hook composes with the chain rule") {
  std::vector<double> gfix = signed_values(6, 71);
  Tensor x = T({6}, signed_values(6, 72));
  check_grad("custom_grad_scalar", [&](const Tensor& t) {
    double dot = 0.0;
    for (std::size_t i = 0; i < gfix.size(); ++i) dot += gfix[i] * t.data()[i];
    Tensor s = crowd::custom_grad_scalar(dot, t, gfix);
    return crowd::scale(s, 1.75);
  }, x);
}

TEST_CASE("grad_check: composite expression through many ops") {
  Tensor x = T({2, 4, 4}, signed_values(32, 81));
  Tensor w = T({2, 2, 3, 3}, signed_values(36, 82));
  Tensor b = T({2}, signed_values(2, 83));
  check_grad("composite", [&](const Tensor& t) {
    Tensor h = crowd::relu(crowd::conv2d(t, w, b, 1, 1));  // [2,4,4]
    Tensor p = crowd::maxpool2x2(h);                       // [2,2,2]
    Tensor f = crowd::reshape(p, {2, 4});
    Tensor s = crowd::softmax(f, 1);
    return crowd::mean(crowd::mul(s, f));
  }, x);
}

TEST_CASE("grad_check rejects non-positive step sizes") {
  Tensor x = T({2}, {1.0, 2.0});
  auto f = [](const Tensor& t) { return crowd::sum(t); };
  CHECK_THROWS_AS(crowd::grad_check(f, x, 0.0), crowd::BadSize);
  CHECK_THROWS_AS(crowd::grad_check(f, x, -1e-5), crowd::BadSize);
}
