#include <doctest.h>

#include <cmath>

#include "msnc/gradcheck.hpp"
#include "msnc/ops.hpp"
#include "msnc/rng.hpp"

using namespace msnc;
using D = double;

namespace {

Tensor<D> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<D> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor<D>::from_vector(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and hand-computed contraction") {
  Rng rng(1, 1);
  Tensor<D> eye = Tensor<D>::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<D> x = rand_tensor({3, 3}, rng);
  Tensor<D> ix = matmul(eye, x);
  for (int i = 0; i < 9; ++i) CHECK(ix.data()[i] == x.data()[i]);

  Tensor<D> a = Tensor<D>::from_vector({2, 2}, {1, 2, 3, 4});
  Tensor<D> b = Tensor<D>::from_vector({2, 1}, {5, 6});
  Tensor<D> c = matmul(a, b);
  CHECK(c.data()[0] == 17.0);
  CHECK(c.data()[1] == 39.0);
}

TEST_CASE("matmul gradient equals ones * B^T (finite differences, h=1e-5)") {
  Rng rng(2, 1);
  Tensor<D> a = rand_tensor({3, 4}, rng);
  Tensor<D> b = rand_tensor({4, 2}, rng);
  a.set_requires_grad(true);
  auto rep = finite_diff_check_many<D>([&] { return sum(matmul(a, b)); }, {{"a", a}}, 1e-4, 1e-5);
  CHECK(rep.pass(1e-4));

  // Analytic cross-check: d sum(AB) / dA = ones * B^T.
  a.zero_grad();
  backward(sum(matmul(a, b)));
  auto g = a.grad();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      double expect = b.data()[k * 2 + 0] + b.data()[k * 2 + 1];
      CHECK(g[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("matmul batched forms and shape errors") {
  Rng rng(3, 1);
  Tensor<D> a = rand_tensor({2, 3, 4}, rng);
  Tensor<D> w = rand_tensor({4, 5}, rng);
  Tensor<D> y = matmul(a, w);
  CHECK(y.shape() == Shape{2, 3, 5});
  Tensor<D> b = rand_tensor({2, 4, 5}, rng);
  CHECK(matmul(a, b).shape() == Shape{2, 3, 5});
  CHECK_THROWS_AS(matmul(a, rand_tensor({3, 5}, rng)), ShapeError);
}

TEST_CASE("softmax oracle values and shift invariance") {
  Tensor<D> c = Tensor<D>::full({5}, 3.25);
  auto u = softmax(c, 0);
  for (auto v : u.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));

  Tensor<D> x = Tensor<D>::from_vector({2}, {0.0, std::log(3.0)});
  auto p = softmax(x, 0);
  CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-14));

  Rng rng(4, 1);
  Tensor<D> r = rand_tensor({3, 6}, rng);
  Tensor<D> shifted = add_scalar(r, 17.5);
  Tensor<D> sm_a = softmax(r, -1);
  Tensor<D> sm_b = softmax(shifted, -1);
  auto pa = sm_a.data();
  auto pb = sm_b.data();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-12));

  // Rows sum to one.
  auto rows = sum_axis(softmax(r, -1), -1);
  for (auto v : rows.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm oracle values") {
  Tensor<D> gamma = Tensor<D>::full({2}, 1.0);
  Tensor<D> beta = Tensor<D>::zeros({2});

  Tensor<D> constant = Tensor<D>::full({3, 2}, 4.2);
  Tensor<D> ln_const = layer_norm(constant, gamma, beta);
  for (auto v : ln_const.data()) CHECK(v == 0.0);

  Tensor<D> tok = Tensor<D>::from_vector({1, 2}, {1.0, 3.0});
  auto y = layer_norm(tok, gamma, beta);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-5));

  Rng rng(5, 1);
  Tensor<D> x = rand_tensor({4, 8}, rng, -3, 3);
  Tensor<D> beta2 = rand_tensor({8}, rng);
  auto out = layer_norm(x, Tensor<D>::full({8}, 1.0), beta2);
  double beta_mean = 0;
  for (auto v : beta2.data()) beta_mean += v;
  beta_mean /= 8;
  for (int r = 0; r < 4; ++r) {
    double m = 0;
    for (int c = 0; c < 8; ++c) m += out.data()[r * 8 + c];
    m /= 8;
    CHECK(std::fabs(m - beta_mean) < 1e-6);
  }
}

TEST_CASE("gelu anchors and derivative at zero") {
  Tensor<D> z = Tensor<D>::zeros({1});
  CHECK(gelu(z).data()[0] == 0.0);
  Tensor<D> ten = Tensor<D>::full({1}, 10.0);
  CHECK(gelu(ten).data()[0] == doctest::Approx(10.0).epsilon(1e-7));

  Tensor<D> x = Tensor<D>::zeros({1});
  x.set_requires_grad(true);
  backward(sum(gelu(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward: sum gives ones, quadratic gives 2x, fan-out accumulates") {
  Rng rng(6, 1);
  Tensor<D> x = rand_tensor({3, 3}, rng);
  x.set_requires_grad(true);
  backward(sum(x));
  for (auto g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  backward(sum(mul(x, x)));
  for (int i = 0; i < 9; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]).epsilon(1e-14));

  // Fan-out: y = x + x doubles the gradient.
  x.zero_grad();
  backward(sum(add(x, x)));
  for (auto g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor<D> x = Tensor<D>::zeros({2, 2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(backward(add_scalar(x, 1.0)), UsageError);
}

TEST_CASE("finite_diff_check: exact op, cross-entropy, and a negative control") {
  auto rep = finite_diff_check<D>([](const Tensor<D>& x) { return sum(x); },
                                  Tensor<D>::full({4}, 0.7), 1e-4);
  CHECK(rep.max_rel < 1e-9);

  Rng rng(7, 1);
  Tensor<D> logits = rand_tensor({8}, rng, -2, 2);
  Tensor<D> target = softmax(rand_tensor({8}, rng), 0);
  auto ce = [&](const Tensor<D>& x) {
    return neg(sum(mul(target, log(softmax(x, 0)))));
  };
  CHECK(finite_diff_check<D>(ce, logits, 1e-4).pass(1e-4));

  // Deliberately wrong backward rule must be caught.
  auto broken = [&](const Tensor<D>& x) {
    std::vector<D> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = e * e;
    auto out = msnc::detail::make_result<D>(
        "broken_square", x.shape(), std::move(v), {x}, [](msnc::detail::Node<D>& self) {
          auto& dx = self.parents[0]->ensure_grad();
          for (size_t i = 0; i < dx.size(); ++i) dx[i] += (*self.grad)[i];  // missing 2x factor
        });
    return sum(out);
  };
  CHECK_FALSE(finite_diff_check<D>(broken, rand_tensor({5}, rng), 1e-4).pass(1e-4));
}

TEST_CASE("every differentiable op passes finite differences on random shapes") {
  Rng rng(8, 1);
  const double tol = 1e-4;

  auto fd = [&](auto fn, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor<D> x = rand_tensor(shape, rng, lo, hi);
    return finite_diff_check<D>(fn, x, tol).pass(tol);
  };

  CHECK(fd([](const Tensor<D>& x) { return sum(exp(x)); }, {3, 4}));
  CHECK(fd([](const Tensor<D>& x) { return sum(log(x)); }, {6}, 0.2, 2.0));
  CHECK(fd([](const Tensor<D>& x) { return sum(erf(x)); }, {5}));
  CHECK(fd([](const Tensor<D>& x) { return sum(sigmoid(x)); }, {5}));
  CHECK(fd([](const Tensor<D>& x) { return sum(softplus(x)); }, {5}));
  CHECK(fd([](const Tensor<D>& x) { return sum(gelu(x)); }, {7}));
  CHECK(fd([](const Tensor<D>& x) { return sum(mul(x, x)); }, {3, 2}));
  CHECK(fd([](const Tensor<D>& x) { return mean(x); }, {4, 5}));
  CHECK(fd([](const Tensor<D>& x) { return sum(mean_axis(x, 0)); }, {4, 5}));
  CHECK(fd([](const Tensor<D>& x) { return sum(mul(softmax(x, 0), x)); }, {5, 3}));
  CHECK(fd([](const Tensor<D>& x) { return sum(mul(space_to_depth(x), space_to_depth(x))); },
           {4, 4, 3}));
  CHECK(fd([](const Tensor<D>& x) { return sum(mul(depth_to_space(x), depth_to_space(x))); },
           {2, 2, 8}));
  CHECK(fd([](const Tensor<D>& x) { return sum(mul(cyclic_shift(x, 1, 2), cyclic_shift(x, 2, 1))); },
           {4, 5, 2}));
  CHECK(fd([](const Tensor<D>& x) { return sum(mul(permute(x, {2, 0, 1}), permute(x, {2, 0, 1}))); },
           {2, 3, 4}));
  CHECK(fd([](const Tensor<D>& x) {
          auto parts = split_equal(x, -1, 2);
          return sum(mul(parts[0], parts[1]));
        },
        {3, 6}));
  CHECK(fd([](const Tensor<D>& x) {
          return sum(mul(concat<D>({x, x}, 0), concat<D>({x, x}, 0)));
        },
        {2, 3}));
  CHECK(fd([](const Tensor<D>& x) {
          return sum(mul(index_select(x, 0, {2, 0, 2, 1}), index_select(x, 0, {2, 0, 2, 1})));
        },
        {3, 4}));
  CHECK(fd([](const Tensor<D>& x) { return sum(div(x, add_scalar(mul(x, x), 1.5))); }, {6}));
  CHECK(fd([](const Tensor<D>& x) { return sum(clamp(x, -0.4, 0.4)); }, {9}));

  // Two-input ops through both arguments.
  Tensor<D> a = rand_tensor({3, 4}, rng);
  Tensor<D> b = rand_tensor({3, 4}, rng, 0.5, 1.5);
  Tensor<D> bias = rand_tensor({4}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  bias.set_requires_grad(true);
  CHECK(finite_diff_check_many<D>([&] { return sum(mul(div(a, b), sub(a, b))); },
                                  {{"a", a}, {"b", b}}, tol)
            .pass(tol));
  CHECK(finite_diff_check_many<D>([&] { return sum(mul(add_channels(a, bias), a)); },
                                  {{"a", a}, {"bias", bias}}, tol)
            .pass(tol));
  CHECK(finite_diff_check_many<D>(
            [&] { return sum(mul(broadcast_channels(bias, {3, 4}), a)); }, {{"bias", bias}}, tol)
            .pass(tol));
}

TEST_CASE("reshape and permute invert exactly; space/depth round-trips") {
  Rng rng(9, 1);
  Tensor<D> x = rand_tensor({3, 4, 5}, rng);
  auto back = reshape(reshape(x, {60}), {3, 4, 5});
  CHECK(std::equal(x.data().begin(), x.data().end(), back.data().begin()));

  auto p = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  CHECK(std::equal(x.data().begin(), x.data().end(), p.data().begin()));

  Tensor<D> img = rand_tensor({6, 8, 3}, rng);
  auto rt = depth_to_space(space_to_depth(img));
  CHECK(std::equal(img.data().begin(), img.data().end(), rt.data().begin()));

  CHECK_THROWS_AS(space_to_depth(rand_tensor({3, 4, 2}, rng)), ShapeError);
}

TEST_CASE("cyclic_shift identities") {
  Rng rng(10, 1);
  Tensor<D> x = rand_tensor({5, 7, 2}, rng);
  auto same = cyclic_shift(x, 0, 0);
  CHECK(std::equal(x.data().begin(), x.data().end(), same.data().begin()));

  auto rt = cyclic_shift(cyclic_shift(x, 2, 3), 5 - 2, 7 - 3);
  CHECK(std::equal(x.data().begin(), x.data().end(), rt.data().begin()));

  // 3x3 ramp shifted down by one row: out[r][c] = in[(r-1) mod 3][c].
  std::vector<D> ramp(9);
  for (int i = 0; i < 9; ++i) ramp[i] = i;
  auto shifted = cyclic_shift(Tensor<D>::from_vector({3, 3, 1}, ramp), 1, 0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(shifted.data()[r * 3 + c] == ramp[((r + 2) % 3) * 3 + c]);
}

TEST_CASE("gather backward scatters: gradient mass is conserved exactly") {
  Rng rng(11, 1);
  Tensor<D> x = rand_tensor({5, 3}, rng);
  x.set_requires_grad(true);
  std::vector<int64_t> idx{4, 0, 0, 2, 4, 4};
  Tensor<D> picked = index_select(x, 0, idx);
  Tensor<D> weights = rand_tensor({6, 3}, rng);
  backward(sum(mul(picked, weights)));
  double scattered = 0;
  for (auto g : x.grad()) scattered += g;
  double incoming = 0;
  for (auto w : weights.data()) incoming += w;
  CHECK(scattered == doctest::Approx(incoming).epsilon(1e-12));
}

TEST_CASE("forward results are bitwise deterministic") {
  Rng rng(12, 1);
  Tensor<D> a = rand_tensor({16, 32}, rng);
  Tensor<D> b = rand_tensor({32, 24}, rng);
  auto r1 = matmul(a, b);
  auto r2 = matmul(a, b);
  CHECK(std::equal(r1.data().begin(), r1.data().end(), r2.data().begin()));

  set_num_threads(1);
  auto r3 = matmul(a, b);
  set_num_threads(2);
  auto r4 = matmul(a, b);
  CHECK(std::equal(r3.data().begin(), r3.data().end(), r4.data().begin()));
}

TEST_CASE("non-finite forward values raise NumericError") {
  Tensor<D> x = Tensor<D>::full({2}, 1e308);
  CHECK_THROWS_AS(add(x, x), NumericError);
  Tensor<D> z = Tensor<D>::zeros({2});
  CHECK_THROWS_AS(div(x, z), NumericError);
}
