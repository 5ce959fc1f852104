#include <doctest.h>

#include <cmath>

#include "msnc/entropy.hpp"
#include "msnc/gradcheck.hpp"
#include "msnc/model.hpp"

using namespace msnc;
using D = double;

namespace {

Tensor<D> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<D> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor<D>::from_vector(std::move(shape), std::move(v));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

}  // namespace

TEST_CASE("quantize_noise: bounded, centered, seed-reproducible") {
  Rng rng(51, 1);
  Tensor<D> y = rand_tensor({100, 100}, rng, -3, 3);

  Rng n1(52, 1);
  Tensor<D> noisy = quantize_noise(y, n1);
  double mean_dev = 0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    double d = noisy.data()[i] - y.data()[i];
    CHECK(std::fabs(d) <= 0.5);
    mean_dev += d;
  }
  mean_dev /= static_cast<double>(y.numel());
  // 3 sigma of the mean of N uniform(-1/2,1/2) draws.
  CHECK(std::fabs(mean_dev) < 3.0 * std::sqrt(1.0 / 12.0 / static_cast<double>(y.numel())));

  Rng n2(52, 1);
  Tensor<D> noisy2 = quantize_noise(y, n2);
  CHECK(std::equal(noisy.data().begin(), noisy.data().end(), noisy2.data().begin()));
}

TEST_CASE("quantize_round: tie rule and reconstruction identity") {
  Tensor<D> mu = Tensor<D>::from_vector({4}, {0.25, -1.5, 2.0, 0.0});
  Tensor<D> y = Tensor<D>::from_vector({4}, {0.25, -1.0, 1.0, -0.5});
  auto q = quantize_round(y, mu);
  CHECK(q.symbols == std::vector<int32_t>{0, 1, -1, -1});  // 0.5 -> 1, -0.5 -> -1
  for (int i = 0; i < 4; ++i) {
    CHECK(q.y_hat.data()[i] == q.symbols[i] + mu.data()[i]);
    CHECK(std::fabs(q.y_hat.data()[i] - y.data()[i]) <= 0.5);
  }
  CHECK(round_half_away(0.5) == 1.0);
  CHECK(round_half_away(-0.5) == -1.0);
  CHECK(round_half_away(2.5) == 3.0);
}

TEST_CASE("group causality: earlier groups never see later ones") {
  auto model = CodecModel<D>::init(ModelConfig::desk(), 61);
  const auto& em = model.entropy;
  CHECK(em.groups == std::vector<int64_t>{3, 3, 6, 12, 24});

  Rng rng(62, 1);
  NoGradGuard ng;
  Tensor<D> ctx = rand_tensor({4, 4, 96}, rng);
  Tensor<D> y = rand_tensor({4, 4, 48}, rng);

  // All group parameters computed through the sequential schedule.
  auto run_schedule = [&](const Tensor<D>& latent) {
    std::vector<GroupParams<D>> out;
    auto groups = split(latent, -1, em.groups);
    Tensor<D> history;
    for (size_t i = 0; i < groups.size(); ++i) {
      out.push_back(em.group_params(ctx, history.defined() ? &history : nullptr, i));
      history = history.defined() ? concat<D>({history, groups[i]}, -1) : groups[i];
    }
    return out;
  };

  auto base = run_schedule(y);

  // Perturb only group 3's channels (offset 12..23): groups 0..3 parameters
  // are bitwise unchanged, group 4's must react.
  std::vector<D> pert(y.data().begin(), y.data().end());
  for (int64_t p = 0; p < 16; ++p)
    for (int64_t c = 12; c < 24; ++c) pert[p * 48 + c] += 0.37;
  auto perturbed = run_schedule(Tensor<D>::from_vector({4, 4, 48}, pert));

  for (size_t i = 0; i <= 3; ++i) {
    CHECK(std::equal(base[i].mu.data().begin(), base[i].mu.data().end(),
                     perturbed[i].mu.data().begin()));
    CHECK(std::equal(base[i].sigma.data().begin(), base[i].sigma.data().end(),
                     perturbed[i].sigma.data().begin()));
  }
  bool changed = false;
  for (int64_t i = 0; i < base[4].mu.numel() && !changed; ++i)
    changed = base[4].mu.data()[i] != perturbed[4].mu.data()[i];
  CHECK(changed);

  // History must hold exactly the earlier groups.
  Tensor<D> wrong = rand_tensor({4, 4, 5}, rng);
  Tensor<D> h0 = split(y, -1, em.groups)[0];
  CHECK_THROWS_AS(em.group_params(ctx, &wrong, 1), ShapeError);
  CHECK_THROWS_AS(em.group_params(ctx, &h0, 99), UsageError);
}

TEST_CASE("group parameter network gradient check") {
  ModelConfig cfg = ModelConfig::micro();
  auto model = CodecModel<D>::init(cfg, 63);
  Rng rng(64, 1);
  Tensor<D> ctx = rand_tensor({2, 2, 16}, rng);
  Tensor<D> h = rand_tensor({2, 2, 1}, rng);
  ctx.set_requires_grad(true);
  h.set_requires_grad(true);
  auto rep = finite_diff_check_many<D>(
      [&] {
        auto gp = model.entropy.group_params(ctx, &h, 1);
        return add(sum(mul(gp.mu, gp.mu)), sum(gp.sigma));
      },
      {{"ctx", ctx}, {"h", h}}, 1e-4, 1e-5, 32, 9);
  CHECK(rep.pass(1e-4));
}

TEST_CASE("gaussian likelihood anchors") {
  // y = mu, small sigma: essentially all mass in the unit bin.
  Tensor<D> y = Tensor<D>::full({1}, 3.0);
  Tensor<D> mu = Tensor<D>::full({1}, 3.0);
  Tensor<D> tiny = Tensor<D>::full({1}, 0.11);
  CHECK(gaussian_bin_mass(y, mu, tiny).data()[0] > 1.0 - 1e-5);

  // sigma = 1: Phi(0.5) - Phi(-0.5), cross-checked against the erfc-based
  // normal CDF oracle.
  Tensor<D> one = Tensor<D>::full({1}, 1.0);
  double got = gaussian_bin_mass(y, mu, one).data()[0];
  double oracle = normal_cdf(0.5) - normal_cdf(-0.5);
  CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.38292).epsilon(1e-4));

  // Unit-bin masses over the integer lattice sum to 1 within 1e-6.
  for (double sigma : {0.11, 1.0, 8.0, 64.0}) {
    std::vector<D> grid, mus, sigmas;
    for (int s = -1000; s <= 1000; ++s) {
      grid.push_back(s);
      mus.push_back(0.0);
      sigmas.push_back(sigma);
    }
    auto p = gaussian_bin_mass(Tensor<D>::from_vector({2001}, grid),
                               Tensor<D>::from_vector({2001}, mus),
                               Tensor<D>::from_vector({2001}, sigmas));
    double total = 0;
    for (auto v : p.data()) total += v;
    CHECK(total <= 1.0 + 1e-12);
    CHECK(total >= 1.0 - 1e-6);
  }

  // The rate-side likelihood floors at 1e-9.
  Tensor<D> far = Tensor<D>::full({1}, 500.0);
  Tensor<D> floored = gaussian_likelihood(far, mu, tiny);
  CHECK(floored.data()[0] == 1e-9);
}

TEST_CASE("factorized prior anchors") {
  FactorizedPrior<D> prior = FactorizedPrior<D>::make(3);

  // At the location with unit scale: sigmoid(1/2) - sigmoid(-1/2).
  Tensor<D> z = Tensor<D>::zeros({1, 1, 3});
  double expect = 1.0 / (1.0 + std::exp(-0.5)) - 1.0 / (1.0 + std::exp(0.5));
  Tensor<D> mass_at_loc = prior.bin_mass(z);
  for (auto v : mass_at_loc.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.24492).epsilon(1e-4));

  // Symmetry about the location.
  auto loc = prior.loc.mutable_data();
  loc[0] = 0.3;
  Tensor<D> plus = Tensor<D>::from_vector({1, 1, 3}, {0.3 + 1.7, 0, 0});
  Tensor<D> minus = Tensor<D>::from_vector({1, 1, 3}, {0.3 - 1.7, 0, 0});
  CHECK(prior.bin_mass(plus).data()[0] ==
        doctest::Approx(prior.bin_mass(minus).data()[0]).epsilon(1e-12));

  // Integer-support sums stay within [1 - 1e-6, 1].
  std::vector<D> grid;
  for (int s = -400; s <= 400; ++s) {
    grid.push_back(s);
    grid.push_back(0);
    grid.push_back(0);
  }
  auto p = prior.bin_mass(Tensor<D>::from_vector({801, 1, 3}, grid));
  double total = 0;
  for (int64_t i = 0; i < 801; ++i) total += p.data()[i * 3];
  CHECK(total <= 1.0 + 1e-12);
  CHECK(total >= 1.0 - 1e-6);

  // Gradients flow into the prior parameters.
  prior.loc.zero_grad();
  prior.log_scale.zero_grad();
  Rng rng(65, 1);
  Tensor<D> sample = rand_tensor({2, 2, 3}, rng);
  auto rep = finite_diff_check_many<D>(
      [&] { return sum(log(prior.likelihood(sample))); },
      {{"loc", prior.loc}, {"log_scale", prior.log_scale}}, 1e-4);
  CHECK(rep.pass(1e-4));
}

TEST_CASE("rate_bits anchors and accumulation oracle") {
  Tensor<D> certain = Tensor<D>::full({10}, 1.0);
  CHECK(rate_bits<D>({certain}).item() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor<D> half = Tensor<D>::full({100}, 0.5);
  CHECK(rate_bits<D>({half}).item() == doctest::Approx(100.0).epsilon(1e-12));

  Rng rng(66, 1);
  Tensor<D> p1 = rand_tensor({40}, rng, 0.01, 1.0);
  Tensor<D> p2 = rand_tensor({25}, rng, 0.01, 1.0);
  double manual = 0;
  for (auto v : p1.data()) manual -= std::log2(v);
  for (auto v : p2.data()) manual -= std::log2(v);
  CHECK(rate_bits<D>({p1, p2}).item() == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("sigma clamp keeps the conditional in the coding range") {
  auto model = CodecModel<D>::init(ModelConfig::micro(), 67);
  Rng rng(68, 1);
  NoGradGuard ng;
  Tensor<D> ctx = rand_tensor({2, 2, 16}, rng, -50, 50);
  auto gp = model.entropy.group_params(ctx, nullptr, 0);
  for (auto s : gp.sigma.data()) {
    CHECK(s >= 0.11);
    CHECK(s <= 256.0);
  }
}
