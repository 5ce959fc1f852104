#include "msnc/selftest.hpp"

#include <cmath>
#include <cstdio>

#include "msnc/attention.hpp"
#include "msnc/codec.hpp"
#include "msnc/gradcheck.hpp"
#include "msnc/rans.hpp"

namespace msnc {

namespace {

using D = double;

void record(SelftestResult& r, const std::string& name, bool ok, const std::string& detail = {}) {
  std::string line = std::string(ok ? "[PASS] " : "[FAIL] ") + name;
  if (!detail.empty()) line += " (" + detail + ")";
  r.lines.push_back(line);
  (ok ? r.passed : r.failed) += 1;
}

Tensor<D> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<D> v(numel(shape));
  for (auto& x : v) x = scale * (rng.uniform() * 2.0 - 1.0);
  return Tensor<D>::from_vector(std::move(shape), std::move(v));
}

char buf_detail[128];

const char* rel_detail(const FdReport& rep) {
  std::snprintf(buf_detail, sizeof buf_detail, "max rel %.3g over %lld coords", rep.max_rel,
                static_cast<long long>(rep.coords_checked));
  return buf_detail;
}

}  // namespace

SelftestResult selftest_grad() {
  SelftestResult r;
  constexpr double kTol = 1e-4;
  Rng rng(42, 0x5e1f);

  {
    Tensor<D> a = random_tensor({3, 4}, rng);
    auto rep = finite_diff_check<D>(
        [&](const Tensor<D>& x) { return sum(mul(softmax(x, -1), x)); }, a, kTol);
    record(r, "grad softmax", rep.pass(kTol), rel_detail(rep));
  }
  {
    Tensor<D> a = random_tensor({4, 6}, rng);
    Tensor<D> w = random_tensor({6, 5}, rng);
    w.set_requires_grad(true);
    auto rep = finite_diff_check_many<D>(
        [&] { return sum(gelu(matmul(a, w))); }, {{"w", w}}, kTol);
    record(r, "grad matmul+gelu", rep.pass(kTol), rel_detail(rep));
  }
  {
    Tensor<D> x = random_tensor({5, 8}, rng);
    Tensor<D> gamma = random_tensor({8}, rng, 0.5);
    Tensor<D> beta = random_tensor({8}, rng, 0.5);
    x.set_requires_grad(true);
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
    auto rep = finite_diff_check_many<D>(
        [&] { return sum(mul(layer_norm(x, gamma, beta), x)); },
        {{"x", x}, {"gamma", gamma}, {"beta", beta}}, kTol);
    record(r, "grad layer_norm", rep.pass(kTol), rel_detail(rep));
  }
  {
    // Attention block end to end on a small map.
    Rng prng(7, 1);
    auto p = AttentionParams<D>::make(8, 2, prng);
    p.wh = normal_param<D>({8, 8}, prng, 0.05);
    Tensor<D> x = random_tensor({4, 4, 8}, rng);
    x.set_requires_grad(true);
    auto rep = finite_diff_check_many<D>(
        [&] { return sum(mul(token_aggregated_attention(x, p, 2, 2), x)); }, {{"x", x}}, kTol,
        1e-5, 40, 11);
    record(r, "grad token-aggregated attention", rep.pass(kTol), rel_detail(rep));
  }
  {
    // Micro codec pipeline: fixed noise and shifts, gradients wrt a
    // parameter subset.
    auto model = CodecModel<D>::init(ModelConfig::micro(), 3);
    Tensor<D> x = random_tensor({16, 16, 2}, rng, 0.4);
    x = add_scalar(mul_scalar(x, D(0.5)), D(0.5));
    auto loss_fn = [&] {
      FixedShiftSampler shifts({{1, 1}});
      Rng noise(11, 5);
      return training_forward(model, x, 0.0125, shifts, noise).parts.loss;
    };
    ParamMap<D> all = model.parameters();
    std::vector<std::pair<std::string, Tensor<D>>> leaves;
    for (size_t i = 0; i < all.size(); i += 9) leaves.push_back(all[i]);
    auto rep = finite_diff_check_many<D>(loss_fn, leaves, kTol, 1e-5, 4, 17);
    record(r, "grad micro pipeline", rep.pass(kTol), rel_detail(rep));
  }
  return r;
}

SelftestResult selftest_oracle() {
  SelftestResult r;
  Rng rng(9, 0x04ac1eULL);

  // Token aggregation with every window selected equals global attention.
  {
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
      int64_t win = 2, grid = 2 + trial % 3;
      int64_t h = win * grid, c = 8;
      Rng prng(100 + trial, 2);
      auto p = AttentionParams<D>::make(c, 2, prng);
      p.wh = normal_param<D>({c, c}, prng, 0.05);
      Tensor<D> x = random_tensor({h, h, c}, rng);
      const int64_t n_windows = grid * grid;
      std::vector<int64_t> all;
      for (int64_t w = 0; w < n_windows; ++w)
        for (int64_t j = 0; j < n_windows; ++j) all.push_back(j);
      Tensor<D> agg = token_aggregated_attention(x, p, win, n_windows, &all);
      Tensor<D> glob = mhsa(reshape(x, {h * h, c}), p);
      Tensor<D> glob_map = window_reverse(
          reshape(window_partition(reshape(glob, {h, h, c}), win), {n_windows, win * win, c}), h,
          h);
      auto pa = agg.data();
      auto pb = glob_map.data();
      for (int64_t i = 0; i < agg.numel(); ++i) worst = std::max(worst, std::fabs(pa[i] - pb[i]));
    }
    std::snprintf(buf_detail, sizeof buf_detail, "max abs dev %.3g", worst);
    record(r, "oracle aggregated==global when all windows selected", worst < 1e-8, buf_detail);
  }

  // Self-selection reduces to per-window attention.
  {
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
      int64_t win = 2 + trial % 2, grid = 2;
      int64_t h = win * grid, c = 8;
      Rng prng(200 + trial, 2);
      auto p = AttentionParams<D>::make(c, 2, prng);
      p.wh = normal_param<D>({c, c}, prng, 0.05);
      Tensor<D> x = random_tensor({h, h, c}, rng);
      std::vector<int64_t> self;
      for (int64_t w = 0; w < grid * grid; ++w) self.push_back(w);
      Tensor<D> agg = token_aggregated_attention(x, p, win, 1, &self);
      Tensor<D> plain = window_mhsa(x, p, win);
      auto pa = agg.data();
      auto pb = plain.data();
      for (int64_t i = 0; i < agg.numel(); ++i) worst = std::max(worst, std::fabs(pa[i] - pb[i]));
    }
    std::snprintf(buf_detail, sizeof buf_detail, "max abs dev %.3g", worst);
    record(r, "oracle self-selection==window attention", worst < 1e-10, buf_detail);
  }

  // Torus equivariance of the shifted pair under synchronized draws.
  {
    Rng prng(300, 2);
    ModelConfig cfg = ModelConfig::desk();
    cfg.window = 4;
    auto layer = TransformerLayer<D>::make(8, cfg, prng, false, true, ShiftPreset::kPeaked);
    layer.attn.wh = normal_param<D>({8, 8}, prng, 0.05);
    layer.mlp.fc2 = Linear<D>::normal(16, 8, prng);
    Tensor<D> x = random_tensor({8, 8, 8}, rng);
    const int64_t t = 4;  // multiple of the window
    FixedShiftSampler s1({{2, 3}});
    FixedShiftSampler s2({{2, 3}});
    Tensor<D> a = layer.forward(cyclic_shift(x, t, t), s1);
    Tensor<D> b = cyclic_shift(layer.forward(x, s2), t, t);
    double worst = 0;
    auto pa = a.data();
    auto pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(pa[i] - pb[i]));
    std::snprintf(buf_detail, sizeof buf_detail, "max abs dev %.3g", worst);
    record(r, "oracle shifted-layer torus equivariance", worst < 1e-10, buf_detail);
  }
  return r;
}

SelftestResult selftest_rans() {
  SelftestResult r;
  Rng rng(13, 0x4a45ULL);
  CdfTable table = build_gaussian_cdf_table();

  // Round trips across every scale bin.
  {
    bool ok = true;
    for (int bin = 0; bin < kRansScaleBins && ok; ++bin) {
      const auto& ctx = table.contexts[bin];
      const int64_t n = 4096;
      std::vector<int32_t> syms(n), ids(n, bin);
      for (auto& s : syms) {
        int32_t span = ctx.max_sym - ctx.min_sym + 1;
        s = ctx.min_sym + static_cast<int32_t>(rng.below(static_cast<uint32_t>(span)));
      }
      auto stream = rans_encode(syms, ids, table);
      auto back = rans_decode(stream, ids, table, n);
      ok = back == syms;
    }
    record(r, "rans round-trip across all scale bins", ok);
  }

  // Code length close to the entropy of a known law.
  {
    const int64_t n = 100000;
    std::vector<double> law{0.5, 0.2, 0.15, 0.1, 0.05};
    CdfTable t2;
    CdfContext ctx;
    ctx.min_sym = 0;
    ctx.max_sym = 4;
    ctx.cum = quantize_pmf(law);
    t2.contexts.push_back(ctx);
    std::vector<int32_t> syms(n), ids(n, 0);
    for (auto& s : syms) {
      double u = rng.uniform(), acc = 0;
      s = 4;
      for (int i = 0; i < 5; ++i) {
        acc += law[i];
        if (u < acc) {
          s = i;
          break;
        }
      }
    }
    double entropy = 0;
    for (double p : law) entropy -= p * std::log2(p);
    auto stream = rans_encode(syms, ids, t2);
    double limit = 1.01 * (entropy * n / 8.0) + 16.0;
    std::snprintf(buf_detail, sizeof buf_detail, "%zu bytes vs limit %.0f", stream.size(), limit);
    bool ok = static_cast<double>(stream.size()) <= limit &&
              rans_decode(stream, ids, t2, n) == syms;
    record(r, "rans code length near entropy", ok, buf_detail);
  }

  // Truncation must raise a format error.
  {
    const auto& ctx = table.contexts[30];
    const int64_t n = 512;
    std::vector<int32_t> syms(n), ids(n, 30);
    for (auto& s : syms) {
      int32_t span = ctx.max_sym - ctx.min_sym + 1;
      s = ctx.min_sym + static_cast<int32_t>(rng.below(static_cast<uint32_t>(span)));
    }
    auto stream = rans_encode(syms, ids, table);
    stream.resize(stream.size() / 2);
    bool threw = false;
    try {
      rans_decode(stream, ids, table, n);
    } catch (const FormatError&) {
      threw = true;
    }
    record(r, "rans truncated stream raises format error", threw);
  }
  return r;
}

SelftestResult selftest_all() {
  SelftestResult r;
  r.merge(selftest_grad());
  r.merge(selftest_oracle());
  r.merge(selftest_rans());
  return r;
}

}  // namespace msnc
