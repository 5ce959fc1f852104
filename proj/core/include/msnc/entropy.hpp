#pragma once

// Quantization and the probability model of the bottleneck: a logistic
// factorized prior for the hyper latent and a conditional Gaussian for the
// main latent, whose means/scales come from small per-group networks that
// see the hyper features plus all previously decoded channel groups
// (uneven channel-wise autoregression).

#include <cmath>
#include <vector>

#include "msnc/layers.hpp"
#include "msnc/ops.hpp"
#include "msnc/rng.hpp"
#include "msnc/transforms.hpp"

namespace msnc {

constexpr double kSigmaMin = 0.11;
constexpr double kSigmaMax = 256.0;
constexpr double kLikelihoodFloor = 1e-9;

// ---------------------------------------------------------------------------
// Quantizers

// Training proxy for rounding: i.i.d. U(-1/2, 1/2) added to every element.
// The noise tensor is a constant; gradients pass straight to y.
template <typename T>
Tensor<T> quantize_noise(const Tensor<T>& y, Rng& rng) {
  std::vector<T> u(y.numel());
  for (auto& v : u) v = static_cast<T>(rng.uniform() - 0.5);
  return add(y, Tensor<T>::from_vector(y.shape(), std::move(u)));
}

inline double round_half_away(double v) { return std::round(v); }

// Evaluation quantizer: symbols are the rounded residuals to the model mean,
// reconstruction adds the mean back. The decoder reproduces y_hat bit-exactly
// from (symbols, mu).
template <typename T>
struct Quantized {
  std::vector<int32_t> symbols;
  Tensor<T> y_hat;
};

template <typename T>
Quantized<T> quantize_round(const Tensor<T>& y, const Tensor<T>& mu) {
  require_shape(y.shape() == mu.shape(), "quantize_round: shape mismatch");
  auto py = y.data();
  auto pm = mu.data();
  Quantized<T> q;
  q.symbols.resize(y.numel());
  std::vector<T> rec(y.numel());
  for (int64_t i = 0; i < y.numel(); ++i) {
    double r = round_half_away(static_cast<double>(py[i]) - static_cast<double>(pm[i]));
    q.symbols[i] = static_cast<int32_t>(r);
    rec[i] = static_cast<T>(r) + pm[i];
  }
  q.y_hat = Tensor<T>::from_vector(y.shape(), std::move(rec));
  return q;
}

// ---------------------------------------------------------------------------
// Likelihoods

// Mass of the unit bin around y under N(mu, sigma^2): Phi((y-mu+.5)/sigma) -
// Phi((y-mu-.5)/sigma). Unfloored; integer-support sums stay <= 1.
template <typename T>
Tensor<T> gaussian_bin_mass(const Tensor<T>& y, const Tensor<T>& mu, const Tensor<T>& sigma) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440084436210);
  Tensor<T> centered = sub(y, mu);
  Tensor<T> hi = div(add_scalar(centered, T(0.5)), sigma);
  Tensor<T> lo = div(add_scalar(centered, T(-0.5)), sigma);
  return mul_scalar(sub(erf(mul_scalar(hi, kInvSqrt2)), erf(mul_scalar(lo, kInvSqrt2))),
                    T(0.5));
}

// Rate-side likelihood: floored so code lengths stay finite.
template <typename T>
Tensor<T> gaussian_likelihood(const Tensor<T>& y, const Tensor<T>& mu, const Tensor<T>& sigma) {
  return max_scalar(gaussian_bin_mass(y, mu, sigma), static_cast<T>(kLikelihoodFloor));
}

// Per-channel logistic prior for the hyper latent; holds the ps-parameters.
template <typename T>
struct FactorizedPrior {
  Tensor<T> loc;        // [C]
  Tensor<T> log_scale;  // [C]

  static FactorizedPrior make(int64_t channels) {
    FactorizedPrior p;
    p.loc = zero_param<T>({channels});
    p.log_scale = zero_param<T>({channels});
    return p;
  }

  // Unit-bin mass under the logistic CDF, unfloored.
  Tensor<T> bin_mass(const Tensor<T>& z) const {
    Tensor<T> locs = broadcast_channels(loc, z.shape());
    Tensor<T> scales = broadcast_channels(exp(log_scale), z.shape());
    Tensor<T> centered = sub(z, locs);
    Tensor<T> hi = div(add_scalar(centered, T(0.5)), scales);
    Tensor<T> lo = div(add_scalar(centered, T(-0.5)), scales);
    return sub(sigmoid(hi), sigmoid(lo));
  }

  Tensor<T> likelihood(const Tensor<T>& z) const {
    return max_scalar(bin_mass(z), static_cast<T>(kLikelihoodFloor));
  }

  // Scalar parameters for table construction.
  double location(int64_t c) const { return static_cast<double>(loc.data()[c]); }
  double scale(int64_t c) const { return std::exp(static_cast<double>(log_scale.data()[c])); }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".loc", loc);
    out.emplace_back(prefix + ".log_scale", log_scale);
  }
};

// ---------------------------------------------------------------------------
// Group parameter networks

template <typename T>
struct GroupParams {
  Tensor<T> mu, sigma;
};

// Two 1x1 linear layers with a GELU between; maps concat(ctx, decoded
// earlier groups) to per-element (mu, sigma) of one group. sigma =
// clamp(softplus(raw), 0.11, 256).
template <typename T>
struct GroupParamNet {
  Linear<T> fc1, fc2;
  int64_t group_size = 0;

  static GroupParamNet make(int64_t ctx_channels, int64_t prev_channels, int64_t group_size,
                            int64_t hidden, Rng& rng) {
    GroupParamNet n;
    n.fc1 = Linear<T>::normal(ctx_channels + prev_channels, hidden, rng);
    n.fc2 = Linear<T>::normal(hidden, 2 * group_size, rng);
    n.group_size = group_size;
    return n;
  }

  GroupParams<T> forward(const Tensor<T>& ctx, const Tensor<T>* decoded_prev) const {
    Tensor<T> in = decoded_prev ? concat<T>({ctx, *decoded_prev}, -1) : ctx;
    Tensor<T> raw = fc2.forward(gelu(fc1.forward(in)));
    auto halves = split_equal(raw, -1, 2);
    Tensor<T> sigma = clamp(softplus(halves[1]), static_cast<T>(kSigmaMin),
                            static_cast<T>(kSigmaMax));
    return {halves[0], sigma};
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// The full bottleneck model: group layout, prior, one net per group.
template <typename T>
struct EntropyModel {
  std::vector<int64_t> groups;
  FactorizedPrior<T> prior;
  std::vector<GroupParamNet<T>> nets;

  static EntropyModel make(const ModelConfig& cfg, Rng& rng) {
    EntropyModel m;
    m.groups = cfg.channel_groups();
    m.prior = FactorizedPrior<T>::make(cfg.hyper_channels);
    const int64_t ctx_channels = 2 * cfg.latent_channels;
    int64_t prev = 0;
    for (int64_t g : m.groups) {
      m.nets.push_back(GroupParamNet<T>::make(ctx_channels, prev, g, ctx_channels, rng));
      prev += g;
    }
    return m;
  }

  // Parameters of group i given the hyper features and exactly the groups
  // before it (empty for i = 0).
  GroupParams<T> group_params(const Tensor<T>& ctx, const Tensor<T>* decoded_prev,
                              size_t i) const {
    if (i >= nets.size()) throw UsageError("group_params: group index out of range");
    if (i == 0 && decoded_prev) throw UsageError("group_params: group 0 takes no history");
    if (i > 0) {
      if (!decoded_prev) throw UsageError("group_params: missing decoded groups");
      int64_t want = 0;
      for (size_t j = 0; j < i; ++j) want += groups[j];
      require_shape(decoded_prev->size(-1) == want,
                    "group_params: decoded history must hold exactly the earlier groups");
    }
    return nets[i].forward(ctx, i == 0 ? nullptr : decoded_prev);
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    prior.collect(out, prefix + ".prior");
    for (size_t i = 0; i < nets.size(); ++i)
      nets[i].collect(out, prefix + ".g" + std::to_string(i));
  }
};

// ---------------------------------------------------------------------------
// Rate

// Total code length in bits: sum of -log2 of every likelihood.
template <typename T>
Tensor<T> rate_bits(const std::vector<Tensor<T>>& likelihoods) {
  constexpr T kNegInvLn2 = T(-1.4426950408889634073599246810);
  if (likelihoods.empty()) throw UsageError("rate_bits: no terms");
  Tensor<T> total;
  for (const auto& p : likelihoods) {
    Tensor<T> bits = sum(log(p));
    total = total.defined() ? add(total, bits) : bits;
  }
  return mul_scalar(total, kNegInvLn2);
}

}  // namespace msnc
