#pragma once

// Small trainable building blocks shared by the main and hyper transforms.

#include <string>
#include <utility>
#include <vector>

#include "msnc/ops.hpp"
#include "msnc/rng.hpp"
#include "msnc/tensor.hpp"

namespace msnc {

// Named parameter registry; the order of registration is the module layout,
// serialization sorts by name.
template <typename T>
using ParamMap = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
Tensor<T> zero_param(Shape shape) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> normal_param(Shape shape, Rng& rng, double sigma) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  auto d = t.mutable_data();
  for (auto& v : d) v = static_cast<T>(rng.truncated_normal(sigma));
  t.set_requires_grad(true);
  return t;
}

constexpr double kInitSigma = 0.02;

template <typename T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out], undefined when bias-free

  static Linear normal(int64_t in, int64_t out, Rng& rng, bool bias = true) {
    Linear l;
    l.w = normal_param<T>({in, out}, rng, kInitSigma);
    if (bias) l.b = zero_param<T>({out});
    return l;
  }
  // Truncated normal at 1/sqrt(fan_in); preserves input magnitude.
  static Linear scaled_normal(int64_t in, int64_t out, Rng& rng, bool bias = true) {
    Linear l;
    l.w = normal_param<T>({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    if (bias) l.b = zero_param<T>({out});
    return l;
  }
  // Zero-initialized projection; the whole layer starts as zero output.
  static Linear zero(int64_t in, int64_t out, bool bias = true) {
    Linear l;
    l.w = zero_param<T>({in, out});
    if (bias) l.b = zero_param<T>({out});
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = matmul(x, w);
    return b.defined() ? add_channels(y, b) : y;
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    if (b.defined()) out.emplace_back(prefix + ".b", b);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  static LayerNormParams make(int64_t c) {
    LayerNormParams n;
    n.gamma = Tensor<T>::full({c}, T(1));
    n.gamma.set_requires_grad(true);
    n.beta = Tensor<T>::zeros({c});
    n.beta.set_requires_grad(true);
    return n;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

// linear(C -> ratio*C), GELU, linear(ratio*C -> C); the output projection is
// zero-initialized so a fresh block contributes nothing to its residual path.
template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  static Mlp make(int64_t c, int64_t ratio, Rng& rng) {
    Mlp m;
    m.fc1 = Linear<T>::normal(c, ratio * c, rng);
    m.fc2 = Linear<T>::zero(ratio * c, c);
    return m;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return fc2.forward(gelu(fc1.forward(x))); }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

}  // namespace msnc
