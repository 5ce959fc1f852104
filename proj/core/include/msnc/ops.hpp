#pragma once

// Differentiable tensor operations. Every op computes its value eagerly and
// registers a backward rule on the graph. All reductions run in a fixed
// left-to-right index order and never reassociate, so forward and backward
// results are bitwise reproducible for a given input and thread count has no
// effect on values.

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "msnc/common.hpp"
#include "msnc/tensor.hpp"

namespace msnc {

namespace detail {

// c = a (m x k, row-major) * b (k x n, row-major). ikj order: each c[i][j]
// accumulates over p ascending, independent of vectorization and threading.
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  auto rows = [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* ci = c + i * n;
      std::fill(ci, ci + n, T(0));
      const T* ai = a + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const T apv = ai[p];
        const T* bp = b + p * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += apv * bp[j];
      }
    }
  };
  // Threading splits output rows; each element is still a fixed-order sum.
  if (m * k * n >= (1 << 16)) {
    parallel_for(m, 8, rows);
  } else {
    rows(0, m);
  }
}

template <typename T>
std::vector<T> transpose2d(const T* a, int64_t m, int64_t n) {
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

// c += a*b without zeroing; same fixed ascending-p accumulation as gemm.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  auto rows = [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* ci = c + i * n;
      const T* ai = a + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const T apv = ai[p];
        const T* bp = b + p * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += apv * bp[j];
      }
    }
  };
  if (m * k * n >= (1 << 16)) {
    parallel_for(m, 8, rows);
  } else {
    rows(0, m);
  }
}

// db += a^T * dc for a [m,k] and dc [m,n], without materializing a^T.
// Every db[p][j] accumulates over ascending i regardless of the thread
// partition (threads split the p range, i stays the outer loop).
template <typename T>
void gemm_tn_acc(const T* a, const T* dc, T* db, int64_t m, int64_t k, int64_t n) {
  auto cols = [&](int64_t p0, int64_t p1) {
    for (int64_t i = 0; i < m; ++i) {
      const T* ai = a + i * k;
      const T* di = dc + i * n;
      for (int64_t p = p0; p < p1; ++p) {
        const T apv = ai[p];
        T* dbp = db + p * n;
        for (int64_t j = 0; j < n; ++j) dbp[j] += apv * di[j];
      }
    }
  };
  if (m * k * n >= (1 << 16) && k >= 8) {
    parallel_for(k, 4, cols);
  } else {
    cols(0, k);
  }
}

struct AxisSplit {
  int64_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline int normalize_axis(int axis, int ndim) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw ShapeError("axis out of range");
  return axis;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  auto pa = a.data(), pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + pb[i];
  return detail::make_result<T>("add", a.shape(), std::move(v), {a, b}, [](detail::Node<T>& self) {
    auto& g = *self.grad;
    for (int p = 0; p < 2; ++p) {
      auto& par = *self.parents[p];
      if (!par.requires_grad) continue;
      detail::add_to(par.ensure_grad(), std::span<const T>(g));
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  auto pa = a.data(), pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] - pb[i];
  return detail::make_result<T>("sub", a.shape(), std::move(v), {a, b}, [](detail::Node<T>& self) {
    auto& g = *self.grad;
    if (self.parents[0]->requires_grad) detail::add_to(self.parents[0]->ensure_grad(), std::span<const T>(g));
    if (self.parents[1]->requires_grad) {
      auto& db = self.parents[1]->ensure_grad();
      for (size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  auto pa = a.data(), pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * pb[i];
  auto va = a.node()->value, vb = b.node()->value;
  return detail::make_result<T>("mul", a.shape(), std::move(v), {a, b}, [va, vb](detail::Node<T>& self) {
    auto& g = *self.grad;
    if (self.parents[0]->requires_grad) {
      auto& da = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += g[i] * (*vb)[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& db = self.parents[1]->ensure_grad();
      for (size_t i = 0; i < db.size(); ++i) db[i] += g[i] * (*va)[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "div: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  auto pa = a.data(), pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] / pb[i];
  auto va = a.node()->value, vb = b.node()->value;
  return detail::make_result<T>("div", a.shape(), std::move(v), {a, b}, [va, vb](detail::Node<T>& self) {
    auto& g = *self.grad;
    if (self.parents[0]->requires_grad) {
      auto& da = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += g[i] / (*vb)[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& db = self.parents[1]->ensure_grad();
      for (size_t i = 0; i < db.size(); ++i) {
        T bi = (*vb)[i];
        db[i] -= g[i] * (*va)[i] / (bi * bi);
      }
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> v(a.numel());
  auto pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + c;
  return detail::make_result<T>("add_scalar", a.shape(), std::move(v), {a}, [](detail::Node<T>& self) {
    if (self.parents[0]->requires_grad)
      detail::add_to(self.parents[0]->ensure_grad(), std::span<const T>(*self.grad));
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  std::vector<T> v(a.numel());
  auto pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * c;
  return detail::make_result<T>("mul_scalar", a.shape(), std::move(v), {a}, [c](detail::Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    auto& da = self.parents[0]->ensure_grad();
    auto& g = *self.grad;
    for (size_t i = 0; i < da.size(); ++i) da[i] += g[i] * c;
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

// Broadcast b[C] over the trailing axis of x[..., C].
template <typename T>
Tensor<T> add_channels(const Tensor<T>& x, const Tensor<T>& b) {
  require_shape(b.ndim() == 1 && x.ndim() >= 1 && x.size(-1) == b.size(0),
                "add_channels: " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  const int64_t c = b.size(0);
  const int64_t rows = x.numel() / c;
  std::vector<T> v(x.numel());
  auto px = x.data(), pb = b.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) v[r * c + j] = px[r * c + j] + pb[j];
  return detail::make_result<T>("add_channels", x.shape(), std::move(v), {x, b},
                                [c, rows](detail::Node<T>& self) {
                                  auto& g = *self.grad;
                                  if (self.parents[0]->requires_grad)
                                    detail::add_to(self.parents[0]->ensure_grad(), std::span<const T>(g));
                                  if (self.parents[1]->requires_grad) {
                                    auto& db = self.parents[1]->ensure_grad();
                                    for (int64_t r = 0; r < rows; ++r)
                                      for (int64_t j = 0; j < c; ++j) db[j] += g[r * c + j];
                                  }
                                });
}

// Tile b[C] to an arbitrary [..., C] shape.
template <typename T>
Tensor<T> broadcast_channels(const Tensor<T>& b, const Shape& target) {
  require_shape(b.ndim() == 1 && !target.empty() && target.back() == b.size(0),
                "broadcast_channels: " + shape_str(b.shape()) + " to " + shape_str(target));
  const int64_t c = b.size(0);
  const int64_t rows = numel(target) / c;
  std::vector<T> v(numel(target));
  auto pb = b.data();
  for (int64_t r = 0; r < rows; ++r) std::memcpy(v.data() + r * c, pb.data(), sizeof(T) * c);
  return detail::make_result<T>("broadcast_channels", target, std::move(v), {b},
                                [c, rows](detail::Node<T>& self) {
                                  if (!self.parents[0]->requires_grad) return;
                                  auto& db = self.parents[0]->ensure_grad();
                                  auto& g = *self.grad;
                                  for (int64_t r = 0; r < rows; ++r)
                                    for (int64_t j = 0; j < c; ++j) db[j] += g[r * c + j];
                                });
}

// ---------------------------------------------------------------------------
// Unary maps

namespace detail {

template <typename T, typename FwdF, typename BwdF>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, FwdF fwd, BwdF dfn) {
  std::vector<T> v(a.numel());
  auto pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(pa[i]);
  auto va = a.node()->value;
  return make_result<T>(name, a.shape(), std::move(v), {a}, [va, dfn](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    auto& da = self.parents[0]->ensure_grad();
    auto& g = *self.grad;
    for (size_t i = 0; i < da.size(); ++i) da[i] += g[i] * dfn((*va)[i]);
  });
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  auto pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::exp(pa[i]);
  auto out = detail::make_result<T>("exp", a.shape(), std::move(v), {a}, nullptr);
  auto vy = out.node()->value;  // d exp = exp, reuse the forward value
  if (out.node()->requires_grad) {
    out.node()->backprop = [vy](detail::Node<T>& self) {
      if (!self.parents[0]->requires_grad) return;
      auto& da = self.parents[0]->ensure_grad();
      auto& g = *self.grad;
      for (size_t i = 0; i < da.size(); ++i) da[i] += g[i] * (*vy)[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

template <typename T>
Tensor<T> erf(const Tensor<T>& a) {
  constexpr T kTwoOverSqrtPi = T(1.1283791670955125738961589031);
  return detail::unary_op<T>(
      "erf", a, [](T x) { return std::erf(x); },
      [kTwoOverSqrtPi](T x) { return kTwoOverSqrtPi * std::exp(-x * x); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  auto pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = detail::sigmoid_scalar(pa[i]);
  auto out = detail::make_result<T>("sigmoid", a.shape(), std::move(v), {a}, nullptr);
  auto vy = out.node()->value;
  if (out.node()->requires_grad) {
    out.node()->backprop = [vy](detail::Node<T>& self) {
      if (!self.parents[0]->requires_grad) return;
      auto& da = self.parents[0]->ensure_grad();
      auto& g = *self.grad;
      for (size_t i = 0; i < da.size(); ++i) {
        T s = (*vy)[i];
        da[i] += g[i] * s * (T(1) - s);
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "softplus", a,
      [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x) { return detail::sigmoid_scalar(x); });
}

// Exact-erf GELU: x * Phi(x), evaluated in the tensor's own precision.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440084436210);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267793994605993);
  std::vector<T> v(a.numel());
  auto pa = a.data();
  const size_t n = v.size();
  T* out = v.data();
  const T* in = pa.data();
  parallel_for(static_cast<int64_t>(n), 1 << 15, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i)
      out[i] = in[i] * (T(0.5) * (T(1) + std::erf(in[i] * kInvSqrt2)));
  });
  auto va = a.node()->value;
  return detail::make_result<T>(
      "gelu", a.shape(), std::move(v), {a}, [va, kInvSqrt2, kInvSqrt2Pi](detail::Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& da = self.parents[0]->ensure_grad();
        auto& g = *self.grad;
        const T* x = va->data();
        T* d = da.data();
        const T* gg = g.data();
        parallel_for(static_cast<int64_t>(da.size()), 1 << 15, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) {
            T phi = T(0.5) * (T(1) + std::erf(x[i] * kInvSqrt2));
            d[i] += gg[i] * (phi + x[i] * kInvSqrt2Pi * std::exp(T(-0.5) * x[i] * x[i]));
          }
        });
      });
}

// clamp with subgradient 1 inside [lo, hi] (inclusive), 0 outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary_op<T>(
      "clamp", a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](T x) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> max_scalar(const Tensor<T>& a, T lo) {
  return detail::unary_op<T>(
      "max_scalar", a, [lo](T x) { return std::max(lo, x); },
      [lo](T x) { return x >= lo ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc(0);
  for (T x : a.data()) acc += x;
  return detail::make_result<T>("sum", {}, {acc}, {a}, [](detail::Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    auto& da = self.parents[0]->ensure_grad();
    T g = (*self.grad)[0];
    for (auto& d : da) d += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis) {
  axis = detail::normalize_axis(axis, a.ndim());
  auto sp = detail::split_axis(a.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < a.ndim(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  std::vector<T> v(sp.outer * sp.inner, T(0));
  auto pa = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t l = 0; l < sp.len; ++l) {
      const T* src = pa.data() + (o * sp.len + l) * sp.inner;
      T* dst = v.data() + o * sp.inner;
      for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  return detail::make_result<T>("sum_axis", std::move(out_shape), std::move(v), {a},
                                [sp](detail::Node<T>& self) {
                                  if (!self.parents[0]->requires_grad) return;
                                  auto& da = self.parents[0]->ensure_grad();
                                  auto& g = *self.grad;
                                  for (int64_t o = 0; o < sp.outer; ++o)
                                    for (int64_t l = 0; l < sp.len; ++l) {
                                      T* dst = da.data() + (o * sp.len + l) * sp.inner;
                                      const T* src = g.data() + o * sp.inner;
                                      for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                                    }
                                });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis) {
  axis = detail::normalize_axis(axis, a.ndim());
  return mul_scalar(sum_axis(a, axis), T(1) / static_cast<T>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  // One extent may be -1 (inferred).
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: multiple -1 extents");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[infer] = a.numel() / known;
  require_shape(numel(shape) == a.numel(),
                "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  // Aliases the value buffer; only the view changes.
  Tensor<T> out = Tensor<T>::make_view(std::move(shape), a.node()->value);
  auto n = out.node();
  n->leaf = false;
  n->op = "reshape";
  if (grad_enabled() && a.node()->requires_grad) {
    n->requires_grad = true;
    n->parents = {a.node()};
    n->backprop = [](detail::Node<T>& self) {
      if (!self.parents[0]->requires_grad) return;
      detail::add_to(self.parents[0]->ensure_grad(), std::span<const T>(*self.grad));
    };
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& dims) {
  const int nd = a.ndim();
  require_shape(static_cast<int>(dims.size()) == nd, "permute: rank mismatch");
  std::vector<bool> used(nd, false);
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) {
    int d = dims[i];
    require_shape(d >= 0 && d < nd && !used[d], "permute: invalid axes");
    used[d] = true;
    out_shape[i] = a.shape()[d];
  }
  std::vector<int64_t> in_strides(nd, 1), out_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * a.shape()[i + 1];
  for (int i = nd - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];

  std::vector<T> v(a.numel());
  auto pa = a.data();
  std::vector<int64_t> idx(nd, 0);
  for (int64_t flat = 0; flat < a.numel(); ++flat) {
    int64_t rem = flat;
    int64_t src = 0;
    for (int i = 0; i < nd; ++i) {
      int64_t q = rem / out_strides[i];
      rem -= q * out_strides[i];
      src += q * in_strides[dims[i]];
    }
    v[flat] = pa[src];
  }
  auto dims_copy = dims;
  return detail::make_result<T>(
      "permute", std::move(out_shape), std::move(v), {a},
      [dims_copy, in_strides, out_strides, nd](detail::Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& da = self.parents[0]->ensure_grad();
        auto& g = *self.grad;
        for (int64_t flat = 0; flat < static_cast<int64_t>(g.size()); ++flat) {
          int64_t rem = flat;
          int64_t src = 0;
          for (int i = 0; i < nd; ++i) {
            int64_t q = rem / out_strides[i];
            rem -= q * out_strides[i];
            src += q * in_strides[dims_copy[i]];
          }
          da[src] += g[flat];
        }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  axis = detail::normalize_axis(axis, parts[0].ndim());
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require_shape(s.size() == out_shape.size(), "concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      require_shape(static_cast<int>(i) == axis || s[i] == out_shape[i], "concat: extent mismatch");
    total += s[axis];
  }
  out_shape[axis] = total;
  auto sp = detail::split_axis(out_shape, axis);
  std::vector<T> v(numel(out_shape));
  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t len = p.shape()[axis];
    lens.push_back(len);
    auto pd = p.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      std::memcpy(v.data() + (o * total + off) * sp.inner, pd.data() + o * len * sp.inner,
                  sizeof(T) * len * sp.inner);
    off += len;
  }
  return detail::make_result<T>("concat", std::move(out_shape), std::move(v), parts,
                                [sp, lens, total](detail::Node<T>& self) {
                                  auto& g = *self.grad;
                                  int64_t off2 = 0;
                                  for (size_t p = 0; p < lens.size(); ++p) {
                                    auto& par = *self.parents[p];
                                    int64_t len = lens[p];
                                    if (par.requires_grad) {
                                      auto& d = par.ensure_grad();
                                      for (int64_t o = 0; o < sp.outer; ++o) {
                                        const T* src = g.data() + (o * total + off2) * sp.inner;
                                        T* dst = d.data() + o * len * sp.inner;
                                        for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                                      }
                                    }
                                    off2 += len;
                                  }
                                });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, int axis, const std::vector<int64_t>& sizes) {
  axis = detail::normalize_axis(axis, a.ndim());
  int64_t total = 0;
  for (int64_t s : sizes) total += s;
  require_shape(total == a.shape()[axis], "split: sizes do not cover axis");
  auto sp = detail::split_axis(a.shape(), axis);
  auto pa = a.data();
  std::vector<Tensor<T>> outs;
  int64_t off = 0;
  for (int64_t len : sizes) {
    Shape os = a.shape();
    os[axis] = len;
    std::vector<T> v(numel(os));
    for (int64_t o = 0; o < sp.outer; ++o)
      std::memcpy(v.data() + o * len * sp.inner, pa.data() + (o * sp.len + off) * sp.inner,
                  sizeof(T) * len * sp.inner);
    int64_t off_copy = off;
    outs.push_back(detail::make_result<T>(
        "split", std::move(os), std::move(v), {a}, [sp, len, off_copy](detail::Node<T>& self) {
          if (!self.parents[0]->requires_grad) return;
          auto& da = self.parents[0]->ensure_grad();
          auto& g = *self.grad;
          for (int64_t o = 0; o < sp.outer; ++o) {
            T* dst = da.data() + (o * sp.len + off_copy) * sp.inner;
            const T* src = g.data() + o * len * sp.inner;
            for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
          }
        }));
    off += len;
  }
  return outs;
}

template <typename T>
std::vector<Tensor<T>> split_equal(const Tensor<T>& a, int axis, int parts) {
  axis = detail::normalize_axis(axis, a.ndim());
  require_shape(a.shape()[axis] % parts == 0, "split_equal: axis not divisible");
  return split(a, axis, std::vector<int64_t>(parts, a.shape()[axis] / parts));
}

// Gather along an axis; backward scatter-adds, so the sum of scattered
// gradients equals the sum of incoming gradients exactly.
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, int axis, const std::vector<int64_t>& indices) {
  axis = detail::normalize_axis(axis, a.ndim());
  auto sp = detail::split_axis(a.shape(), axis);
  for (int64_t ix : indices)
    require_shape(ix >= 0 && ix < sp.len, "index_select: index out of range");
  Shape os = a.shape();
  os[axis] = static_cast<int64_t>(indices.size());
  std::vector<T> v(numel(os));
  auto pa = a.data();
  const int64_t olen = static_cast<int64_t>(indices.size());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t j = 0; j < olen; ++j)
      std::memcpy(v.data() + (o * olen + j) * sp.inner,
                  pa.data() + (o * sp.len + indices[j]) * sp.inner, sizeof(T) * sp.inner);
  auto idx = indices;
  return detail::make_result<T>("index_select", std::move(os), std::move(v), {a},
                                [sp, idx, olen](detail::Node<T>& self) {
                                  if (!self.parents[0]->requires_grad) return;
                                  auto& da = self.parents[0]->ensure_grad();
                                  auto& g = *self.grad;
                                  for (int64_t o = 0; o < sp.outer; ++o)
                                    for (int64_t j = 0; j < olen; ++j) {
                                      T* dst = da.data() + (o * sp.len + idx[j]) * sp.inner;
                                      const T* src = g.data() + (o * olen + j) * sp.inner;
                                      for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                                    }
                                });
}

// ---------------------------------------------------------------------------
// Spatial rearrangement on [H, W, C] maps

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x) {
  require_shape(x.ndim() == 3, "space_to_depth: want [H,W,C]");
  const int64_t h = x.size(0), w = x.size(1), c = x.size(2);
  require_shape(h % 2 == 0 && w % 2 == 0, "space_to_depth: odd extents " + shape_str(x.shape()));
  Shape os{h / 2, w / 2, 4 * c};
  std::vector<T> v(numel(os));
  auto px = x.data();
  for (int64_t i = 0; i < h / 2; ++i)
    for (int64_t j = 0; j < w / 2; ++j)
      for (int64_t dy = 0; dy < 2; ++dy)
        for (int64_t dx = 0; dx < 2; ++dx)
          std::memcpy(v.data() + ((i * (w / 2) + j) * 4 + dy * 2 + dx) * c,
                      px.data() + ((2 * i + dy) * w + 2 * j + dx) * c, sizeof(T) * c);
  return detail::make_result<T>("space_to_depth", std::move(os), std::move(v), {x},
                                [h, w, c](detail::Node<T>& self) {
                                  if (!self.parents[0]->requires_grad) return;
                                  auto& da = self.parents[0]->ensure_grad();
                                  auto& g = *self.grad;
                                  for (int64_t i = 0; i < h / 2; ++i)
                                    for (int64_t j = 0; j < w / 2; ++j)
                                      for (int64_t dy = 0; dy < 2; ++dy)
                                        for (int64_t dx = 0; dx < 2; ++dx) {
                                          const T* src = g.data() + ((i * (w / 2) + j) * 4 + dy * 2 + dx) * c;
                                          T* dst = da.data() + ((2 * i + dy) * w + 2 * j + dx) * c;
                                          for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
                                        }
                                });
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x) {
  require_shape(x.ndim() == 3 && x.size(2) % 4 == 0, "depth_to_space: want [H,W,4C]");
  const int64_t h = x.size(0), w = x.size(1), c = x.size(2) / 4;
  Shape os{2 * h, 2 * w, c};
  std::vector<T> v(numel(os));
  auto px = x.data();
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t dy = 0; dy < 2; ++dy)
        for (int64_t dx = 0; dx < 2; ++dx)
          std::memcpy(v.data() + ((2 * i + dy) * 2 * w + 2 * j + dx) * c,
                      px.data() + ((i * w + j) * 4 + dy * 2 + dx) * c, sizeof(T) * c);
  return detail::make_result<T>("depth_to_space", std::move(os), std::move(v), {x},
                                [h, w, c](detail::Node<T>& self) {
                                  if (!self.parents[0]->requires_grad) return;
                                  auto& da = self.parents[0]->ensure_grad();
                                  auto& g = *self.grad;
                                  for (int64_t i = 0; i < h; ++i)
                                    for (int64_t j = 0; j < w; ++j)
                                      for (int64_t dy = 0; dy < 2; ++dy)
                                        for (int64_t dx = 0; dx < 2; ++dx) {
                                          const T* src = g.data() + ((2 * i + dy) * 2 * w + 2 * j + dx) * c;
                                          T* dst = da.data() + ((i * w + j) * 4 + dy * 2 + dx) * c;
                                          for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
                                        }
                                });
}

// [B..., m, n] -> [B..., n, m]; cheaper than the generic permute for the
// attention score transposes.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  require_shape(a.ndim() >= 2, "transpose_last2: rank must be >= 2");
  const int64_t m = a.size(-2), n = a.size(-1);
  const int64_t batch = a.numel() / (m * n);
  Shape os = a.shape();
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  std::vector<T> v(a.numel());
  auto pa = a.data();
  for (int64_t b = 0; b < batch; ++b) {
    const T* src = pa.data() + b * m * n;
    T* dst = v.data() + b * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return detail::make_result<T>("transpose_last2", std::move(os), std::move(v), {a},
                                [m, n, batch](detail::Node<T>& self) {
                                  if (!self.parents[0]->requires_grad) return;
                                  auto& da = self.parents[0]->ensure_grad();
                                  auto& g = *self.grad;
                                  for (int64_t b = 0; b < batch; ++b) {
                                    const T* src = g.data() + b * m * n;
                                    T* dst = da.data() + b * m * n;
                                    for (int64_t j = 0; j < n; ++j)
                                      for (int64_t i = 0; i < m; ++i)
                                        dst[i * n + j] += src[j * m + i];
                                  }
                                });
}

// Toroidal roll: out[r][c] = in[(r - sh) mod H][(c - sw) mod W]. The inverse
// is a shift by (H - sh, W - sw).
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, int64_t sh, int64_t sw) {
  require_shape(x.ndim() == 3, "cyclic_shift: want [H,W,C]");
  const int64_t h = x.size(0), w = x.size(1), c = x.size(2);
  sh = ((sh % h) + h) % h;
  sw = ((sw % w) + w) % w;
  std::vector<T> v(x.numel());
  auto px = x.data();
  for (int64_t r = 0; r < h; ++r) {
    int64_t sr = (r - sh + h) % h;
    for (int64_t col = 0; col < w; ++col) {
      int64_t sc = (col - sw + w) % w;
      std::memcpy(v.data() + (r * w + col) * c, px.data() + (sr * w + sc) * c, sizeof(T) * c);
    }
  }
  return detail::make_result<T>("cyclic_shift", x.shape(), std::move(v), {x},
                                [h, w, c, sh, sw](detail::Node<T>& self) {
                                  if (!self.parents[0]->requires_grad) return;
                                  auto& da = self.parents[0]->ensure_grad();
                                  auto& g = *self.grad;
                                  for (int64_t r = 0; r < h; ++r) {
                                    int64_t sr = (r - sh + h) % h;
                                    for (int64_t col = 0; col < w; ++col) {
                                      int64_t sc = (col - sw + w) % w;
                                      T* dst = da.data() + (sr * w + sc) * c;
                                      const T* src = g.data() + (r * w + col) * c;
                                      for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
                                    }
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Normalization and attention math

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = detail::normalize_axis(axis, x.ndim());
  auto sp = detail::split_axis(x.shape(), axis);
  const int64_t lane_grain = std::max<int64_t>(1, (1 << 15) / std::max<int64_t>(1, sp.len * sp.inner));
  std::vector<T> v(x.numel());
  auto px = x.data();
  parallel_for(sp.outer, lane_grain, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        const int64_t base = o * sp.len * sp.inner + i;
        T mx = px[base];
        for (int64_t l = 1; l < sp.len; ++l) mx = std::max(mx, px[base + l * sp.inner]);
        T denom(0);
        for (int64_t l = 0; l < sp.len; ++l) {
          T e = std::exp(px[base + l * sp.inner] - mx);
          v[base + l * sp.inner] = e;
          denom += e;
        }
        T inv = T(1) / denom;
        for (int64_t l = 0; l < sp.len; ++l) v[base + l * sp.inner] *= inv;
      }
  });
  auto out = detail::make_result<T>("softmax", x.shape(), std::move(v), {x}, nullptr);
  auto vy = out.node()->value;
  if (out.node()->requires_grad) {
    out.node()->backprop = [sp, vy, lane_grain](detail::Node<T>& self) {
      if (!self.parents[0]->requires_grad) return;
      auto& da = self.parents[0]->ensure_grad();
      auto& g = *self.grad;
      auto& y = *vy;
      parallel_for(sp.outer, lane_grain, [&](int64_t o0, int64_t o1) {
        for (int64_t o = o0; o < o1; ++o)
          for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.len * sp.inner + i;
            T dot(0);
            for (int64_t l = 0; l < sp.len; ++l)
              dot += g[base + l * sp.inner] * y[base + l * sp.inner];
            for (int64_t l = 0; l < sp.len; ++l) {
              int64_t k = base + l * sp.inner;
              da[k] += y[k] * (g[k] - dot);
            }
          }
      });
    };
  }
  return out;
}

// Per-token normalization over the trailing axis, then affine. eps = 1e-6
// under the variance keeps the zero-variance token well defined.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6)) {
  const int64_t c = x.size(-1);
  require_shape(gamma.ndim() == 1 && gamma.size(0) == c && beta.ndim() == 1 && beta.size(0) == c,
                "layer_norm: affine params must be [C]");
  const int64_t rows = x.numel() / c;
  const int64_t row_grain = std::max<int64_t>(1, (1 << 15) / std::max<int64_t>(1, c));
  std::vector<T> v(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  auto px = x.data(), pg = gamma.data(), pb = beta.data();
  parallel_for(rows, row_grain, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const T* xr = px.data() + r * c;
      T mu(0);
      for (int64_t j = 0; j < c; ++j) mu += xr[j];
      mu /= static_cast<T>(c);
      T var(0);
      for (int64_t j = 0; j < c; ++j) {
        T d = xr[j] - mu;
        var += d * d;
      }
      var /= static_cast<T>(c);
      T inv = T(1) / std::sqrt(var + eps);
      (*inv_std)[r] = inv;
      for (int64_t j = 0; j < c; ++j) {
        T xh = (xr[j] - mu) * inv;
        (*xhat)[r * c + j] = xh;
        v[r * c + j] = pg[j] * xh + pb[j];
      }
    }
  });
  auto vg = gamma.node()->value;
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(v), {x, gamma, beta},
      [rows, c, xhat, inv_std, vg](detail::Node<T>& self) {
        auto& g = *self.grad;
        auto& xh = *xhat;
        if (self.parents[1]->requires_grad) {
          auto& dg = self.parents[1]->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) dg[j] += g[r * c + j] * xh[r * c + j];
        }
        if (self.parents[2]->requires_grad) {
          auto& db = self.parents[2]->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) db[j] += g[r * c + j];
        }
        if (self.parents[0]->requires_grad) {
          auto& dx = self.parents[0]->ensure_grad();
          auto& gamma_v = *vg;
          for (int64_t r = 0; r < rows; ++r) {
            T mean_dxh(0), mean_dxh_xh(0);
            for (int64_t j = 0; j < c; ++j) {
              T dxh = g[r * c + j] * gamma_v[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[r * c + j];
            }
            mean_dxh /= static_cast<T>(c);
            mean_dxh_xh /= static_cast<T>(c);
            T inv = (*inv_std)[r];
            for (int64_t j = 0; j < c; ++j) {
              T dxh = g[r * c + j] * gamma_v[j];
              dx[r * c + j] += inv * (dxh - mean_dxh - xh[r * c + j] * mean_dxh_xh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Matrix multiplication

// Supported forms:
//   [m,k] x [k,n]                 -> [m,n]
//   [B...,m,k] x [k,n]            -> [B...,m,n]   (shared right operand)
//   [B...,m,k] x [B...,k,n]       -> [B...,m,n]   (matching batch extents)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.ndim() >= 2 && b.ndim() >= 2, "matmul: rank must be >= 2");
  const int64_t m = a.size(-2), k = a.size(-1);
  const int64_t kb = b.size(-2), n = b.size(-1);
  require_shape(k == kb, "matmul: inner extents " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  const bool shared_b = (b.ndim() == 2);
  int64_t batch = 1;
  if (!shared_b) {
    require_shape(a.ndim() == b.ndim(), "matmul: rank mismatch for batched form");
    for (int i = 0; i < a.ndim() - 2; ++i)
      require_shape(a.shape()[i] == b.shape()[i], "matmul: batch extents differ");
  }
  for (int i = 0; i < a.ndim() - 2; ++i) batch *= a.shape()[i];

  Shape os(a.shape().begin(), a.shape().end() - 1);
  os.push_back(n);
  std::vector<T> v(numel(os));
  auto pa = a.data(), pb = b.data();
  if (shared_b) {
    detail::gemm(pa.data(), pb.data(), v.data(), batch * m, k, n);
  } else {
    parallel_for(batch, 1, [&](int64_t b0, int64_t b1) {
      for (int64_t i = b0; i < b1; ++i)
        detail::gemm(pa.data() + i * m * k, pb.data() + i * k * n, v.data() + i * m * n, m, k, n);
    });
  }
  auto va = a.node()->value, vb = b.node()->value;
  return detail::make_result<T>(
      "matmul", std::move(os), std::move(v), {a, b},
      [m, k, n, batch, shared_b, va, vb](detail::Node<T>& self) {
        auto& g = *self.grad;
        if (self.parents[0]->requires_grad) {
          // dA += dC * B^T; B transposed once so the kernel stays axpy-form.
          auto& da = self.parents[0]->ensure_grad();
          if (shared_b) {
            auto bt = detail::transpose2d(vb->data(), k, n);
            detail::gemm_acc(g.data(), bt.data(), da.data(), batch * m, n, k);
          } else {
            parallel_for(batch, 1, [&](int64_t b0, int64_t b1) {
              for (int64_t i = b0; i < b1; ++i) {
                auto bt = detail::transpose2d(vb->data() + i * k * n, k, n);
                detail::gemm_acc(g.data() + i * m * n, bt.data(), da.data() + i * m * k, m, n,
                                 k);
              }
            });
          }
        }
        if (self.parents[1]->requires_grad) {
          // dB += A^T * dC, transpose-free.
          auto& db = self.parents[1]->ensure_grad();
          if (shared_b) {
            detail::gemm_tn_acc(va->data(), g.data(), db.data(), batch * m, k, n);
          } else {
            parallel_for(batch, 1, [&](int64_t b0, int64_t b1) {
              for (int64_t i = b0; i < b1; ++i)
                detail::gemm_tn_acc(va->data() + i * m * k, g.data() + i * m * n,
                                    db.data() + i * k * n, m, k, n);
            });
          }
        }
      });
}

// MSE over all elements; the distortion workhorse.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  auto d = sub(a, b);
  return mean(mul(d, d));
}

}  // namespace msnc
