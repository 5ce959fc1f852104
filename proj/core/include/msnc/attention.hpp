#pragma once

// Window self-attention and its two extensions: inter-window token
// aggregation (each window attends to the full token sets of its top-k most
// similar windows) and randomly shifted window partitions (shift sizes drawn
// from a categorical law so the stack cannot specialize to one grid offset).
//
// All attention here uses torus semantics: shifted partitions wrap around,
// no boundary masks, no positional encodings. That makes every block commute
// exactly with cyclic shifts by multiples of the window size, and the
// shifted pair commute with arbitrary cyclic shifts when the shift draws are
// synchronized.

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "msnc/layers.hpp"
#include "msnc/ops.hpp"
#include "msnc/rng.hpp"
#include "msnc/tensor.hpp"

namespace msnc {

// ---------------------------------------------------------------------------
// Shift law

enum class ShiftPreset {
  kPeaked,     // mass 0.5 on window/2, remaining 0.5 uniform over the rest
  kUniform,    // uniform over {1..window-1} (ablation)
  kPointMass,  // all mass on window/2 (fixed Swin-style shifting)
};

inline const char* shift_preset_name(ShiftPreset p) {
  switch (p) {
    case ShiftPreset::kPeaked: return "peaked";
    case ShiftPreset::kUniform: return "uniform";
    case ShiftPreset::kPointMass: return "point";
  }
  return "?";
}

// Categorical law over shift sizes {1..window-1}.
class ShiftDistribution {
 public:
  ShiftDistribution(int window, std::vector<double> masses)
      : window_(window), masses_(std::move(masses)) {
    if (window_ < 2 || static_cast<int>(masses_.size()) != window_ - 1)
      throw ShapeError("ShiftDistribution: support must be {1..window-1}");
    double total = 0;
    for (double m : masses_) {
      if (m < 0) throw UsageError("ShiftDistribution: negative mass");
      total += m;
    }
    if (std::fabs(total - 1.0) > 1e-12)
      throw UsageError("ShiftDistribution: masses must sum to 1");
  }

  static ShiftDistribution uniform(int window) {
    return ShiftDistribution(window, std::vector<double>(window - 1, 1.0 / (window - 1)));
  }

  static ShiftDistribution point_mass(int window, int value) {
    std::vector<double> m(window - 1, 0.0);
    if (value < 1 || value >= window) throw UsageError("point_mass: value outside support");
    m[value - 1] = 1.0;
    return ShiftDistribution(window, std::move(m));
  }

  // Half mass on window/2, the rest spread over the remaining sizes.
  static ShiftDistribution peaked(int window) {
    int peak = std::max(1, window / 2);
    if (window == 2) return point_mass(window, 1);
    std::vector<double> m(window - 1, 0.5 / (window - 2));
    m[peak - 1] = 0.5;
    return ShiftDistribution(window, std::move(m));
  }

  static ShiftDistribution from_preset(ShiftPreset p, int window) {
    switch (p) {
      case ShiftPreset::kUniform: return uniform(window);
      case ShiftPreset::kPointMass: return point_mass(window, std::max(1, window / 2));
      case ShiftPreset::kPeaked: return peaked(window);
    }
    throw UsageError("unknown shift preset");
  }

  int window() const { return window_; }
  const std::vector<double>& masses() const { return masses_; }

  // Inverse-CDF draw over {1..window-1}.
  int sample(Rng& rng) const {
    double u = rng.uniform();
    double acc = 0;
    for (int s = 1; s < window_; ++s) {
      acc += masses_[s - 1];
      if (u < acc) return s;
    }
    return window_ - 1;
  }

  // Deterministic shift used at evaluation/compression time: the largest
  // mass, ties to the smallest size.
  int mode() const {
    int best = 1;
    for (int s = 2; s < window_; ++s)
      if (masses_[s - 1] > masses_[best - 1]) best = s;
    return best;
  }

 private:
  int window_;
  std::vector<double> masses_;
};

// Source of per-layer (s_h, s_w) draws. Encoder and decoder must use the
// same sampler state; training pulls from a per-step seed-derived stream.
class ShiftSampler {
 public:
  virtual ~ShiftSampler() = default;
  virtual std::pair<int, int> next(const ShiftDistribution& d) = 0;
};

class RandomShiftSampler final : public ShiftSampler {
 public:
  explicit RandomShiftSampler(Rng rng) : rng_(rng) {}
  std::pair<int, int> next(const ShiftDistribution& d) override {
    int sh = d.sample(rng_);
    int sw = d.sample(rng_);
    return {sh, sw};
  }

 private:
  Rng rng_;
};

class ModeShiftSampler final : public ShiftSampler {
 public:
  std::pair<int, int> next(const ShiftDistribution& d) override {
    int m = d.mode();
    return {m, m};
  }
};

// Replays an explicit list of draws; for synchronized-shift tests.
class FixedShiftSampler final : public ShiftSampler {
 public:
  explicit FixedShiftSampler(std::vector<std::pair<int, int>> draws)
      : draws_(std::move(draws)) {}
  std::pair<int, int> next(const ShiftDistribution&) override {
    if (draws_.empty()) throw UsageError("FixedShiftSampler: out of draws");
    auto d = draws_[pos_ % draws_.size()];
    ++pos_;
    return d;
  }

 private:
  std::vector<std::pair<int, int>> draws_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Attention parameters

template <typename T>
struct AttentionParams {
  int heads = 1;
  Tensor<T> wq, wk, wv;                       // [C, C]
  std::vector<Tensor<T>> wq_head, wk_head, wv_head;  // each [C, C/heads]
  Tensor<T> wh;                               // [C, C], zero-initialized

  int64_t channels() const { return wq.size(0); }
  int64_t head_dim() const { return channels() / heads; }

  static AttentionParams make(int64_t c, int n_heads, Rng& rng) {
    if (c % n_heads != 0) throw ShapeError("attention: C must divide by head count");
    AttentionParams p;
    p.heads = n_heads;
    p.wq = normal_param<T>({c, c}, rng, kInitSigma);
    p.wk = normal_param<T>({c, c}, rng, kInitSigma);
    p.wv = normal_param<T>({c, c}, rng, kInitSigma);
    int64_t hd = c / n_heads;
    for (int h = 0; h < n_heads; ++h) {
      p.wq_head.push_back(normal_param<T>({c, hd}, rng, kInitSigma));
      p.wk_head.push_back(normal_param<T>({c, hd}, rng, kInitSigma));
      p.wv_head.push_back(normal_param<T>({c, hd}, rng, kInitSigma));
    }
    p.wh = zero_param<T>({c, c});
    return p;
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    for (int h = 0; h < heads; ++h) {
      std::string tag = prefix + ".h" + std::to_string(h);
      out.emplace_back(tag + ".wq", wq_head[h]);
      out.emplace_back(tag + ".wk", wk_head[h]);
      out.emplace_back(tag + ".wv", wv_head[h]);
    }
    out.emplace_back(prefix + ".wh", wh);
  }
};

// ---------------------------------------------------------------------------
// Window bookkeeping

// [H,W,C] -> [HW/window^2, window^2, C]; windows in row-major grid order,
// tokens row-major inside each window. Each (window row x C) slab is
// contiguous on both sides, so the op is a strided block copy.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int64_t window) {
  require_shape(x.ndim() == 3, "window_partition: want [H,W,C]");
  const int64_t h = x.size(0), w = x.size(1), c = x.size(2);
  require_shape(window >= 1 && h % window == 0 && w % window == 0,
                "window_partition: window " + std::to_string(window) + " must divide " +
                    shape_str(x.shape()));
  const int64_t gh = h / window, gw = w / window;
  const int64_t slab = window * c;
  std::vector<T> v(x.numel());
  auto px = x.data();
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx)
      for (int64_t ty = 0; ty < window; ++ty)
        std::memcpy(v.data() + ((gy * gw + gx) * window + ty) * slab,
                    px.data() + ((gy * window + ty) * w + gx * window) * c, sizeof(T) * slab);
  return detail::make_result<T>(
      "window_partition", {gh * gw, window * window, c}, std::move(v), {x},
      [h, w, c, window, gh, gw, slab](detail::Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& da = self.parents[0]->ensure_grad();
        auto& g = *self.grad;
        (void)h;
        for (int64_t gy = 0; gy < gh; ++gy)
          for (int64_t gx = 0; gx < gw; ++gx)
            for (int64_t ty = 0; ty < window; ++ty) {
              const T* src = g.data() + ((gy * gw + gx) * window + ty) * slab;
              T* dst = da.data() + ((gy * window + ty) * w + gx * window) * c;
              for (int64_t i = 0; i < slab; ++i) dst[i] += src[i];
            }
      });
}

// Exact inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& wins, int64_t h, int64_t w) {
  require_shape(wins.ndim() == 3, "window_reverse: want [nW, win^2, C]");
  const int64_t c = wins.size(2);
  const int64_t win2 = wins.size(1);
  const auto window = static_cast<int64_t>(std::llround(std::sqrt(double(win2))));
  require_shape(window * window == win2, "window_reverse: token axis not square");
  require_shape(wins.size(0) * win2 == h * w, "window_reverse: extent mismatch");
  const int64_t gh = h / window, gw = w / window;
  const int64_t slab = window * c;
  std::vector<T> v(wins.numel());
  auto pw = wins.data();
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx)
      for (int64_t ty = 0; ty < window; ++ty)
        std::memcpy(v.data() + ((gy * window + ty) * w + gx * window) * c,
                    pw.data() + ((gy * gw + gx) * window + ty) * slab, sizeof(T) * slab);
  return detail::make_result<T>(
      "window_reverse", {h, w, c}, std::move(v), {wins},
      [w, c, window, gh, gw, slab](detail::Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& da = self.parents[0]->ensure_grad();
        auto& g = *self.grad;
        for (int64_t gy = 0; gy < gh; ++gy)
          for (int64_t gx = 0; gx < gw; ++gx)
            for (int64_t ty = 0; ty < window; ++ty) {
              const T* src = g.data() + ((gy * window + ty) * w + gx * window) * c;
              T* dst = da.data() + ((gy * gw + gx) * window + ty) * slab;
              for (int64_t i = 0; i < slab; ++i) dst[i] += src[i];
            }
      });
}

namespace detail {

// Shared multi-head attention core. q: [B, Nq, C] tokens already passed
// through the full-C query projection; kv: [B, Nk, C] likewise. Heads are
// projected, attended with 1/sqrt(C/heads) scaling, concatenated, and passed
// through the output projection. The per-head projections run as one packed
// matmul (column blocks are independent, so results match head-by-head
// projection bit for bit).
template <typename T>
Tensor<T> multi_head_attend(const Tensor<T>& q_full, const Tensor<T>& k_full,
                            const Tensor<T>& v_full, const AttentionParams<T>& p) {
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.head_dim())));
  std::vector<Tensor<T>> qh, kh, vh;
  if (p.heads == 1) {
    qh = {matmul(q_full, p.wq_head[0])};
    kh = {matmul(k_full, p.wk_head[0])};
    vh = {matmul(v_full, p.wv_head[0])};
  } else {
    qh = split_equal(matmul(q_full, concat(p.wq_head, 1)), -1, p.heads);
    kh = split_equal(matmul(k_full, concat(p.wk_head, 1)), -1, p.heads);
    vh = split_equal(matmul(v_full, concat(p.wv_head, 1)), -1, p.heads);
  }
  std::vector<Tensor<T>> heads;
  heads.reserve(p.heads);
  for (int h = 0; h < p.heads; ++h) {
    Tensor<T> scores = mul_scalar(matmul(qh[h], transpose_last2(kh[h])), scale);
    heads.push_back(matmul(softmax(scores, -1), vh[h]));
  }
  Tensor<T> cat = p.heads == 1 ? heads[0] : concat(heads, -1);
  return matmul(cat, p.wh);
}

}  // namespace detail

// Plain multi-head self-attention over one token set [N, C].
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p) {
  require_shape(x.ndim() == 2 && x.size(1) == p.channels(),
                "mhsa: want [N,C] matching params");
  Tensor<T> b = reshape(x, {1, x.size(0), x.size(1)});
  Tensor<T> q = matmul(b, p.wq);
  Tensor<T> k = matmul(b, p.wk);
  Tensor<T> v = matmul(b, p.wv);
  Tensor<T> out = detail::multi_head_attend(q, k, v, p);
  return reshape(out, {x.size(0), x.size(1)});
}

// Window-partitioned self-attention on a [H,W,C] map.
template <typename T>
Tensor<T> window_mhsa(const Tensor<T>& x, const AttentionParams<T>& p, int64_t window) {
  const int64_t h = x.size(0), w = x.size(1);
  Tensor<T> wins = window_partition(x, window);  // [nW, win^2, C]
  Tensor<T> q = matmul(wins, p.wq);
  Tensor<T> k = matmul(wins, p.wk);
  Tensor<T> v = matmul(wins, p.wv);
  Tensor<T> out = detail::multi_head_attend(q, k, v, p);
  return window_reverse(out, h, w);
}

// Per-window candidates: the arithmetic mean of the projected query/key
// tokens, [nW, win^2, C] -> [nW, C] each.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> window_candidates(const Tensor<T>& q, const Tensor<T>& k) {
  return {mean_axis(q, 1), mean_axis(k, 1)};
}

// Dot-product similarity between candidates; no scaling, no softmax.
template <typename T>
Tensor<T> resemblance(const Tensor<T>& q_cand, const Tensor<T>& k_cand) {
  require_shape(q_cand.ndim() == 2 && k_cand.ndim() == 2 && q_cand.size(1) == k_cand.size(1),
                "resemblance: want [nW, C] candidates");
  return matmul(q_cand, permute(k_cand, {1, 0}));
}

// Per row, the indices of the k largest entries, sorted by descending value;
// ties broken by ascending window index. Returned row-major [nW, k].
template <typename T>
std::vector<int64_t> topk_windows(const Tensor<T>& r, int64_t k) {
  require_shape(r.ndim() == 2 && r.size(0) == r.size(1), "topk_windows: want square matrix");
  const int64_t n = r.size(0);
  if (k < 1 || k > n) throw UsageError("topk_windows: k out of range");
  auto pr = r.data();
  std::vector<int64_t> out(static_cast<size_t>(n * k));
  std::vector<int64_t> order(n);
  for (int64_t row = 0; row < n; ++row) {
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      T va = pr[row * n + a], vb = pr[row * n + b];
      if (va != vb) return va > vb;
      return a < b;
    });
    for (int64_t j = 0; j < k; ++j) out[row * k + j] = order[j];
  }
  return out;
}

// Inter-window token-aggregated attention. The candidate/resemblance path
// runs on the already-projected full-C Q and K; selection is hard (gradients
// flow through the gathered keys/values, not through the index choice).
// forced_selection, when given, overrides the top-k indices (row-major
// [nW, k]); tests use it to force global or self-only attention.
template <typename T>
Tensor<T> token_aggregated_attention(const Tensor<T>& x, const AttentionParams<T>& p,
                                     int64_t window, int64_t k,
                                     const std::vector<int64_t>* forced_selection = nullptr) {
  const int64_t h = x.size(0), w = x.size(1);
  Tensor<T> wins = window_partition(x, window);  // [nW, T, C]
  const int64_t n_windows = wins.size(0);
  const int64_t tokens = wins.size(1);
  if (k < 1 || k > n_windows) throw UsageError("token_aggregated_attention: k out of range");

  Tensor<T> q = matmul(wins, p.wq);
  Tensor<T> kk = matmul(wins, p.wk);
  Tensor<T> v = matmul(wins, p.wv);

  std::vector<int64_t> selection;
  if (forced_selection) {
    require_shape(static_cast<int64_t>(forced_selection->size()) == n_windows * k,
                  "token_aggregated_attention: forced selection must be [nW, k]");
    selection = *forced_selection;
  } else {
    // The similarity search feeds only the discrete selection, so it runs
    // outside the graph.
    NoGradGuard ng;
    Tensor<T> qv = Tensor<T>::make_view(q.shape(), q.node()->value);
    Tensor<T> kv = Tensor<T>::make_view(kk.shape(), kk.node()->value);
    auto [qc, kc] = window_candidates(qv, kv);
    selection = topk_windows(resemblance(qc, kc), k);
  }

  // K^agg/V^agg: all window^2 tokens of each selected window, [nW, k*T, C].
  Tensor<T> k_agg = reshape(index_select(kk, 0, selection), {n_windows, k * tokens, -1});
  Tensor<T> v_agg = reshape(index_select(v, 0, selection), {n_windows, k * tokens, -1});

  Tensor<T> out = detail::multi_head_attend(q, k_agg, v_agg, p);
  return window_reverse(out, h, w);
}

}  // namespace msnc
