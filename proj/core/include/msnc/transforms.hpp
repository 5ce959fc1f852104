#pragma once

// The nonlinear analysis/synthesis transforms and their hyper counterparts.
// The analysis path halves the resolution in front of each stage (16x total
// for the four-stage configuration) and a stage is one token-aggregated
// block followed by a pair of window blocks whose second member uses a
// randomly shifted partition. The synthesis path mirrors it stage for stage
// with depth-to-space upsampling.

#include <memory>
#include <string>
#include <vector>

#include "msnc/attention.hpp"
#include "msnc/layers.hpp"
#include "msnc/ops.hpp"

namespace msnc {

// Largest window size <= limit that tiles an h x w map. Equals the
// configured size whenever the map is divisible by it; deep hyper maps can
// be smaller than the configured window.
inline int64_t effective_window(int64_t h, int64_t w, int64_t limit) {
  int64_t eff = std::min({limit, h, w});
  while (eff > 1 && (h % eff != 0 || w % eff != 0)) --eff;
  return std::max<int64_t>(1, eff);
}

struct ModelConfig {
  std::vector<int64_t> stage_dims{32, 48, 64, 80};
  int64_t window = 4;
  int64_t topk = 4;
  int64_t head_width = 16;
  int64_t latent_channels = 48;  // M
  int64_t hyper_channels = 24;   // N_h
  int64_t mlp_ratio = 2;
  int64_t aggregated_blocks = 1;
  int64_t shift_pairs = 1;
  int64_t spectral_channels = 9;  // S
  ShiftPreset shift_preset = ShiftPreset::kPeaked;
  bool swin_baseline = false;          // ablation: window pairs instead of token aggregation
  std::vector<int64_t> groups;         // uneven channel groups over M; derived when empty

  int n_stages() const { return static_cast<int>(stage_dims.size()); }
  int64_t downsample() const { return int64_t(1) << n_stages(); }

  // Desk-scale default; trains in minutes on a CPU.
  static ModelConfig desk() { return {}; }

  // Full-scale token dims for reference; not trained here.
  static ModelConfig reference() {
    ModelConfig c;
    c.stage_dims = {160, 256, 352, 448};
    c.head_width = 32;
    c.latent_channels = 448;
    c.hyper_channels = 224;
    return c;
  }

  // Two-stage micro configuration for the gradient suite (16x16 inputs).
  static ModelConfig micro() {
    ModelConfig c;
    c.stage_dims = {8, 12};
    c.window = 2;
    c.topk = 2;
    c.head_width = 4;
    c.latent_channels = 8;
    c.hyper_channels = 4;
    c.spectral_channels = 2;
    return c;
  }

  void validate() const {
    if (stage_dims.empty()) throw UsageError("config: no stages");
    for (int64_t d : stage_dims)
      if (d <= 0 || d % heads_for(d) != 0) throw UsageError("config: bad stage dim");
    if (window < 2) throw UsageError("config: window must be >= 2");
    if (topk < 1) throw UsageError("config: top-k must be >= 1");
    if (latent_channels <= 0 || hyper_channels <= 0) throw UsageError("config: bad channels");
    auto g = channel_groups();
    int64_t total = 0;
    for (int64_t s : g) {
      if (s <= 0) throw UsageError("config: group sizes must be positive");
      total += s;
    }
    if (total != latent_channels) throw UsageError("config: groups must sum to M");
  }

  int heads_for(int64_t c) const {
    int n = static_cast<int>(std::max<int64_t>(1, c / head_width));
    while (n > 1 && c % n != 0) --n;
    return n;
  }

  // Uneven group sizes over the latent channels: 1/16, 1/16, 1/8, 1/4 of M
  // (at least one channel each), remainder in the last group.
  std::vector<int64_t> channel_groups() const {
    if (!groups.empty()) return groups;
    const int64_t m = latent_channels;
    std::vector<int64_t> g{std::max<int64_t>(1, m / 16), std::max<int64_t>(1, m / 16),
                           std::max<int64_t>(1, m / 8), std::max<int64_t>(1, m / 4)};
    int64_t used = g[0] + g[1] + g[2] + g[3];
    if (used >= m) throw UsageError("config: latent too small for five uneven groups");
    g.push_back(m - used);
    return g;
  }

  // One-line wiring summary per attention layer; used for config diffs.
  std::string wiring_summary() const {
    std::ostringstream os;
    for (int s = 0; s < n_stages(); ++s) {
      os << "stage" << s << "[C=" << stage_dims[s] << "]:";
      for (int64_t i = 0; i < aggregated_blocks; ++i) {
        if (swin_baseline)
          os << " window window+shift(point)";
        else
          os << " aggregated";
      }
      for (int64_t i = 0; i < shift_pairs; ++i)
        os << " window window+shift(" << shift_preset_name(shift_preset) << ")";
      os << '\n';
    }
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Transformer layer

template <typename T>
struct TransformerLayer {
  LayerNormParams<T> ln1, ln2;
  AttentionParams<T> attn;
  Mlp<T> mlp;
  bool token_aggregated = false;
  bool shifted = false;
  ShiftPreset preset = ShiftPreset::kPeaked;
  int64_t window = 4;
  int64_t topk = 4;

  static TransformerLayer make(int64_t c, const ModelConfig& cfg, Rng& rng,
                               bool aggregated, bool shift, ShiftPreset preset) {
    TransformerLayer l;
    l.ln1 = LayerNormParams<T>::make(c);
    l.ln2 = LayerNormParams<T>::make(c);
    l.attn = AttentionParams<T>::make(c, cfg.heads_for(c), rng);
    l.mlp = Mlp<T>::make(c, cfg.mlp_ratio, rng);
    l.token_aggregated = aggregated;
    l.shifted = shift;
    l.preset = preset;
    l.window = cfg.window;
    l.topk = cfg.topk;
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x, ShiftSampler& shifts) const {
    const int64_t h = x.size(0), w = x.size(1);
    const int64_t eff = effective_window(h, w, window);
    Tensor<T> a = ln1.forward(x);
    Tensor<T> att;
    if (token_aggregated) {
      const int64_t n_windows = (h / eff) * (w / eff);
      att = token_aggregated_attention(a, attn, eff, std::min(topk, n_windows));
    } else if (shifted && eff >= 2) {
      ShiftDistribution d = ShiftDistribution::from_preset(preset, static_cast<int>(eff));
      auto [sh, sw] = shifts.next(d);
      Tensor<T> shifted_in = cyclic_shift(a, sh, sw);
      Tensor<T> out = window_mhsa(shifted_in, attn, eff);
      att = cyclic_shift(out, h - sh, w - sw);
    } else {
      att = window_mhsa(a, attn, eff);
    }
    Tensor<T> b = add(x, att);
    return add(b, mlp.forward(ln2.forward(b)));
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    attn.collect(out, prefix + ".attn");
    ln2.collect(out, prefix + ".ln2");
    mlp.collect(out, prefix + ".mlp");
  }

  std::string wiring() const {
    std::string s = token_aggregated ? "aggregated" : "window";
    if (shifted) s += std::string("+shift(") + shift_preset_name(preset) + ")";
    return s;
  }
};

// A stage: token-aggregated block(s), then window pair(s) whose second layer
// shifts. The swin_baseline ablation swaps each aggregated block for a
// fixed-shift window pair.
template <typename T>
struct Stage {
  std::vector<TransformerLayer<T>> layers;

  static Stage make(int64_t c, const ModelConfig& cfg, Rng& rng) {
    Stage s;
    for (int64_t i = 0; i < cfg.aggregated_blocks; ++i) {
      if (cfg.swin_baseline) {
        s.layers.push_back(
            TransformerLayer<T>::make(c, cfg, rng, false, false, ShiftPreset::kPointMass));
        s.layers.push_back(
            TransformerLayer<T>::make(c, cfg, rng, false, true, ShiftPreset::kPointMass));
      } else {
        s.layers.push_back(
            TransformerLayer<T>::make(c, cfg, rng, true, false, cfg.shift_preset));
      }
    }
    for (int64_t i = 0; i < cfg.shift_pairs; ++i) {
      s.layers.push_back(TransformerLayer<T>::make(c, cfg, rng, false, false, cfg.shift_preset));
      s.layers.push_back(TransformerLayer<T>::make(c, cfg, rng, false, true, cfg.shift_preset));
    }
    return s;
  }

  Tensor<T> forward(Tensor<T> x, ShiftSampler& shifts) const {
    for (const auto& l : layers) x = l.forward(x, shifts);
    return x;
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(out, prefix + ".blk" + std::to_string(i));
  }
};

// ---------------------------------------------------------------------------
// Resampling

// space_to_depth(2), linear 4C -> C_out, layer norm.
template <typename T>
struct PatchMerge {
  Linear<T> proj;
  LayerNormParams<T> norm;

  static PatchMerge make(int64_t c_in, int64_t c_out, Rng& rng) {
    PatchMerge m;
    m.proj = Linear<T>::normal(4 * c_in, c_out, rng);
    m.norm = LayerNormParams<T>::make(c_out);
    return m;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return norm.forward(proj.forward(space_to_depth(x)));
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    proj.collect(out, prefix + ".proj");
    norm.collect(out, prefix + ".norm");
  }
};

// linear C -> 4*C_out, depth_to_space(2), layer norm unless final.
template <typename T>
struct PatchSplit {
  Linear<T> proj;
  LayerNormParams<T> norm;
  bool final_stage = false;

  static PatchSplit make(int64_t c_in, int64_t c_out, Rng& rng, bool final_stage = false) {
    PatchSplit s;
    s.proj = Linear<T>::normal(c_in, 4 * c_out, rng);
    s.final_stage = final_stage;
    if (!final_stage) s.norm = LayerNormParams<T>::make(c_out);
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = depth_to_space(proj.forward(x));
    return final_stage ? y : norm.forward(y);
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    proj.collect(out, prefix + ".proj");
    if (!final_stage) norm.collect(out, prefix + ".norm");
  }
};

// ---------------------------------------------------------------------------
// Main transforms

template <typename T>
struct AnalysisTransform {
  std::vector<PatchMerge<T>> merges;
  std::vector<Stage<T>> stages;
  Linear<T> to_latent;

  static AnalysisTransform make(const ModelConfig& cfg, Rng& rng) {
    AnalysisTransform a;
    int64_t c_in = cfg.spectral_channels;
    for (int i = 0; i < cfg.n_stages(); ++i) {
      a.merges.push_back(PatchMerge<T>::make(c_in, cfg.stage_dims[i], rng));
      a.stages.push_back(Stage<T>::make(cfg.stage_dims[i], cfg, rng));
      c_in = cfg.stage_dims[i];
    }
    // Fan-in scaled: the latent must start at unit-ish magnitude or every
    // element quantizes to zero (the conditional's scale floor is 0.11) and
    // the rate term has no gradient to trade against distortion.
    a.to_latent = Linear<T>::scaled_normal(c_in, cfg.latent_channels, rng);
    return a;
  }

  Tensor<T> forward(Tensor<T> x, ShiftSampler& shifts) const {
    for (size_t i = 0; i < stages.size(); ++i) {
      x = merges[i].forward(x);
      x = stages[i].forward(x, shifts);
    }
    return to_latent.forward(x);
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    for (size_t i = 0; i < stages.size(); ++i) {
      merges[i].collect(out, prefix + ".merge" + std::to_string(i));
      stages[i].collect(out, prefix + ".stage" + std::to_string(i));
    }
    to_latent.collect(out, prefix + ".to_latent");
  }
};

template <typename T>
struct SynthesisTransform {
  Linear<T> from_latent;
  std::vector<Stage<T>> stages;       // deepest first
  std::vector<PatchSplit<T>> splits;  // last one maps to S channels

  static SynthesisTransform make(const ModelConfig& cfg, Rng& rng) {
    SynthesisTransform s;
    const int n = cfg.n_stages();
    s.from_latent = Linear<T>::normal(cfg.latent_channels, cfg.stage_dims[n - 1], rng);
    for (int i = n - 1; i >= 0; --i) {
      s.stages.push_back(Stage<T>::make(cfg.stage_dims[i], cfg, rng));
      int64_t c_out = i > 0 ? cfg.stage_dims[i - 1] : cfg.spectral_channels;
      s.splits.push_back(PatchSplit<T>::make(cfg.stage_dims[i], c_out, rng, i == 0));
    }
    return s;
  }

  Tensor<T> forward(Tensor<T> y, ShiftSampler& shifts) const {
    Tensor<T> x = from_latent.forward(y);
    for (size_t i = 0; i < stages.size(); ++i) {
      x = stages[i].forward(x, shifts);
      x = splits[i].forward(x);
    }
    return x;
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    from_latent.collect(out, prefix + ".from_latent");
    for (size_t i = 0; i < stages.size(); ++i) {
      stages[i].collect(out, prefix + ".stage" + std::to_string(i));
      splits[i].collect(out, prefix + ".split" + std::to_string(i));
    }
  }
};

// Two stride-2 resampling blocks around one plain window-attention block.
template <typename T>
struct HyperAnalysis {
  PatchMerge<T> down1, down2;
  TransformerLayer<T> block;

  static HyperAnalysis make(const ModelConfig& cfg, Rng& rng) {
    HyperAnalysis h;
    h.down1 = PatchMerge<T>::make(cfg.latent_channels, cfg.hyper_channels, rng);
    h.block = TransformerLayer<T>::make(cfg.hyper_channels, cfg, rng, false, false,
                                        cfg.shift_preset);
    h.down2 = PatchMerge<T>::make(cfg.hyper_channels, cfg.hyper_channels, rng);
    return h;
  }

  Tensor<T> forward(const Tensor<T>& y, ShiftSampler& shifts) const {
    require_shape(y.size(0) % 4 == 0 && y.size(1) % 4 == 0,
                  "hyper analysis: latent extents must divide by 4, got " + shape_str(y.shape()));
    return down2.forward(block.forward(down1.forward(y), shifts));
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    down1.collect(out, prefix + ".down1");
    block.collect(out, prefix + ".blk");
    down2.collect(out, prefix + ".down2");
  }
};

// Mirror upsampler producing the conditioning features for the entropy
// model's group parameter networks (2M channels at latent resolution).
template <typename T>
struct HyperSynthesis {
  PatchSplit<T> up1, up2;
  TransformerLayer<T> block;

  static HyperSynthesis make(const ModelConfig& cfg, Rng& rng) {
    HyperSynthesis h;
    h.up1 = PatchSplit<T>::make(cfg.hyper_channels, cfg.hyper_channels, rng);
    h.block = TransformerLayer<T>::make(cfg.hyper_channels, cfg, rng, false, false,
                                        cfg.shift_preset);
    h.up2 = PatchSplit<T>::make(cfg.hyper_channels, 2 * cfg.latent_channels, rng, true);
    return h;
  }

  Tensor<T> forward(const Tensor<T>& z, ShiftSampler& shifts) const {
    return up2.forward(block.forward(up1.forward(z), shifts));
  }

  void collect(ParamMap<T>& out, const std::string& prefix) const {
    up1.collect(out, prefix + ".up1");
    block.collect(out, prefix + ".blk");
    up2.collect(out, prefix + ".up2");
  }
};

}  // namespace msnc
