#pragma once

// End-to-end coding paths. Training forward uses additive-noise quantization
// and sampled shifts; the evaluation path uses mode shifts, mean-centered
// rounding, and real rANS streams. Encoder and decoder share only the model
// parameters and the deterministic context schedule (z first, then channel
// groups in order), so the decoder reproduces y_hat and the reconstruction
// bit-exactly.

#include <fstream>
#include <numeric>
#include <optional>
#include <vector>

#include "msnc/checkpoint.hpp"
#include "msnc/data.hpp"
#include "msnc/entropy.hpp"
#include "msnc/metrics.hpp"
#include "msnc/model.hpp"
#include "msnc/rans.hpp"

namespace msnc {

// ---------------------------------------------------------------------------
// Model <-> checkpoint

template <typename T>
Checkpoint make_checkpoint(const CodecModel<T>& m) {
  Checkpoint ckpt;
  ckpt.config = m.config;
  for (const auto& [name, tensor] : m.sorted_parameters()) {
    CheckpointRecord rec;
    rec.name = name;
    rec.shape = tensor.shape();
    rec.values.reserve(tensor.numel());
    for (T v : tensor.data()) rec.values.push_back(static_cast<float>(v));
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

template <typename T>
uint64_t save_model(const std::string& path, const CodecModel<T>& m) {
  Checkpoint ckpt = make_checkpoint(m);
  auto bytes = serialize_checkpoint(ckpt);
  uint64_t digest = 0;
  for (int i = 0; i < 8; ++i)
    digest |= static_cast<uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("checkpoint: write failed: " + path);
  return digest;
}

template <typename T>
struct LoadedModel {
  CodecModel<T> model;
  uint64_t digest = 0;
};

template <typename T>
LoadedModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
  LoadedModel<T> out;
  out.model = CodecModel<T>::init(ckpt.config, 0);
  out.digest = ckpt.digest;
  auto params = out.model.sorted_parameters();
  if (params.size() != ckpt.records.size())
    throw FormatError("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& rec = ckpt.records[i];
    auto& tensor = const_cast<Tensor<T>&>(params[i].second);
    if (params[i].first != rec.name || tensor.shape() != rec.shape)
      throw FormatError("checkpoint: unexpected record '" + rec.name + "'");
    auto dst = tensor.mutable_data();
    for (int64_t j = 0; j < tensor.numel(); ++j) dst[j] = static_cast<T>(rec.values[j]);
  }
  return out;
}

template <typename T>
LoadedModel<T> load_model(const std::string& path) {
  return model_from_checkpoint<T>(load_checkpoint_file(path));
}

// ---------------------------------------------------------------------------
// Training forward

// Input extents must divide by downsampling * lcm(window, 4): the last stage
// map needs window tiling and the hyper path resamples the latent by 4.
inline void check_codable_extents(const ModelConfig& cfg, int64_t h, int64_t w) {
  const int64_t down = cfg.downsample();
  const int64_t need = down * std::lcm<int64_t>(cfg.window, 4);
  if (h % need != 0 || w % need != 0)
    throw ShapeError("extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " must divide by " + std::to_string(need));
}

template <typename T>
double sum_log2_span(std::span<const T> p) {
  double acc = 0;
  for (T v : p) acc += std::log2(static_cast<double>(v));
  return acc;
}

template <typename T>
struct TrainingForward {
  RdParts<T> parts;
  Tensor<T> latent;        // y before noise
  Tensor<T> hyper_latent;  // z before noise
  Tensor<T> recon;
};

template <typename T>
TrainingForward<T> training_forward(const CodecModel<T>& m, const Tensor<T>& x, double lambda,
                                    ShiftSampler& shifts, Rng& noise_rng) {
  TrainingForward<T> out;
  const int64_t h = x.size(0), w = x.size(1);
  check_codable_extents(m.config, h, w);
  out.latent = m.analysis.forward(x, shifts);
  out.hyper_latent = m.hyper_analysis.forward(out.latent, shifts);

  Tensor<T> z_noisy = quantize_noise(out.hyper_latent, noise_rng);
  Tensor<T> ctx = m.hyper_synthesis.forward(z_noisy, shifts);
  Tensor<T> y_noisy = quantize_noise(out.latent, noise_rng);

  std::vector<Tensor<T>> likelihoods{m.entropy.prior.likelihood(z_noisy)};
  auto groups = split(y_noisy, -1, m.entropy.groups);
  Tensor<T> history;
  for (size_t i = 0; i < groups.size(); ++i) {
    GroupParams<T> gp = m.entropy.group_params(ctx, history.defined() ? &history : nullptr, i);
    likelihoods.push_back(gaussian_likelihood(groups[i], gp.mu, gp.sigma));
    history = history.defined() ? concat<T>({history, groups[i]}, -1) : groups[i];
  }
  Tensor<T> rate = rate_bits(likelihoods);
  out.recon = m.synthesis.forward(y_noisy, shifts);
  out.parts = rd_loss(x, out.recon, rate, lambda, h, w);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation-path coding

struct EntropyTables {
  CdfTable gaussian;    // one context per scale bin
  CdfTable factorized;  // one context per hyper channel
};

template <typename T>
EntropyTables build_entropy_tables(const CodecModel<T>& m) {
  EntropyTables t;
  t.gaussian = build_gaussian_cdf_table();
  const int64_t c = m.config.hyper_channels;
  for (int64_t i = 0; i < c; ++i)
    t.factorized.contexts.push_back(
        logistic_cdf_context(m.entropy.prior.location(i), m.entropy.prior.scale(i)));
  return t;
}

template <typename T>
struct CompressResult {
  MsncFile file;
  Tensor<T> y_hat;
  Tensor<T> recon;              // clamped to [0,1]
  double rate_estimate_bits = 0;  // continuous-model estimate at the coded symbols
  double bpp_file = 0;            // from actual serialized bytes
};

namespace detail {

// Quantizes z against the per-channel factorized contexts (mu = 0, symbols
// clamped into support) and returns symbols plus the dequantized tensor.
template <typename T>
std::pair<std::vector<int32_t>, Tensor<T>> quantize_hyper(const Tensor<T>& z,
                                                          const CdfTable& factorized) {
  const int64_t c = z.size(-1);
  auto pz = z.data();
  std::vector<int32_t> syms(z.numel());
  std::vector<T> dequant(z.numel());
  for (int64_t i = 0; i < z.numel(); ++i) {
    const auto& ctx = factorized.contexts[i % c];
    auto s = static_cast<int32_t>(round_half_away(static_cast<double>(pz[i])));
    s = ctx.clamp_symbol(s);
    syms[i] = s;
    dequant[i] = static_cast<T>(s);
  }
  return {std::move(syms), Tensor<T>::from_vector(z.shape(), std::move(dequant))};
}

inline std::vector<int32_t> hyper_context_ids(int64_t numel, int64_t channels) {
  std::vector<int32_t> ids(numel);
  for (int64_t i = 0; i < numel; ++i) ids[i] = static_cast<int32_t>(i % channels);
  return ids;
}

}  // namespace detail

template <typename T>
CompressResult<T> compress_image(const CodecModel<T>& m, const EntropyTables& tables,
                                 const MultiSpectralImage& img, uint64_t model_digest) {
  NoGradGuard ng;
  Tensor<T> x = image_to_tensor<T>(img);
  check_codable_extents(m.config, x.size(0), x.size(1));
  ModeShiftSampler shifts;

  CompressResult<T> out;
  Tensor<T> y = m.analysis.forward(x, shifts);
  Tensor<T> z = m.hyper_analysis.forward(y, shifts);

  auto [z_syms, z_hat] = detail::quantize_hyper(z, tables.factorized);
  auto z_ctx = detail::hyper_context_ids(z.numel(), m.config.hyper_channels);
  out.file.z_stream = rans_encode(z_syms, z_ctx, tables.factorized);
  double rate = -sum_log2_span(m.entropy.prior.likelihood(z_hat).data());

  Tensor<T> ctx_feat = m.hyper_synthesis.forward(z_hat, shifts);
  auto y_groups = split(y, -1, m.entropy.groups);

  Tensor<T> history;
  std::vector<Tensor<T>> decoded_groups;
  for (size_t g = 0; g < y_groups.size(); ++g) {
    GroupParams<T> gp = m.entropy.group_params(ctx_feat, history.defined() ? &history : nullptr, g);
    auto py = y_groups[g].data();
    auto pm = gp.mu.data();
    auto ps = gp.sigma.data();
    const int64_t n = y_groups[g].numel();
    std::vector<int32_t> syms(n);
    std::vector<int32_t> ctx_ids(n);
    std::vector<T> dequant(n);
    for (int64_t i = 0; i < n; ++i) {
      int32_t bin = rans_scale_bin_index(static_cast<double>(ps[i]));
      const auto& c = tables.gaussian.contexts[bin];
      auto s = static_cast<int32_t>(
          round_half_away(static_cast<double>(py[i]) - static_cast<double>(pm[i])));
      s = c.clamp_symbol(s);
      syms[i] = s;
      ctx_ids[i] = bin;
      dequant[i] = static_cast<T>(s) + pm[i];
    }
    out.file.y_streams.push_back(rans_encode(syms, ctx_ids, tables.gaussian));
    Tensor<T> y_hat_g = Tensor<T>::from_vector(y_groups[g].shape(), std::move(dequant));
    rate -= sum_log2_span(gaussian_likelihood(y_hat_g, gp.mu, gp.sigma).data());
    decoded_groups.push_back(y_hat_g);
    history = history.defined() ? concat<T>({history, y_hat_g}, -1) : y_hat_g;
  }

  out.y_hat = concat(decoded_groups, -1);
  out.recon = clamp(m.synthesis.forward(out.y_hat, shifts), T(0), T(1));
  out.file.height = static_cast<uint32_t>(img.height);
  out.file.width = static_cast<uint32_t>(img.width);
  out.file.channels = static_cast<uint16_t>(img.channels);
  out.file.model_digest = model_digest;
  out.rate_estimate_bits = rate;
  out.bpp_file = 8.0 * static_cast<double>(serialize_msnc(out.file).size()) /
                 (static_cast<double>(img.height) * static_cast<double>(img.width));
  return out;
}

template <typename T>
struct DecompressResult {
  Tensor<T> y_hat;
  Tensor<T> recon;  // clamped to [0,1]
};

template <typename T>
DecompressResult<T> decompress_image(const CodecModel<T>& m, const EntropyTables& tables,
                                     const MsncFile& file, uint64_t model_digest) {
  if (file.model_digest != model_digest)
    throw FormatError("msnc: stream was produced by a different checkpoint");
  if (file.channels != m.config.spectral_channels)
    throw FormatError("msnc: channel count does not match the model");
  if (file.y_streams.size() != m.entropy.groups.size())
    throw FormatError("msnc: group stream count mismatch");
  NoGradGuard ng;
  ModeShiftSampler shifts;

  const int64_t hy = file.height / m.config.downsample();
  const int64_t wy = file.width / m.config.downsample();
  const int64_t hz = hy / 4, wz = wy / 4;
  const int64_t cz = m.config.hyper_channels;

  auto z_ctx = detail::hyper_context_ids(hz * wz * cz, cz);
  auto z_syms = rans_decode(file.z_stream, z_ctx, tables.factorized, hz * wz * cz);
  std::vector<T> zv(z_syms.size());
  for (size_t i = 0; i < z_syms.size(); ++i) zv[i] = static_cast<T>(z_syms[i]);
  Tensor<T> z_hat = Tensor<T>::from_vector({hz, wz, cz}, std::move(zv));

  Tensor<T> ctx_feat = m.hyper_synthesis.forward(z_hat, shifts);

  Tensor<T> history;
  std::vector<Tensor<T>> decoded_groups;
  for (size_t g = 0; g < m.entropy.groups.size(); ++g) {
    GroupParams<T> gp = m.entropy.group_params(ctx_feat, history.defined() ? &history : nullptr, g);
    const int64_t n = hy * wy * m.entropy.groups[g];
    auto ps = gp.sigma.data();
    std::vector<int32_t> ctx_ids(n);
    for (int64_t i = 0; i < n; ++i)
      ctx_ids[i] = rans_scale_bin_index(static_cast<double>(ps[i]));
    auto syms = rans_decode(file.y_streams[g], ctx_ids, tables.gaussian, n);
    auto pm = gp.mu.data();
    std::vector<T> dequant(n);
    for (int64_t i = 0; i < n; ++i) dequant[i] = static_cast<T>(syms[i]) + pm[i];
    Tensor<T> y_hat_g =
        Tensor<T>::from_vector({hy, wy, m.entropy.groups[g]}, std::move(dequant));
    decoded_groups.push_back(y_hat_g);
    history = history.defined() ? concat<T>({history, y_hat_g}, -1) : y_hat_g;
  }

  DecompressResult<T> out;
  out.y_hat = concat(decoded_groups, -1);
  out.recon = clamp(m.synthesis.forward(out.y_hat, shifts), T(0), T(1));
  return out;
}

}  // namespace msnc
