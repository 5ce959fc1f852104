#pragma once

// Adam optimization with cosine learning-rate annealing, the step loop with
// seed-derived randomness streams, epoch checkpointing, and the
// rate-distortion evaluation sweep.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "msnc/codec.hpp"
#include "msnc/data.hpp"
#include "msnc/metrics.hpp"
#include "msnc/model.hpp"

namespace msnc {

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one bias-corrected update in place. Returns false (and leaves
  // parameters and moments untouched) when any gradient is non-finite; a
  // missing gradient counts as zero.
  bool step(ParamMap<T>& params, double lr) {
    if (m_.empty()) {
      for (auto& [name, p] : params) {
        m_.emplace_back(p.numel(), T(0));
        v_.emplace_back(p.numel(), T(0));
      }
    }
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (T g : p.grad())
        if (!std::isfinite(static_cast<double>(g))) return false;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = const_cast<Tensor<T>&>(params[i].second);
      auto values = p.mutable_data();
      const int64_t n = p.numel();
      std::vector<T> zero;
      std::span<const T> g;
      if (p.has_grad()) {
        g = p.grad();
      } else {
        zero.assign(n, T(0));
        g = zero;
      }
      auto& m = m_[i];
      auto& v = v_[i];
      for (int64_t j = 0; j < n; ++j) {
        m[j] = static_cast<T>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
        v[j] = static_cast<T>(beta2_ * v[j] + (1.0 - beta2_) * double(g[j]) * double(g[j]));
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        values[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
    return true;
  }

  int64_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

inline double cosine_lr(double lr_init, double lr_final, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return lr_final;
  double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---------------------------------------------------------------------------
// Config

struct DataConfig {
  std::string dir;  // when set, load *.msim from here instead of synthesizing
  int64_t synth_n = 200;
  int64_t synth_size = 64;
  int64_t synth_channels = 9;
  uint64_t synth_seed = 7;
};

struct TrainConfig {
  double lambda = 0.0125;
  int64_t epochs = 20;
  int64_t batch_size = 8;
  int64_t patch = 64;
  double lr_init = 1e-4;
  double lr_final = 1e-5;
  uint64_t seed = 1;
  int64_t steps_override = -1;  // > 0: train exactly this many steps
  int64_t eval_images = 8;      // test images scored per epoch
  double split_cut = 8.0 / 12.0;
  bool swin_baseline = false;  // ablation: window pairs replace token aggregation
  bool uniform_shift = false;  // ablation: uniform shift law
  ModelConfig model = ModelConfig::desk();
  DataConfig data;

  // Ablation flags resolved into the architecture config.
  ModelConfig resolved_model() const {
    ModelConfig m = model;
    if (swin_baseline) m.swin_baseline = true;
    if (uniform_shift) m.shift_preset = ShiftPreset::kUniform;
    return m;
  }
};

// Text key-value config file (schema v1). '#' starts a comment; unknown keys
// are rejected. Explicit CLI flags override file values.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_text(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Logs

struct StepRecord {
  int64_t step = 0;
  double loss = 0, bpp = 0, mse = 0, lr = 0;
  double wall_ms = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<RDPoint> epoch_evals;
  std::string resolved_wiring;
  int64_t skipped_steps = 0;

  void write_steps_csv(const std::string& path) const;

  // Mean loss over a trailing window ending at (1-based) step index.
  double smoothed_loss(int64_t at_step, int64_t window) const {
    int64_t hi = std::min<int64_t>(at_step, static_cast<int64_t>(steps.size()));
    int64_t lo = std::max<int64_t>(0, hi - window);
    double acc = 0;
    for (int64_t i = lo; i < hi; ++i) acc += steps[i].loss;
    return acc / std::max<int64_t>(1, hi - lo);
  }
};

// ---------------------------------------------------------------------------
// Evaluation

// Full eval path per image: real rANS streams, file-byte bpp, PSNR/MS-SSIM
// against the decoder-side reconstruction. Also verifies the decoder
// reproduces the encoder-side latents and reconstruction bit-exactly.
template <typename T>
RDPoint evaluate_model(const CodecModel<T>& m, uint64_t digest,
                       const std::vector<MultiSpectralImage>& images, double lambda_tag) {
  if (images.empty()) throw UsageError("evaluate: no images");
  EntropyTables tables = build_entropy_tables(m);
  RDPoint point;
  point.lambda = lambda_tag;
  double psnr_acc = 0, msssim_acc = 0, bpp_acc = 0;
  for (const auto& img : images) {
    CompressResult<T> enc = compress_image(m, tables, img, digest);
    DecompressResult<T> dec = decompress_image(m, tables, enc.file, digest);
    if (!std::equal(enc.y_hat.data().begin(), enc.y_hat.data().end(), dec.y_hat.data().begin()) ||
        !std::equal(enc.recon.data().begin(), enc.recon.data().end(), dec.recon.data().begin()))
      throw NumericError("codec: decoder disagreed with encoder");
    MultiSpectralImage recon = tensor_to_image(dec.recon, img.labels);
    psnr_acc += psnr(img, recon);
    msssim_acc += ms_ssim(img, recon).value;
    bpp_acc += enc.bpp_file;
  }
  const auto n = static_cast<double>(images.size());
  point.bpp = bpp_acc / n;
  point.psnr_db = psnr_acc / n;
  point.msssim = msssim_acc / n;
  point.msssim_db = msssim_db(point.msssim);
  point.n_images = static_cast<int64_t>(images.size());
  return point;
}

// ---------------------------------------------------------------------------
// Training loop

template <typename T>
struct TrainResult {
  CodecModel<T> model;
  TrainLog log;
};

// Loads or synthesizes the configured corpus.
std::vector<MultiSpectralImage> load_corpus(const DataConfig& data);

template <typename T>
TrainResult<T> train(const TrainConfig& cfg,
                     const std::function<void(int64_t, const StepRecord&)>& on_step = {},
                     const std::string& epoch_ckpt_path = {},
                     const std::vector<MultiSpectralImage>* corpus_override = nullptr) {
  ModelConfig mcfg = cfg.resolved_model();
  mcfg.validate();

  std::vector<MultiSpectralImage> corpus_local;
  if (!corpus_override) corpus_local = load_corpus(cfg.data);
  const std::vector<MultiSpectralImage>& corpus =
      corpus_override ? *corpus_override : corpus_local;
  DatasetSplit split = split_train_test(static_cast<int64_t>(corpus.size()), cfg.split_cut);
  if (split.train.empty() || split.test.empty())
    throw UsageError("train: split produced an empty side");

  TrainResult<T> out;
  out.model = CodecModel<T>::init(mcfg, cfg.seed);
  out.log.resolved_wiring = mcfg.wiring_summary();

  const int64_t steps_per_epoch =
      std::max<int64_t>(1, static_cast<int64_t>(split.train.size()) / cfg.batch_size);
  const int64_t total_steps =
      cfg.steps_override > 0 ? cfg.steps_override : cfg.epochs * steps_per_epoch;

  ParamMap<T> params = out.model.parameters();
  Adam<T> adam;
  const auto t0 = std::chrono::steady_clock::now();

  // Batch elements are independent; workers process contiguous index ranges
  // on parameter replicas and the per-image gradients reduce in batch order,
  // so the result is bitwise identical to the serial loop for any worker
  // count (all stochastic draws are (step, index)-derived).
  const int batch_workers =
      static_cast<int>(std::min<int64_t>(num_threads(), cfg.batch_size));
  std::vector<CodecModel<T>> replicas;
  for (int w = 1; w < batch_workers; ++w) replicas.push_back(clone_model(out.model));

  for (int64_t step = 0; step < total_steps; ++step) {
    const double lr = cosine_lr(cfg.lr_init, cfg.lr_final, step, total_steps);
    Rng batch_rng(cfg.seed, 0xba7c'0000ULL + static_cast<uint64_t>(step));
    std::vector<int64_t> picks(cfg.batch_size);
    for (auto& p : picks)
      p = split.train[batch_rng.below(static_cast<uint32_t>(split.train.size()))];

    struct ImageOutcome {
      double loss = 0, bpp = 0, mse = 0;
      std::vector<std::vector<T>> grads;  // one slot per parameter
    };
    std::vector<ImageOutcome> outcomes(cfg.batch_size);

    auto run_image = [&](CodecModel<T>& model, int64_t b) {
      Rng crop_rng(cfg.seed, 0xc409'0000ULL + static_cast<uint64_t>(step) * 64 + b);
      Patch patch = crop_patch(corpus[picks[b]], cfg.patch, crop_rng);
      Tensor<T> x = image_to_tensor<T>(patch.image);
      RandomShiftSampler shifts(
          Rng(cfg.seed, 0x51f7'0000ULL + static_cast<uint64_t>(step) * 64 + b));
      Rng noise_rng(cfg.seed, 0x401d'0000ULL + static_cast<uint64_t>(step) * 64 + b);
      TrainingForward<T> fwd = training_forward(model, x, cfg.lambda, shifts, noise_rng);
      auto& res = outcomes[b];
      res.loss = static_cast<double>(fwd.parts.loss.item());
      if (!std::isfinite(res.loss))
        throw NumericError("train: non-finite loss at step " + std::to_string(step));
      res.bpp = static_cast<double>(fwd.parts.bpp.item());
      res.mse = static_cast<double>(fwd.parts.distortion.item());
      backward(mul_scalar(fwd.parts.loss, static_cast<T>(1.0 / cfg.batch_size)));
      ParamMap<T> local = model.parameters();
      res.grads.resize(local.size());
      for (size_t i = 0; i < local.size(); ++i) {
        if (local[i].second.has_grad()) {
          auto g = local[i].second.grad();
          res.grads[i].assign(g.begin(), g.end());
        }
      }
      model.zero_grads();
    };

    if (batch_workers <= 1) {
      for (int64_t b = 0; b < cfg.batch_size; ++b) run_image(out.model, b);
    } else {
      std::vector<std::thread> threads;
      std::vector<std::exception_ptr> errors(batch_workers);
      const int64_t chunk = (cfg.batch_size + batch_workers - 1) / batch_workers;
      for (int w = 1; w < batch_workers; ++w) copy_parameters(out.model, replicas[w - 1]);
      for (int w = 1; w < batch_workers; ++w) {
        threads.emplace_back([&, w] {
          SerialSectionGuard serial;
          try {
            for (int64_t b = w * chunk; b < std::min<int64_t>(cfg.batch_size, (w + 1) * chunk);
                 ++b)
              run_image(replicas[w - 1], b);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      {
        SerialSectionGuard serial;
        try {
          for (int64_t b = 0; b < std::min<int64_t>(cfg.batch_size, chunk); ++b)
            run_image(out.model, b);
        } catch (...) {
          errors[0] = std::current_exception();
        }
      }
      for (auto& t : threads) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // Fixed-order reduction into the master parameters.
    double loss_acc = 0, bpp_acc = 0, mse_acc = 0;
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      loss_acc += outcomes[b].loss;
      bpp_acc += outcomes[b].bpp;
      mse_acc += outcomes[b].mse;
      for (size_t i = 0; i < params.size(); ++i) {
        if (!outcomes[b].grads[i].empty())
          const_cast<Tensor<T>&>(params[i].second).accumulate_grad(outcomes[b].grads[i]);
      }
    }

    if (!adam.step(params, lr)) {
      ++out.log.skipped_steps;
      std::cerr << "train: skipped step " << step << " (non-finite gradients)\n";
    }
    out.model.zero_grads();

    StepRecord rec;
    rec.step = step;
    rec.loss = loss_acc / cfg.batch_size;
    rec.bpp = bpp_acc / cfg.batch_size;
    rec.mse = mse_acc / cfg.batch_size;
    rec.lr = lr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    out.log.steps.push_back(rec);
    if (on_step) on_step(step, rec);

    const bool epoch_end = (step + 1) % steps_per_epoch == 0 || step + 1 == total_steps;
    if (epoch_end && cfg.eval_images > 0) {
      std::vector<MultiSpectralImage> eval_set;
      for (int64_t i = 0; i < std::min<int64_t>(cfg.eval_images,
                                                static_cast<int64_t>(split.test.size()));
           ++i)
        eval_set.push_back(corpus[split.test[i]]);
      uint64_t digest = 0;
      if (!epoch_ckpt_path.empty()) digest = save_model(epoch_ckpt_path, out.model);
      RDPoint p = evaluate_model(out.model, digest, eval_set, cfg.lambda);
      out.log.epoch_evals.push_back(p);
    }
  }
  return out;
}

}  // namespace msnc
