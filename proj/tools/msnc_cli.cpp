// msnc: multi-spectral neural codec command line.
//
// Subcommands: gen-data, train, compress, decompress, eval, selftest.
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "msnc/codec.hpp"
#include "msnc/data.hpp"
#include "msnc/metrics.hpp"
#include "msnc/selftest.hpp"
#include "msnc/training.hpp"

namespace {

using msnc::MultiSpectralImage;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int cmd_gen_data(uint64_t seed, int64_t n, int64_t size, int64_t channels,
                 const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto corpus = msnc::synth_generate(seed, n, size, size, channels);
  for (int64_t i = 0; i < static_cast<int64_t>(corpus.size()); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "img_%05lld.msim", static_cast<long long>(i));
    msnc::write_msi((std::filesystem::path(out_dir) / name).string(), corpus[i]);
  }
  std::cout << "wrote " << corpus.size() << " images (" << size << "x" << size << "x" << channels
            << ") to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(msnc::TrainConfig cfg, const std::string& out_ckpt, const std::string& log_csv) {
  auto result = msnc::train<float>(
      cfg,
      [](int64_t step, const msnc::StepRecord& rec) {
        if (step % 25 == 0)
          std::cout << "step " << step << "  loss " << rec.loss << "  bpp " << rec.bpp
                    << "  mse " << rec.mse << "\n";
      },
      out_ckpt);
  uint64_t digest = msnc::save_model(out_ckpt, result.model);
  if (!log_csv.empty()) result.log.write_steps_csv(log_csv);
  std::cout << "checkpoint " << out_ckpt << " (digest " << std::hex << digest << std::dec << ", "
            << result.model.parameter_count() << " parameters)\n";
  if (!result.log.epoch_evals.empty()) {
    const auto& p = result.log.epoch_evals.back();
    std::cout << "final eval: bpp " << p.bpp << "  psnr " << p.psnr_db << " dB  ms-ssim "
              << p.msssim << "\n";
  }
  return kExitOk;
}

int cmd_compress(const std::string& ckpt, const std::string& in, const std::string& out,
                 const std::string& recon_out) {
  auto loaded = msnc::load_model<float>(ckpt);
  MultiSpectralImage img = msnc::read_msi(in);
  auto tables = msnc::build_entropy_tables(loaded.model);
  auto enc = msnc::compress_image(loaded.model, tables, img, loaded.digest);
  msnc::write_msnc(out, enc.file);
  MultiSpectralImage recon = msnc::tensor_to_image(enc.recon, img.labels);
  if (!recon_out.empty()) msnc::write_msi(recon_out, recon);
  std::cout << "bpp " << enc.bpp_file << " (model estimate "
            << enc.rate_estimate_bits / (double(img.height) * double(img.width)) << ")  psnr "
            << msnc::psnr(img, recon) << " dB\n";
  return kExitOk;
}

int cmd_decompress(const std::string& ckpt, const std::string& in, const std::string& out) {
  auto loaded = msnc::load_model<float>(ckpt);
  auto file = msnc::read_msnc(in);
  auto tables = msnc::build_entropy_tables(loaded.model);
  auto dec = msnc::decompress_image(loaded.model, tables, file, loaded.digest);
  msnc::write_msi(out, msnc::tensor_to_image(dec.recon));
  std::cout << "decoded " << file.width << "x" << file.height << "x" << file.channels << " to "
            << out << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& csv,
             double lambda_tag, const std::string& subset) {
  auto loaded = msnc::load_model<float>(ckpt);
  msnc::DataConfig data;
  data.dir = data_dir;
  auto corpus = msnc::load_corpus(data);
  std::vector<MultiSpectralImage> images;
  if (subset == "all") {
    images = corpus;
  } else {
    auto split = msnc::split_train_test(static_cast<int64_t>(corpus.size()));
    const auto& idx = subset == "train" ? split.train : split.test;
    for (int64_t i : idx) images.push_back(corpus[i]);
  }
  auto point = msnc::evaluate_model(loaded.model, loaded.digest, images, lambda_tag);
  msnc::append_rd_csv(csv, point);
  std::cout << "lambda " << point.lambda << "  bpp " << point.bpp << "  psnr " << point.psnr_db
            << " dB  ms-ssim " << point.msssim << " (" << point.n_images << " images) -> " << csv
            << "\n";
  return kExitOk;
}

int cmd_selftest(const std::string& suite) {
  msnc::SelftestResult result;
  if (suite == "grad") {
    result = msnc::selftest_grad();
  } else if (suite == "oracle") {
    result = msnc::selftest_oracle();
  } else if (suite == "rans") {
    result = msnc::selftest_rans();
  } else {
    result = msnc::selftest_all();
  }
  for (const auto& line : result.lines) std::cout << line << "\n";
  std::cout << result.passed << " passed, " << result.failed << " failed\n";
  return result.ok() ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msnc: multi-spectral neural image codec"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-spectral corpus");
  uint64_t gen_seed = 7;
  int64_t gen_n = 200, gen_size = 64, gen_channels = 9;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--n", gen_n, "number of images");
  gen->add_option("--size", gen_size, "image side length");
  gen->add_option("--channels", gen_channels, "spectral channels");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a codec model");
  std::string tr_config, tr_out = "model.ckpt", tr_log;
  double tr_lambda = -1;
  int64_t tr_epochs = -1, tr_steps = -1;
  uint64_t tr_seed = 0;
  bool tr_seed_set = false, tr_swin = false, tr_uniform = false;
  tr->add_option("--config", tr_config, "text config file (flags override)");
  tr->add_option("--lambda", tr_lambda, "rate-distortion trade-off");
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--steps", tr_steps, "exact step count (overrides epochs)");
  tr->add_option_function<uint64_t>(
      "--seed", [&](const uint64_t& v) { tr_seed = v; tr_seed_set = true; }, "training seed");
  tr->add_flag("--swin-baseline", tr_swin, "ablation: replace token aggregation");
  tr->add_flag("--uniform-shift", tr_uniform, "ablation: uniform shift law");
  tr->add_option("--out-ckpt", tr_out, "checkpoint path");
  tr->add_option("--log-csv", tr_log, "per-step training log");

  // compress
  auto* co = app.add_subcommand("compress", "compress a .msim image to .msnc");
  std::string co_ckpt, co_in, co_out, co_recon;
  co->add_option("--ckpt", co_ckpt, "checkpoint")->required();
  co->add_option("--in", co_in, "input .msim")->required();
  co->add_option("--out", co_out, "output .msnc")->required();
  co->add_option("--recon", co_recon, "also write the encoder-side reconstruction (.msim)");

  // decompress
  auto* de = app.add_subcommand("decompress", "decompress a .msnc stream to .msim");
  std::string de_ckpt, de_in, de_out;
  de->add_option("--ckpt", de_ckpt, "checkpoint")->required();
  de->add_option("--in", de_in, "input .msnc")->required();
  de->add_option("--out", de_out, "output .msim")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "rate-distortion evaluation over a directory");
  std::string ev_ckpt, ev_data, ev_csv = "eval.csv", ev_subset = "test";
  double ev_lambda = 0;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev->add_option("--data", ev_data, "directory of .msim images")->required();
  ev->add_option("--csv", ev_csv, "output CSV (appends one row)");
  ev->add_option("--lambda", ev_lambda, "lambda tag recorded in the CSV");
  ev->add_option("--subset", ev_subset, "train|test|all split selection")
      ->check(CLI::IsMember({"train", "test", "all"}));

  // selftest
  auto* st = app.add_subcommand("selftest", "run built-in health checks");
  std::string st_suite = "all";
  st->add_option("--suite", st_suite, "grad|oracle|rans|all")
      ->check(CLI::IsMember({"grad", "oracle", "rans", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_seed, gen_n, gen_size, gen_channels, gen_out);
    if (tr->parsed()) {
      msnc::TrainConfig cfg;
      if (!tr_config.empty()) cfg = msnc::load_train_config(tr_config);
      if (tr_lambda > 0) cfg.lambda = tr_lambda;
      if (tr_epochs > 0) cfg.epochs = tr_epochs;
      if (tr_steps > 0) cfg.steps_override = tr_steps;
      if (tr_seed_set) cfg.seed = tr_seed;
      if (tr_swin) cfg.swin_baseline = true;
      if (tr_uniform) cfg.uniform_shift = true;
      return cmd_train(cfg, tr_out, tr_log);
    }
    if (co->parsed()) return cmd_compress(co_ckpt, co_in, co_out, co_recon);
    if (de->parsed()) return cmd_decompress(de_ckpt, de_in, de_out);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_csv, ev_lambda, ev_subset);
    if (st->parsed()) return cmd_selftest(st_suite);
  } catch (const msnc::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const msnc::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const msnc::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const msnc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
