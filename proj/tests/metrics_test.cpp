#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "msnc/metrics.hpp"
#include "msnc/rng.hpp"
#include "msssim_reference.hpp"

using namespace msnc;
using D = double;

namespace {

MultiSpectralImage random_image(int64_t h, int64_t w, int64_t s, Rng& rng) {
  MultiSpectralImage img;
  img.height = h;
  img.width = w;
  img.channels = s;
  img.labels = default_channel_labels(s);
  img.data.resize(h * w * s);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

MultiSpectralImage offset_image(const MultiSpectralImage& base, double delta) {
  MultiSpectralImage img = base;
  for (auto& v : img.data) v = std::clamp(v + delta, 0.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("rd_loss: identity gives bpp, lambda 0 gives pure rate, preset list") {
  Rng rng(81, 1);
  std::vector<D> pix(8 * 8 * 2);
  for (auto& v : pix) v = rng.uniform();
  Tensor<D> x = Tensor<D>::from_vector({8, 8, 2}, pix);
  Tensor<D> rate = Tensor<D>::scalar(320.0);

  auto parts = rd_loss(x, x, rate, 0.0125, 8, 8);
  CHECK(parts.bpp.item() == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(parts.loss.item() == doctest::Approx(5.0).epsilon(1e-12));  // zero distortion

  Tensor<D> other = Tensor<D>::from_vector({8, 8, 2}, std::vector<D>(128, 0.5));
  auto pure_rate = rd_loss(x, other, rate, 0.0, 8, 8);
  CHECK(pure_rate.loss.item() == doctest::Approx(5.0).epsilon(1e-12));

  const double expect[7] = {0.0015, 0.0035, 0.0070, 0.0125, 0.0250, 0.0410, 0.0550};
  for (int i = 0; i < 7; ++i) CHECK(kLambdaPresets[i] == expect[i]);

  CHECK_THROWS_AS(rd_loss(x, Tensor<D>::zeros({4, 4, 2}), rate, 0.1, 8, 8), ShapeError);
}

TEST_CASE("psnr anchors") {
  Rng rng(82, 1);
  MultiSpectralImage a = random_image(16, 16, 3, rng);

  // MSE = 255^2 on the 255 scale -> 0 dB.
  MultiSpectralImage black = a, white = a;
  for (auto& v : black.data) v = 0.0;
  for (auto& v : white.data) v = 1.0;
  CHECK(psnr(black, white) == doctest::Approx(0.0).epsilon(1e-12));

  // Uniform offset of 1/255 -> MSE 1 -> 48.1308 dB.
  MultiSpectralImage base = random_image(16, 16, 3, rng);
  for (auto& v : base.data) v = 0.2 + 0.5 * v;  // keep headroom for the offset
  MultiSpectralImage shifted = offset_image(base, 1.0 / 255.0);
  CHECK(psnr(base, shifted) == doctest::Approx(48.13080360867911).epsilon(1e-9));

  CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
}

TEST_CASE("psnr is monotone decreasing in MSE") {
  Rng rng(83, 1);
  MultiSpectralImage base = random_image(16, 16, 2, rng);
  for (auto& v : base.data) v = 0.3 + 0.4 * v;
  double p1 = psnr(base, offset_image(base, 0.01));
  double p2 = psnr(base, offset_image(base, 0.05));
  double p3 = psnr(base, offset_image(base, 0.2));
  CHECK(p1 > p2);
  CHECK(p2 > p3);
}

TEST_CASE("ms_ssim anchors and db transform") {
  Rng rng(84, 1);
  MultiSpectralImage a = random_image(64, 64, 2, rng);
  auto self = ms_ssim(a, a);
  CHECK(self.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(self.scales_used == 3);  // 64 -> 32 -> 16, then 8 < 11
  CHECK(msssim_db(self.value) == std::numeric_limits<double>::infinity());

  CHECK(msssim_db(0.9) == doctest::Approx(10.0).epsilon(1e-9));

  MultiSpectralImage b = offset_image(a, 0.03);
  auto r = ms_ssim(a, b);
  CHECK(r.value < 1.0);
  CHECK(r.value > 0.0);

  MultiSpectralImage tiny = random_image(8, 8, 1, rng);
  CHECK_THROWS_AS(ms_ssim(tiny, tiny), ShapeError);
}

TEST_CASE("ms_ssim equals 1 only for identical inputs") {
  Rng rng(85, 1);
  MultiSpectralImage a = random_image(48, 48, 1, rng);
  MultiSpectralImage b = a;
  b.data[5 * 48 + 11] = std::clamp(b.data[5 * 48 + 11] + 0.2, 0.0, 1.0);
  CHECK(ms_ssim(a, a).value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ms_ssim(a, b).value < 1.0 - 1e-12);
}

TEST_CASE("ms_ssim matches the direct-convolution reference within 1e-6") {
  Rng rng(86, 1);
  SUBCASE("three scales, two channels") {
    MultiSpectralImage a = random_image(64, 64, 2, rng);
    MultiSpectralImage b = random_image(64, 64, 2, rng);
    // Correlated pair; quality metrics are meant for similar images.
    for (size_t i = 0; i < b.data.size(); ++i)
      b.data[i] = std::clamp(0.8 * a.data[i] + 0.2 * b.data[i], 0.0, 1.0);
    double ref = msnc_test::ref_msssim(a, b);
    double got = ms_ssim(a, b).value;
    CHECK(std::fabs(ref - got) < 1e-6);
  }
  SUBCASE("five scales") {
    MultiSpectralImage a = random_image(192, 192, 1, rng);
    MultiSpectralImage b = offset_image(a, 0.02);
    auto r = ms_ssim(a, b);
    CHECK(r.scales_used == 5);
    CHECK(std::fabs(msnc_test::ref_msssim(a, b) - r.value) < 1e-6);
  }
}

TEST_CASE("rd csv schema") {
  std::string path = (std::filesystem::temp_directory_path() / "msnc_eval_test.csv").string();
  std::filesystem::remove(path);
  append_rd_csv(path, {0.0125, 0.84, 41.2, 0.973, 15.7, 16});
  append_rd_csv(path, {0.055, 2.1, 46.8, 0.991, 20.4, 16});

  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line.rfind("# psnr_db", 0) == 0);
  std::getline(f, line);
  CHECK(line == "lambda,bpp,psnr_db,msssim,msssim_db,n_images");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}
