#pragma once

// Rate-distortion objective and the evaluation metrics. The loss is
// bpp + lambda * 255^2 * MSE with pixels in [0,1]; PSNR is reported as
// 10*log10(255^2 / MSE) on the 255 scale, pooled jointly over all spectral
// channels. MS-SSIM uses the standard 5-scale weights with an 11x11
// Gaussian window (sigma 1.5); images too small for five scales use the
// largest feasible count with renormalized weights.

#include <limits>
#include <string>
#include <vector>

#include "msnc/data.hpp"
#include "msnc/ops.hpp"

namespace msnc {

// The seven training trade-off presets.
inline constexpr double kLambdaPresets[7] = {0.0015, 0.0035, 0.0070,
                                             0.0125, 0.0250, 0.0410, 0.0550};

template <typename T>
struct RdParts {
  Tensor<T> loss;        // scalar
  Tensor<T> bpp;         // scalar
  Tensor<T> distortion;  // scalar MSE on [0,1] pixels
};

template <typename T>
RdParts<T> rd_loss(const Tensor<T>& x, const Tensor<T>& recon, const Tensor<T>& rate_bits,
                   double lambda, int64_t height, int64_t width) {
  require_shape(x.shape() == recon.shape(), "rd_loss: shape mismatch " + shape_str(x.shape()) +
                                                " vs " + shape_str(recon.shape()));
  RdParts<T> parts;
  parts.bpp = mul_scalar(rate_bits, static_cast<T>(1.0 / double(height * width)));
  parts.distortion = mse(x, recon);
  parts.loss = add(parts.bpp, mul_scalar(parts.distortion, static_cast<T>(lambda * 255.0 * 255.0)));
  return parts;
}

// +inf for identical images.
double psnr(const MultiSpectralImage& a, const MultiSpectralImage& b);

struct MsSsimResult {
  double value = 0;      // in (0, 1]
  int scales_used = 0;   // 5 when extents allow, fewer otherwise
};

MsSsimResult ms_ssim(const MultiSpectralImage& a, const MultiSpectralImage& b);

// -10*log10(1 - m); +inf sentinel at m == 1.
inline double msssim_db(double m) {
  if (m >= 1.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(1.0 - m);
}

struct RDPoint {
  double lambda = 0;
  double bpp = 0;
  double psnr_db = 0;
  double msssim = 0;
  double msssim_db = 0;
  int64_t n_images = 0;
};

// CSV with columns lambda,bpp,psnr_db,msssim,msssim_db,n_images. Appends a
// row when the file already exists; psnr_db is the per-image average (noted
// in the header).
void append_rd_csv(const std::string& path, const RDPoint& point);

}  // namespace msnc
