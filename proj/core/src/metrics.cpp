#include "msnc/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace msnc {

double psnr(const MultiSpectralImage& a, const MultiSpectralImage& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw ShapeError("psnr: image extents differ");
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = 255.0 * (a.data[i] - b.data[i]);
    acc += d * d;
  }
  double mse = acc / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;  // dynamic range 1
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> gaussian_taps() {
  std::array<double, kWin> g{};
  const double sigma = 1.5;
  double total = 0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

struct Plane {
  int64_t h = 0, w = 0;
  std::vector<double> v;
  double at(int64_t r, int64_t c) const { return v[r * w + c]; }
};

// Separable valid-region Gaussian filter: output extents shrink by kWin-1.
Plane blur_valid(const Plane& p) {
  static const auto g = gaussian_taps();
  Plane rowp{p.h, p.w - kWin + 1, std::vector<double>(p.h * (p.w - kWin + 1))};
  for (int64_t r = 0; r < p.h; ++r)
    for (int64_t c = 0; c < rowp.w; ++c) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += g[i] * p.at(r, c + i);
      rowp.v[r * rowp.w + c] = acc;
    }
  Plane out{p.h - kWin + 1, rowp.w, std::vector<double>((p.h - kWin + 1) * rowp.w)};
  for (int64_t r = 0; r < out.h; ++r)
    for (int64_t c = 0; c < out.w; ++c) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += g[i] * rowp.at(r + i, c);
      out.v[r * out.w + c] = acc;
    }
  return out;
}

Plane downsample2(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, std::vector<double>((p.h / 2) * (p.w / 2))};
  for (int64_t r = 0; r < out.h; ++r)
    for (int64_t c = 0; c < out.w; ++c)
      out.v[r * out.w + c] = 0.25 * (p.at(2 * r, 2 * c) + p.at(2 * r, 2 * c + 1) +
                                     p.at(2 * r + 1, 2 * c) + p.at(2 * r + 1, 2 * c + 1));
  return out;
}

Plane mul_planes(const Plane& a, const Plane& b) {
  Plane out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

// Mean luminance and contrast-structure terms at one scale.
void scale_stats(const Plane& x, const Plane& y, double* l_mean, double* cs_mean) {
  Plane mx = blur_valid(x), my = blur_valid(y);
  Plane mxx = blur_valid(mul_planes(x, x));
  Plane myy = blur_valid(mul_planes(y, y));
  Plane mxy = blur_valid(mul_planes(x, y));
  double l_acc = 0, cs_acc = 0;
  for (size_t i = 0; i < mx.v.size(); ++i) {
    double mux = mx.v[i], muy = my.v[i];
    double sx = mxx.v[i] - mux * mux;
    double sy = myy.v[i] - muy * muy;
    double sxy = mxy.v[i] - mux * muy;
    l_acc += (2 * mux * muy + kC1) / (mux * mux + muy * muy + kC1);
    cs_acc += (2 * sxy + kC2) / (sx + sy + kC2);
  }
  *l_mean = l_acc / static_cast<double>(mx.v.size());
  *cs_mean = cs_acc / static_cast<double>(mx.v.size());
}

}  // namespace

MsSsimResult ms_ssim(const MultiSpectralImage& a, const MultiSpectralImage& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw ShapeError("ms_ssim: image extents differ");
  static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

  int scales = 0;
  {
    int64_t m = std::min(a.height, a.width);
    while (scales < 5 && m >= kWin) {
      ++scales;
      m /= 2;
    }
  }
  if (scales == 0) throw ShapeError("ms_ssim: image smaller than the 11x11 window");
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += kWeights[s];

  double result = 0;
  for (int64_t ch = 0; ch < a.channels; ++ch) {
    Plane x{a.height, a.width, std::vector<double>(a.height * a.width)};
    Plane y = x;
    for (int64_t i = 0; i < a.height * a.width; ++i) {
      x.v[i] = a.data[ch * a.height * a.width + i];
      y.v[i] = b.data[ch * a.height * a.width + i];
    }
    double m = 1.0;
    for (int s = 0; s < scales; ++s) {
      double l, cs;
      scale_stats(x, y, &l, &cs);
      double w = kWeights[s] / wsum;
      if (s + 1 < scales) {
        m *= std::pow(std::max(cs, 0.0), w);
        x = downsample2(x);
        y = downsample2(y);
      } else {
        m *= std::pow(std::max(l * cs, 0.0), w);
      }
    }
    result += m;
  }
  return {result / static_cast<double>(a.channels), scales};
}

void append_rd_csv(const std::string& path, const RDPoint& p) {
  bool exists = false;
  {
    std::ifstream probe(path);
    exists = probe.good();
  }
  std::ofstream f(path, std::ios::app);
  if (!f) throw FormatError("csv: cannot open for write: " + path);
  if (!exists) {
    f << "# psnr_db: average of per-image PSNR; msssim: per-image mean\n";
    f << "lambda,bpp,psnr_db,msssim,msssim_db,n_images\n";
  }
  char line[256];
  std::snprintf(line, sizeof line, "%.6g,%.6f,%.4f,%.6f,%.4f,%lld\n", p.lambda, p.bpp, p.psnr_db,
                p.msssim, p.msssim_db, static_cast<long long>(p.n_images));
  f << line;
}

}  // namespace msnc
