#pragma once

// Multi-spectral image container, deterministic synthetic solar-like data,
// random patch cropping, and the pseudo-temporal train/test split.
//
// "MSIM" container layout (little-endian): magic "MSIM", version u16,
// H u32, W u32, S u16, dtype u8 (1 = 8-bit, 2 = 16-bit unsigned), per
// channel a u16 label length + label bytes, then the planar payload.
// Values normalize to [0,1] by the dtype maximum on read.

#include <cstdint>
#include <string>
#include <vector>

#include "msnc/common.hpp"
#include "msnc/rng.hpp"
#include "msnc/tensor.hpp"

namespace msnc {

// Planar channel-major raster in [0,1] with S spectral channels.
struct MultiSpectralImage {
  int64_t height = 0, width = 0, channels = 0;
  std::vector<std::string> labels;  // one per channel (wavelength tags)
  std::vector<double> data;         // [S][H][W]
  int64_t sample_index = 0;         // pseudo-time

  double at(int64_t c, int64_t r, int64_t col) const {
    return data[(c * height + r) * width + col];
  }
  double& at(int64_t c, int64_t r, int64_t col) {
    return data[(c * height + r) * width + col];
  }
  void validate() const;
};

enum class MsimDtype : uint8_t { kU8 = 1, kU16 = 2 };

void write_msi(const std::string& path, const MultiSpectralImage& img,
               MsimDtype dtype = MsimDtype::kU16);
MultiSpectralImage read_msi(const std::string& path);

// Default wavelength tags for S=9 (EUV + UV bands of a solar imager).
std::vector<std::string> default_channel_labels(int64_t s);

// Synthetic corpus: limb-darkened disk + a shared low-frequency texture
// rendered into all channels with per-channel gain/gamma plus independent
// noise; consecutive sample indices evolve the texture smoothly. Fully
// determined by the seed.
std::vector<MultiSpectralImage> synth_generate(uint64_t seed, int64_t n, int64_t height,
                                               int64_t width, int64_t channels = 9);

struct Patch {
  MultiSpectralImage image;
  int64_t top = 0, left = 0;
};

Patch crop_patch(const MultiSpectralImage& img, int64_t size, Rng& rng);

struct DatasetSplit {
  std::vector<int64_t> train, test;
};

// First `cut` fraction of each 12-sample pseudo-year cycle goes to train.
DatasetSplit split_train_test(int64_t corpus_size, double cut = 8.0 / 12.0);

// [H,W,S] interleaved tensor from the planar image and back.
template <typename T>
Tensor<T> image_to_tensor(const MultiSpectralImage& img) {
  std::vector<T> v(img.height * img.width * img.channels);
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t r = 0; r < img.height; ++r)
      for (int64_t col = 0; col < img.width; ++col)
        v[(r * img.width + col) * img.channels + c] = static_cast<T>(img.at(c, r, col));
  return Tensor<T>::from_vector({img.height, img.width, img.channels}, std::move(v));
}

template <typename T>
MultiSpectralImage tensor_to_image(const Tensor<T>& x, std::vector<std::string> labels = {}) {
  MultiSpectralImage img;
  img.height = x.size(0);
  img.width = x.size(1);
  img.channels = x.size(2);
  img.labels = labels.empty() ? default_channel_labels(img.channels) : std::move(labels);
  img.data.resize(img.height * img.width * img.channels);
  auto px = x.data();
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t r = 0; r < img.height; ++r)
      for (int64_t col = 0; col < img.width; ++col)
        img.at(c, r, col) = static_cast<double>(px[(r * img.width + col) * img.channels + c]);
  return img;
}

}  // namespace msnc
