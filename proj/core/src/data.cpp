#include "msnc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace msnc {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'I', 'M'};
constexpr uint16_t kVersion = 1;

void put_u16(std::ofstream& f, uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  f.write(reinterpret_cast<char*>(b), 2);
}
void put_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  f.write(reinterpret_cast<char*>(b), 4);
}

struct Reader {
  std::vector<uint8_t> bytes;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > bytes.size()) throw FormatError("msim: truncated file");
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void MultiSpectralImage::validate() const {
  if (channels < 1 || height < 1 || width < 1)
    throw FormatError("image: degenerate extents");
  if (static_cast<int64_t>(data.size()) != channels * height * width)
    throw FormatError("image: payload size mismatch");
  for (double v : data)
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("image: values must lie in [0,1]");
}

void write_msi(const std::string& path, const MultiSpectralImage& img, MsimDtype dtype) {
  img.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("msim: cannot open for write: " + path);
  f.write(kMagic, 4);
  put_u16(f, kVersion);
  put_u32(f, static_cast<uint32_t>(img.height));
  put_u32(f, static_cast<uint32_t>(img.width));
  put_u16(f, static_cast<uint16_t>(img.channels));
  f.put(static_cast<char>(dtype));
  for (int64_t c = 0; c < img.channels; ++c) {
    const std::string& label = c < static_cast<int64_t>(img.labels.size()) ? img.labels[c] : "";
    put_u16(f, static_cast<uint16_t>(label.size()));
    f.write(label.data(), static_cast<std::streamsize>(label.size()));
  }
  const double maxv = dtype == MsimDtype::kU8 ? 255.0 : 65535.0;
  for (double v : img.data) {
    auto q = static_cast<uint32_t>(std::llround(std::clamp(v, 0.0, 1.0) * maxv));
    if (dtype == MsimDtype::kU8) {
      f.put(static_cast<char>(q));
    } else {
      put_u16(f, static_cast<uint16_t>(q));
    }
  }
  if (!f) throw FormatError("msim: write failed: " + path);
}

MultiSpectralImage read_msi(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("msim: cannot open: " + path);
  Reader r;
  r.bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (r.bytes.size() < 4 || std::memcmp(r.bytes.data(), kMagic, 4) != 0)
    throw FormatError("msim: bad magic");
  r.pos = 4;
  if (r.u16() != kVersion) throw FormatError("msim: unsupported version");
  MultiSpectralImage img;
  img.height = r.u32();
  img.width = r.u32();
  img.channels = r.u16();
  uint8_t dt = r.u8();
  if (dt != 1 && dt != 2) throw FormatError("msim: unknown dtype tag");
  if (img.height < 1 || img.width < 1 || img.channels < 1)
    throw FormatError("msim: degenerate extents");
  for (int64_t c = 0; c < img.channels; ++c) {
    uint16_t len = r.u16();
    img.labels.push_back(r.str(len));
  }
  const int64_t n = img.channels * img.height * img.width;
  const double inv = dt == 1 ? 1.0 / 255.0 : 1.0 / 65535.0;
  img.data.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    uint32_t q = dt == 1 ? r.u8() : r.u16();
    img.data[i] = q * inv;
  }
  if (r.pos != r.bytes.size()) throw FormatError("msim: trailing bytes");
  return img;
}

std::vector<std::string> default_channel_labels(int64_t s) {
  static const char* kAia[9] = {"94", "131", "171", "193", "211", "304", "335", "1600", "1700"};
  std::vector<std::string> out;
  for (int64_t c = 0; c < s; ++c)
    out.push_back(c < 9 ? kAia[c] : "band" + std::to_string(c));
  return out;
}

namespace {

struct TextureMode {
  double fx, fy, amp, phase0, drift, amp_phase, amp_rate;
};

}  // namespace

std::vector<MultiSpectralImage> synth_generate(uint64_t seed, int64_t n, int64_t height,
                                               int64_t width, int64_t channels) {
  // Corpus-level structure: texture modes and per-channel response curves
  // are fixed for the whole corpus; only the texture phases/amplitudes and
  // the noise evolve with the sample index.
  Rng corpus(seed, 0x636f'7270ULL);
  constexpr int kModes = 6;
  std::vector<TextureMode> modes(kModes);
  for (auto& m : modes) {
    m.fx = 1.0 + corpus.below(3);
    m.fy = 1.0 + corpus.below(3);
    m.amp = 0.4 + 0.6 * corpus.uniform();
    m.phase0 = 6.283185307179586 * corpus.uniform();
    m.drift = 0.15 + 0.5 * corpus.uniform();
    m.amp_phase = 6.283185307179586 * corpus.uniform();
    m.amp_rate = 0.1 + 0.3 * corpus.uniform();
  }
  double amp_total = 0;
  for (auto& m : modes) amp_total += m.amp;

  std::vector<double> gain(channels), gamma(channels);
  for (int64_t c = 0; c < channels; ++c) {
    gain[c] = 0.7 + 0.3 * corpus.uniform();
    gamma[c] = 0.7 + 0.7 * corpus.uniform();
  }

  const double cy = 0.5 * (height - 1), cx = 0.5 * (width - 1);
  const double radius = 0.38 * std::min(height, width);
  constexpr double kLimbDarkening = 0.6;
  constexpr double kNoiseAmp = 0.01;

  std::vector<MultiSpectralImage> out;
  out.reserve(n);
  for (int64_t idx = 0; idx < n; ++idx) {
    MultiSpectralImage img;
    img.height = height;
    img.width = width;
    img.channels = channels;
    img.labels = default_channel_labels(channels);
    img.sample_index = idx;
    img.data.resize(channels * height * width);

    // Shared component for this sample.
    std::vector<double> base(height * width);
    for (int64_t r = 0; r < height; ++r) {
      for (int64_t col = 0; col < width; ++col) {
        double tex = 0;
        for (const auto& m : modes) {
          double a = m.amp * (0.6 + 0.4 * std::sin(m.amp_phase + idx * m.amp_rate));
          tex += a * std::sin(6.283185307179586 *
                                  (m.fx * r / double(height) + m.fy * col / double(width)) +
                              m.phase0 + idx * m.drift);
        }
        tex /= amp_total;  // in [-1, 1]
        double dy = r - cy, dx = col - cx;
        double rr = std::sqrt(dy * dy + dx * dx) / radius;
        double disk = 0.0;
        if (rr < 1.0) {
          double mu = std::sqrt(1.0 - rr * rr);
          disk = 1.0 - kLimbDarkening * (1.0 - mu);
        }
        base[r * width + col] = disk * (0.55 + 0.35 * tex);
      }
    }

    for (int64_t c = 0; c < channels; ++c) {
      Rng noise(seed, 0x6e6f'6973ULL + static_cast<uint64_t>(idx) * 131 + c);
      for (int64_t r = 0; r < height; ++r)
        for (int64_t col = 0; col < width; ++col) {
          double b = std::max(0.0, base[r * width + col]);
          double v = gain[c] * std::pow(b, gamma[c]) + 0.02 +
                     kNoiseAmp * (noise.uniform() - 0.5);
          img.at(c, r, col) = std::clamp(v, 0.0, 1.0);
        }
    }
    out.push_back(std::move(img));
  }
  return out;
}

Patch crop_patch(const MultiSpectralImage& img, int64_t size, Rng& rng) {
  if (size < 1 || size > img.height || size > img.width)
    throw UsageError("crop_patch: size exceeds image extents");
  Patch p;
  p.top = rng.below(static_cast<uint32_t>(img.height - size + 1));
  p.left = rng.below(static_cast<uint32_t>(img.width - size + 1));
  p.image.height = size;
  p.image.width = size;
  p.image.channels = img.channels;
  p.image.labels = img.labels;
  p.image.sample_index = img.sample_index;
  p.image.data.resize(img.channels * size * size);
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t r = 0; r < size; ++r)
      for (int64_t col = 0; col < size; ++col)
        p.image.at(c, r, col) = img.at(c, p.top + r, p.left + col);
  return p;
}

DatasetSplit split_train_test(int64_t corpus_size, double cut) {
  if (corpus_size < 1) throw UsageError("split_train_test: empty corpus");
  if (!(cut > 0.0 && cut < 1.0)) throw UsageError("split_train_test: cut must be in (0,1)");
  constexpr int64_t kCycle = 12;
  const auto train_per_cycle =
      std::clamp<int64_t>(std::llround(cut * kCycle), 1, kCycle - 1);
  DatasetSplit split;
  for (int64_t i = 0; i < corpus_size; ++i) {
    if (i % kCycle < train_per_cycle) {
      split.train.push_back(i);
    } else {
      split.test.push_back(i);
    }
  }
  return split;
}

}  // namespace msnc
