#include "msnc/rans.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace msnc {

namespace {

constexpr uint64_t kRansL = 1ull << 31;

double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

double logistic_cdf(double x, double loc, double scale) {
  return 1.0 / (1.0 + std::exp(-(x - loc) / scale));
}

}  // namespace

std::vector<uint32_t> quantize_pmf(const std::vector<double>& pmf) {
  const size_t n = pmf.size();
  if (n == 0 || n >= kRansProbScale) throw UsageError("quantize_pmf: bad support size");
  double total = 0;
  for (double p : pmf) {
    if (!(p >= 0.0)) throw UsageError("quantize_pmf: negative mass");
    total += p;
  }
  if (total <= 0) throw UsageError("quantize_pmf: zero mass");

  std::vector<uint32_t> freq(n);
  std::vector<double> remainder(n);
  int64_t used = 0;
  for (size_t i = 0; i < n; ++i) {
    double target = pmf[i] / total * kRansProbScale;
    freq[i] = std::max<uint32_t>(1, static_cast<uint32_t>(target));
    remainder[i] = target - std::floor(target);
    used += freq[i];
  }
  // Distribute the leftover to the largest remainders; on overshoot, take
  // back from the largest frequencies. Ties resolve by ascending index.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  if (used < static_cast<int64_t>(kRansProbScale)) {
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return remainder[a] > remainder[b];
    });
    int64_t missing = kRansProbScale - used;
    for (int64_t i = 0; missing > 0; ++i, --missing) freq[order[i % n]] += 1;
  } else if (used > static_cast<int64_t>(kRansProbScale)) {
    int64_t spare = used - kRansProbScale;
    while (spare > 0) {
      size_t best = 0;
      for (size_t i = 1; i < n; ++i)
        if (freq[i] > freq[best]) best = i;
      if (freq[best] <= 1) throw UsageError("quantize_pmf: support too large for precision");
      uint32_t take = static_cast<uint32_t>(
          std::min<int64_t>(spare, static_cast<int64_t>(freq[best]) - 1));
      // Shave at most down to the runner-up so the reduction stays spread.
      uint32_t runner = 1;
      for (size_t i = 0; i < n; ++i)
        if (i != best) runner = std::max(runner, freq[i]);
      if (freq[best] - take < runner) take = freq[best] > runner ? freq[best] - runner : 1;
      freq[best] -= take;
      spare -= take;
    }
  }

  std::vector<uint32_t> cum(n + 1, 0);
  for (size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + freq[i];
  if (cum.back() != kRansProbScale) throw UsageError("quantize_pmf: totals must hit 2^16");
  return cum;
}

const std::vector<double>& rans_scale_bins() {
  static const std::vector<double> bins = [] {
    std::vector<double> b(kRansScaleBins);
    const double lo = std::log(0.11), hi = std::log(256.0);
    for (int i = 0; i < kRansScaleBins; ++i)
      b[i] = std::exp(lo + (hi - lo) * i / double(kRansScaleBins - 1));
    b.front() = 0.11;
    b.back() = 256.0;
    return b;
  }();
  return bins;
}

int32_t rans_scale_bin_index(double sigma) {
  const auto& bins = rans_scale_bins();
  auto it = std::lower_bound(bins.begin(), bins.end(), sigma);
  if (it == bins.end()) return kRansScaleBins - 1;
  return static_cast<int32_t>(it - bins.begin());
}

CdfContext gaussian_cdf_context(double sigma) {
  int32_t smax = 1;
  while (2.0 * (1.0 - normal_cdf((smax + 0.5) / sigma)) >= kRansTailMass) ++smax;
  CdfContext ctx;
  ctx.min_sym = -smax;
  ctx.max_sym = smax;
  std::vector<double> pmf(2 * smax + 1);
  for (int32_t s = -smax; s <= smax; ++s) {
    double p;
    if (s == -smax) {
      p = normal_cdf((s + 0.5) / sigma);
    } else if (s == smax) {
      p = 1.0 - normal_cdf((s - 0.5) / sigma);
    } else {
      p = normal_cdf((s + 0.5) / sigma) - normal_cdf((s - 0.5) / sigma);
    }
    pmf[s + smax] = p;
  }
  ctx.cum = quantize_pmf(pmf);
  return ctx;
}

CdfTable build_gaussian_cdf_table() {
  CdfTable t;
  for (double sigma : rans_scale_bins()) t.contexts.push_back(gaussian_cdf_context(sigma));
  return t;
}

CdfContext logistic_cdf_context(double loc, double scale) {
  const auto center = static_cast<int32_t>(std::llround(loc));
  int32_t radius = 1;
  auto tail = [&](int32_t r) {
    return logistic_cdf(center - r - 0.5, loc, scale) +
           (1.0 - logistic_cdf(center + r + 0.5, loc, scale));
  };
  while (tail(radius) >= kRansTailMass) ++radius;
  CdfContext ctx;
  ctx.min_sym = center - radius;
  ctx.max_sym = center + radius;
  std::vector<double> pmf(2 * radius + 1);
  for (int32_t s = ctx.min_sym; s <= ctx.max_sym; ++s) {
    double p;
    if (s == ctx.min_sym) {
      p = logistic_cdf(s + 0.5, loc, scale);
    } else if (s == ctx.max_sym) {
      p = 1.0 - logistic_cdf(s - 0.5, loc, scale);
    } else {
      p = logistic_cdf(s + 0.5, loc, scale) - logistic_cdf(s - 0.5, loc, scale);
    }
    pmf[s - ctx.min_sym] = p;
  }
  ctx.cum = quantize_pmf(pmf);
  return ctx;
}

std::vector<uint8_t> rans_encode(std::span<const int32_t> symbols,
                                 std::span<const int32_t> context_ids, const CdfTable& table) {
  if (symbols.size() != context_ids.size())
    throw UsageError("rans_encode: one context per symbol required");
  uint64_t x = kRansL;
  std::vector<uint32_t> words;
  for (int64_t i = static_cast<int64_t>(symbols.size()) - 1; i >= 0; --i) {
    const CdfContext& ctx = table.contexts.at(context_ids[i]);
    int32_t s = symbols[i];
    if (s < ctx.min_sym || s > ctx.max_sym)
      throw UsageError("rans_encode: symbol outside context support (clamp upstream)");
    const int64_t idx = s - ctx.min_sym;
    const uint64_t f = ctx.cum[idx + 1] - ctx.cum[idx];
    const uint64_t c = ctx.cum[idx];
    if (x >= ((kRansL >> kRansProbBits) << 32) * f) {
      words.push_back(static_cast<uint32_t>(x));
      x >>= 32;
    }
    x = (x / f) * kRansProbScale + (x % f) + c;
  }
  std::vector<uint8_t> out;
  out.reserve(8 + 4 * words.size());
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(x >> (8 * i)));
  for (auto it = words.rbegin(); it != words.rend(); ++it)
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(*it >> (8 * i)));
  return out;
}

std::vector<int32_t> rans_decode(std::span<const uint8_t> stream,
                                 std::span<const int32_t> context_ids, const CdfTable& table,
                                 int64_t count) {
  if (static_cast<int64_t>(context_ids.size()) != count)
    throw UsageError("rans_decode: one context per symbol required");
  if (stream.size() < 8) throw FormatError("rans: truncated stream (no state)");
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(stream[i]) << (8 * i);
  size_t pos = 8;

  std::vector<int32_t> symbols(count);
  for (int64_t i = 0; i < count; ++i) {
    const CdfContext& ctx = table.contexts.at(context_ids[i]);
    const uint32_t low = static_cast<uint32_t>(x & (kRansProbScale - 1));
    auto it = std::upper_bound(ctx.cum.begin(), ctx.cum.end(), low);
    const auto idx = static_cast<int64_t>(it - ctx.cum.begin()) - 1;
    const uint64_t f = ctx.cum[idx + 1] - ctx.cum[idx];
    const uint64_t c = ctx.cum[idx];
    symbols[i] = ctx.min_sym + static_cast<int32_t>(idx);
    x = f * (x >> kRansProbBits) + low - c;
    while (x < kRansL) {
      if (pos + 4 > stream.size()) throw FormatError("rans: truncated stream");
      uint32_t w = 0;
      for (int b = 0; b < 4; ++b) w |= static_cast<uint32_t>(stream[pos + b]) << (8 * b);
      pos += 4;
      x = (x << 32) | w;
    }
  }
  if (x != kRansL) throw FormatError("rans: corrupt stream (bad final state)");
  if (pos != stream.size()) throw FormatError("rans: stream length mismatch");
  return symbols;
}

// --- MSNC container ----------------------------------------------------------

namespace {

constexpr char kMsncMagic[4] = {'M', 'S', 'N', 'C'};

void put_u16v(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32v(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64v(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct ByteReader {
  std::span<const uint8_t> b;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > b.size()) throw FormatError("msnc: truncated file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(b[pos] | (b[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(b.begin() + pos, b.begin() + pos + n);
    pos += n;
    return out;
  }
};

}  // namespace

int64_t MsncFile::total_bytes() const {
  int64_t n = static_cast<int64_t>(serialize_msnc(*this).size());
  return n;
}

std::vector<uint8_t> serialize_msnc(const MsncFile& f) {
  std::vector<uint8_t> out(kMsncMagic, kMsncMagic + 4);
  put_u16v(out, f.version);
  put_u32v(out, f.height);
  put_u32v(out, f.width);
  put_u16v(out, f.channels);
  put_u64v(out, f.model_digest);
  put_u32v(out, static_cast<uint32_t>(f.z_stream.size()));
  out.insert(out.end(), f.z_stream.begin(), f.z_stream.end());
  for (const auto& ys : f.y_streams) {
    put_u32v(out, static_cast<uint32_t>(ys.size()));
    out.insert(out.end(), ys.begin(), ys.end());
  }
  return out;
}

MsncFile parse_msnc(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMsncMagic, 4) != 0)
    throw FormatError("msnc: bad magic");
  ByteReader r{std::span<const uint8_t>(bytes), 4};
  MsncFile f;
  f.version = r.u16();
  if (f.version != 1) throw FormatError("msnc: unsupported version");
  f.height = r.u32();
  f.width = r.u32();
  f.channels = r.u16();
  f.model_digest = r.u64();
  f.z_stream = r.bytes(r.u32());
  while (r.pos < bytes.size()) f.y_streams.push_back(r.bytes(r.u32()));
  return f;
}

void write_msnc(const std::string& path, const MsncFile& f) {
  auto bytes = serialize_msnc(f);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("msnc: cannot open for write: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("msnc: write failed: " + path);
}

MsncFile read_msnc(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("msnc: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_msnc(bytes);
}

}  // namespace msnc
