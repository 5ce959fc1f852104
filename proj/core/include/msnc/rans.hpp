#pragma once

// Range asymmetric numeral systems coding over static 16-bit quantized CDF
// tables. 64-bit state, 32-bit renormalization words; symbols are encoded in
// reverse so decoding runs forward. A stream is the flushed final state
// (8 bytes LE) followed by the renormalization words in decoder order.
//
// Compressed image container "MSNC" (little-endian): magic, version u16,
// H u32, W u32, S u16, model digest u64, z-stream (u32 length + bytes),
// then one y-stream per channel group in group order (u32 length + bytes).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msnc/common.hpp"

namespace msnc {

constexpr int kRansProbBits = 16;
constexpr uint32_t kRansProbScale = 1u << kRansProbBits;
constexpr double kRansTailMass = 1e-6;
constexpr int kRansScaleBins = 64;

// Quantized CDF over the integer support [min_sym, max_sym]. cum has one
// entry per symbol plus a terminator: cum[0] = 0, cum.back() = 65536,
// strictly increasing (every symbol keeps frequency >= 1).
struct CdfContext {
  int32_t min_sym = 0;
  int32_t max_sym = 0;
  std::vector<uint32_t> cum;

  int64_t symbol_count() const { return max_sym - min_sym + 1; }
  int32_t clamp_symbol(int32_t s) const {
    return s < min_sym ? min_sym : (s > max_sym ? max_sym : s);
  }
};

struct CdfTable {
  std::vector<CdfContext> contexts;
};

// Largest-remainder quantization of a pmf to 16-bit frequencies; totals are
// exactly 2^16 and every symbol gets frequency >= 1. Deterministic.
std::vector<uint32_t> quantize_pmf(const std::vector<double>& pmf);

// 64 log-spaced scale bins over [0.11, 256] (first and last pinned exactly).
const std::vector<double>& rans_scale_bins();

// Lower-bound search: the first bin >= sigma; exact hits keep the smaller bin.
int32_t rans_scale_bin_index(double sigma);

// Zero-mean Gaussian residual context for one scale bin: symmetric support
// sized so the folded tail mass is < 1e-6, tails folded into the edges.
CdfContext gaussian_cdf_context(double sigma);

// All 64 Gaussian scale-bin contexts.
CdfTable build_gaussian_cdf_table();

// Logistic context over the integer support around loc for one hyper
// channel.
CdfContext logistic_cdf_context(double loc, double scale);

// Streams --------------------------------------------------------------------

std::vector<uint8_t> rans_encode(std::span<const int32_t> symbols,
                                 std::span<const int32_t> context_ids, const CdfTable& table);

// Throws FormatError on truncated or corrupt streams; otherwise returns
// exactly `count` symbols and consumes the whole stream.
std::vector<int32_t> rans_decode(std::span<const uint8_t> stream,
                                 std::span<const int32_t> context_ids, const CdfTable& table,
                                 int64_t count);

// Compressed image container --------------------------------------------------

struct MsncFile {
  uint16_t version = 1;
  uint32_t height = 0, width = 0;
  uint16_t channels = 0;
  uint64_t model_digest = 0;
  std::vector<uint8_t> z_stream;
  std::vector<std::vector<uint8_t>> y_streams;

  int64_t total_bytes() const;
};

std::vector<uint8_t> serialize_msnc(const MsncFile& f);
MsncFile parse_msnc(const std::vector<uint8_t>& bytes);
void write_msnc(const std::string& path, const MsncFile& f);
MsncFile read_msnc(const std::string& path);

}  // namespace msnc
