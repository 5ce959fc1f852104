#include "msnc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace msnc {

namespace {

constexpr char kMagic[] = "MSNC-CKPT";
constexpr size_t kMagicLen = 9;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > b.size()) throw FormatError("checkpoint: truncated");
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
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  uint8_t u8() {
    need(1);
    return b[pos++];
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
};

void put_config(std::vector<uint8_t>& out, const ModelConfig& c) {
  put_u16(out, static_cast<uint16_t>(c.stage_dims.size()));
  for (int64_t d : c.stage_dims) put_u16(out, static_cast<uint16_t>(d));
  put_u16(out, static_cast<uint16_t>(c.window));
  put_u16(out, static_cast<uint16_t>(c.topk));
  put_u16(out, static_cast<uint16_t>(c.head_width));
  put_u16(out, static_cast<uint16_t>(c.latent_channels));
  put_u16(out, static_cast<uint16_t>(c.hyper_channels));
  put_u16(out, static_cast<uint16_t>(c.mlp_ratio));
  put_u16(out, static_cast<uint16_t>(c.aggregated_blocks));
  put_u16(out, static_cast<uint16_t>(c.shift_pairs));
  put_u16(out, static_cast<uint16_t>(c.spectral_channels));
  out.push_back(static_cast<uint8_t>(c.shift_preset));
  out.push_back(c.swin_baseline ? 1 : 0);
  auto groups = c.channel_groups();
  put_u16(out, static_cast<uint16_t>(groups.size()));
  for (int64_t g : groups) put_u16(out, static_cast<uint16_t>(g));
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.stage_dims.clear();
  uint16_t n = r.u16();
  for (int i = 0; i < n; ++i) c.stage_dims.push_back(r.u16());
  c.window = r.u16();
  c.topk = r.u16();
  c.head_width = r.u16();
  c.latent_channels = r.u16();
  c.hyper_channels = r.u16();
  c.mlp_ratio = r.u16();
  c.aggregated_blocks = r.u16();
  c.shift_pairs = r.u16();
  c.spectral_channels = r.u16();
  uint8_t preset = r.u8();
  if (preset > 2) throw FormatError("checkpoint: unknown shift preset");
  c.shift_preset = static_cast<ShiftPreset>(preset);
  c.swin_baseline = r.u8() != 0;
  c.groups.clear();
  uint16_t ng = r.u16();
  for (int i = 0; i < ng; ++i) c.groups.push_back(r.u16());
  return c;
}

}  // namespace

uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t seed) {
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<uint8_t> out(kMagic, kMagic + kMagicLen);
  put_u16(out, ckpt.version);
  put_config(out, ckpt.config);
  put_u32(out, static_cast<uint32_t>(ckpt.records.size()));
  for (size_t i = 0; i < ckpt.records.size(); ++i) {
    const auto& rec = ckpt.records[i];
    if (i > 0 && !(ckpt.records[i - 1].name < rec.name))
      throw UsageError("checkpoint: records must be strictly name-sorted");
    put_u16(out, static_cast<uint16_t>(rec.name.size()));
    out.insert(out.end(), rec.name.begin(), rec.name.end());
    out.push_back(static_cast<uint8_t>(rec.shape.size()));
    for (int64_t e : rec.shape) put_u32(out, static_cast<uint32_t>(e));
    for (float v : rec.values) put_f32(out, v);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));
  return out;
}

Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kMagicLen + 2 + 8 ||
      std::memcmp(bytes.data(), kMagic, kMagicLen) != 0)
    throw FormatError("checkpoint: bad magic");
  uint64_t want = fnv1a64(bytes.data(), bytes.size() - 8);
  Reader tail{bytes, bytes.size() - 8};
  if (tail.u64() != want) throw FormatError("checkpoint: digest mismatch");

  Reader r{bytes, kMagicLen};
  Checkpoint ckpt;
  ckpt.version = r.u16();
  if (ckpt.version != 1) throw FormatError("checkpoint: unsupported version");
  ckpt.config = read_config(r);
  uint32_t count = r.u32();
  ckpt.records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    uint16_t name_len = r.u16();
    rec.name = r.str(name_len);
    uint8_t nd = r.u8();
    int64_t n = 1;
    for (int d = 0; d < nd; ++d) {
      rec.shape.push_back(r.u32());
      n *= rec.shape.back();
    }
    rec.values.resize(n);
    for (int64_t j = 0; j < n; ++j) rec.values[j] = r.f32();
    if (i > 0 && !(ckpt.records[i - 1].name < rec.name))
      throw FormatError("checkpoint: records out of order");
    ckpt.records.push_back(std::move(rec));
  }
  if (r.pos != bytes.size() - 8) throw FormatError("checkpoint: trailing bytes");
  ckpt.digest = want;
  return ckpt;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  auto bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

uint64_t checkpoint_digest(const std::string& path) { return load_checkpoint_file(path).digest; }

}  // namespace msnc
