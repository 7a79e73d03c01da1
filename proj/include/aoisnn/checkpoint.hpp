#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/network.hpp"

namespace aoisnn {

// ---- CRC32 (IEEE, reflected) ----

inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// ---- checkpoint container ----
// magic "AOIS", version u16=1, config_hash u64, epoch u32, seed u64,
// spec_len u32 + canonical spec text, tensor count u32, per tensor
// (ndims u16, extents u32...), then f32 blobs in declaration order
// (weights then bias per layer), trailing CRC32 of everything before it.

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint32_t epoch = 0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  NetworkSpec spec;
  NetworkParams params;
  CheckpointMeta meta;
};

namespace detail {

template <typename T>
void buf_write(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void buf_write_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  buf_write<std::uint32_t>(buf, bits);
}

template <typename T>
T buf_read(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw format_error("checkpoint: truncated file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

inline float buf_read_f32(const std::string& buf, std::size_t& pos) {
  std::uint32_t bits = buf_read<std::uint32_t>(buf, pos);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline std::string checkpoint_bytes(const NetworkSpec& spec, const NetworkParams& params,
                                    const CheckpointMeta& meta) {
  std::string buf;
  buf += "AOIS";
  detail::buf_write<std::uint16_t>(buf, 1);
  detail::buf_write<std::uint64_t>(buf, meta.config_hash);
  detail::buf_write<std::uint32_t>(buf, meta.epoch);
  detail::buf_write<std::uint64_t>(buf, meta.seed);
  std::string spec_text = spec.canonical_text();
  detail::buf_write<std::uint32_t>(buf, static_cast<std::uint32_t>(spec_text.size()));
  buf += spec_text;
  std::vector<const Tensor*> tensors;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    tensors.push_back(&params.weights[i].value);
    tensors.push_back(&params.biases[i].value);
  }
  detail::buf_write<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    detail::buf_write<std::uint16_t>(buf, static_cast<std::uint16_t>(t->shape().size()));
    for (int e : t->shape()) detail::buf_write<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
  }
  for (const Tensor* t : tensors)
    for (std::size_t i = 0; i < t->numel(); ++i)
      detail::buf_write_f32(buf, static_cast<float>((*t)[i]));
  std::uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
  detail::buf_write<std::uint32_t>(buf, crc);
  return buf;
}

inline void checkpoint_save(const std::string& path, const NetworkSpec& spec,
                            const NetworkParams& params, const CheckpointMeta& meta) {
  std::string buf = checkpoint_bytes(spec, params, meta);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot write checkpoint " + path);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw data_error("write failed for checkpoint " + path);
}

inline Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 8) throw format_error("checkpoint: truncated file");
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i]))
              << (8 * i);
  std::uint32_t actual =
      crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
  if (stored != actual) throw format_error("checkpoint: CRC mismatch, file corrupt or truncated");
  std::size_t pos = 0;
  if (buf.compare(0, 4, "AOIS") != 0) throw format_error("checkpoint: bad magic");
  pos = 4;
  std::uint16_t version = detail::buf_read<std::uint16_t>(buf, pos);
  if (version != 1) throw format_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint cp;
  cp.meta.config_hash = detail::buf_read<std::uint64_t>(buf, pos);
  cp.meta.epoch = detail::buf_read<std::uint32_t>(buf, pos);
  cp.meta.seed = detail::buf_read<std::uint64_t>(buf, pos);
  std::uint32_t spec_len = detail::buf_read<std::uint32_t>(buf, pos);
  if (pos + spec_len > buf.size()) throw format_error("checkpoint: truncated spec");
  cp.spec = NetworkSpec::parse(buf.substr(pos, spec_len));
  pos += spec_len;
  std::uint32_t count = detail::buf_read<std::uint32_t>(buf, pos);
  std::vector<Shape> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t nd = detail::buf_read<std::uint16_t>(buf, pos);
    Shape s;
    for (int d = 0; d < nd; ++d)
      s.push_back(static_cast<int>(detail::buf_read<std::uint32_t>(buf, pos)));
    shapes.push_back(std::move(s));
  }
  // Validate the shape table against the spec before touching the blobs.
  NetworkParams expect = NetworkParams::init(cp.spec, 0);
  if (count != 2 * expect.weights.size())
    throw format_error("checkpoint: tensor count does not match spec");
  for (std::size_t i = 0; i < expect.weights.size(); ++i) {
    if (shapes[2 * i] != expect.weights[i].value.shape() ||
        shapes[2 * i + 1] != expect.biases[i].value.shape())
      throw format_error("checkpoint: shape table does not match embedded spec");
  }
  cp.params = std::move(expect);
  for (std::size_t i = 0; i < cp.params.weights.size(); ++i) {
    Tensor& w = cp.params.weights[i].value;
    for (std::size_t j = 0; j < w.numel(); ++j) w[j] = detail::buf_read_f32(buf, pos);
    Tensor& b = cp.params.biases[i].value;
    for (std::size_t j = 0; j < b.numel(); ++j) b[j] = detail::buf_read_f32(buf, pos);
  }
  if (pos != buf.size() - 4) throw format_error("checkpoint: trailing bytes");
  cp.params.zero_grad();
  return cp;
}

// Rounds parameters through 32-bit storage precision in place (the state a
// checkpoint round-trip leaves them in).
inline void quantize_params_f32(NetworkParams& params) {
  auto q = [](Parameter& p) {
    for (std::size_t i = 0; i < p.value.numel(); ++i)
      p.value[i] = static_cast<double>(static_cast<float>(p.value[i]));
  };
  for (Parameter& w : params.weights) q(w);
  for (Parameter& b : params.biases) q(b);
}

}  // namespace aoisnn
