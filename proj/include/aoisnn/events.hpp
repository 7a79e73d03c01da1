#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/rng.hpp"
#include "aoisnn/tensor.hpp"

namespace aoisnn {

struct Event {
  std::uint64_t timestamp_us;
  std::uint16_t x;
  std::uint16_t y;
  std::uint8_t polarity;  // 0 or 1
};

struct EventStream {
  std::vector<Event> events;  // timestamp-sorted
  std::uint16_t sensor_width = 0;
  std::uint16_t sensor_height = 0;
  std::uint32_t label = 0;
};

struct BinnedSample {
  Tensor bins;  // [T, 2, h, w] event counts, channel = polarity
  int label = 0;
  std::uint64_t dropped = 0;  // events outside the binning window

  int T() const { return bins.shape()[0]; }

  Tensor bin_at(int t) const {  // t 1-based -> [2, h, w]
    if (t < 1 || t > T()) throw data_error("BinnedSample: no bin for timestep " + std::to_string(t));
    int c = bins.shape()[1], h = bins.shape()[2], w = bins.shape()[3];
    std::size_t plane = static_cast<std::size_t>(c) * h * w;
    std::vector<double> data(bins.raw().begin() + (t - 1) * plane,
                             bins.raw().begin() + t * plane);
    return Tensor({c, h, w}, std::move(data));
  }
};

struct FrameSample {
  Tensor frame;  // [c, h, w], values in [0, 1]
  int label = 0;
};

// ---- little-endian IO helpers ----

namespace leio {

template <typename T>
void write(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write<std::uint32_t>(os, bits);
}

template <typename T>
T read(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw format_error("unexpected end of file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

inline float read_f32(std::istream& is) {
  std::uint32_t bits = read<std::uint32_t>(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace leio

// ---- AEDAT-lite container ----
// magic "AESL", version u16=1, width u16, height u16, label u32,
// event_count u64, then records of (timestamp_us u64, x u16, y u16,
// polarity u8, pad u8).

inline void write_event_stream(const std::string& path, const EventStream& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot write " + path);
  os.write("AESL", 4);
  leio::write<std::uint16_t>(os, 1);
  leio::write<std::uint16_t>(os, s.sensor_width);
  leio::write<std::uint16_t>(os, s.sensor_height);
  leio::write<std::uint32_t>(os, s.label);
  leio::write<std::uint64_t>(os, s.events.size());
  for (const Event& e : s.events) {
    leio::write<std::uint64_t>(os, e.timestamp_us);
    leio::write<std::uint16_t>(os, e.x);
    leio::write<std::uint16_t>(os, e.y);
    leio::write<std::uint8_t>(os, e.polarity);
    leio::write<std::uint8_t>(os, 0);
  }
  if (!os) throw data_error("write failed for " + path);
}

inline EventStream load_event_stream(const std::string& path, bool strict_order = true) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AESL", 4) != 0)
    throw format_error(path + ": bad magic, not an AEDAT-lite file");
  std::uint16_t version = leio::read<std::uint16_t>(is);
  if (version != 1) throw format_error(path + ": unsupported version " + std::to_string(version));
  EventStream s;
  s.sensor_width = leio::read<std::uint16_t>(is);
  s.sensor_height = leio::read<std::uint16_t>(is);
  if (s.sensor_width == 0 || s.sensor_height == 0)
    throw format_error(path + ": zero sensor extent");
  s.label = leio::read<std::uint32_t>(is);
  std::uint64_t count = leio::read<std::uint64_t>(is);
  s.events.reserve(count);
  std::uint64_t prev_ts = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.timestamp_us = leio::read<std::uint64_t>(is);
    e.x = leio::read<std::uint16_t>(is);
    e.y = leio::read<std::uint16_t>(is);
    e.polarity = leio::read<std::uint8_t>(is);
    leio::read<std::uint8_t>(is);  // pad
    if (e.x >= s.sensor_width || e.y >= s.sensor_height)
      throw data_error(path + ": event " + std::to_string(i) + " coordinate out of bounds");
    if (e.polarity > 1)
      throw data_error(path + ": event " + std::to_string(i) + " has invalid polarity");
    if (i > 0 && e.timestamp_us < prev_ts) {
      if (strict_order)
        throw data_error(path + ": event " + std::to_string(i) + " breaks timestamp order");
    }
    prev_ts = e.timestamp_us;
    s.events.push_back(e);
  }
  if (!strict_order)
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp_us < b.timestamp_us; });
  return s;
}

// ---- frame container ----
// magic "AFRM", version u16=1, channels u16, height u16, width u16,
// label u32, then c*h*w little-endian f32.

inline void write_frame_sample(const std::string& path, const FrameSample& f) {
  const Shape& sh = f.frame.shape();
  if (sh.size() != 3) throw contract_error("write_frame_sample: frame must be 3-d");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot write " + path);
  os.write("AFRM", 4);
  leio::write<std::uint16_t>(os, 1);
  leio::write<std::uint16_t>(os, static_cast<std::uint16_t>(sh[0]));
  leio::write<std::uint16_t>(os, static_cast<std::uint16_t>(sh[1]));
  leio::write<std::uint16_t>(os, static_cast<std::uint16_t>(sh[2]));
  leio::write<std::uint32_t>(os, static_cast<std::uint32_t>(f.label));
  for (std::size_t i = 0; i < f.frame.numel(); ++i)
    leio::write_f32(os, static_cast<float>(f.frame[i]));
  if (!os) throw data_error("write failed for " + path);
}

inline FrameSample load_frame_sample(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AFRM", 4) != 0)
    throw format_error(path + ": bad magic, not a frame file");
  std::uint16_t version = leio::read<std::uint16_t>(is);
  if (version != 1) throw format_error(path + ": unsupported version " + std::to_string(version));
  int c = leio::read<std::uint16_t>(is);
  int h = leio::read<std::uint16_t>(is);
  int w = leio::read<std::uint16_t>(is);
  FrameSample f;
  f.label = static_cast<int>(leio::read<std::uint32_t>(is));
  f.frame = Tensor({c, h, w});
  for (std::size_t i = 0; i < f.frame.numel(); ++i) {
    double v = leio::read_f32(is);
    if (v < 0.0 || v > 1.0) throw data_error(path + ": frame value outside [0,1]");
    f.frame[i] = v;
  }
  return f;
}

// ---- binning ----

// Event at ts lands in bin floor((ts - t0) * T / (t1 - t0)), clamped to
// T-1 at the right edge; out-of-window events are dropped and counted.
inline BinnedSample bin_events(const EventStream& s, int T, std::uint64_t t0, std::uint64_t t1,
                               bool binarize = false) {
  if (T < 1) throw contract_error("bin_events: T must be >= 1");
  if (t1 <= t0) throw contract_error("bin_events: empty window");
  BinnedSample out;
  out.label = static_cast<int>(s.label);
  out.bins = Tensor({T, 2, s.sensor_height, s.sensor_width});
  int h = s.sensor_height, w = s.sensor_width;
  double span = static_cast<double>(t1 - t0);
  for (const Event& e : s.events) {
    if (e.timestamp_us < t0 || e.timestamp_us >= t1) {
      ++out.dropped;
      continue;
    }
    int bin = static_cast<int>(static_cast<double>(e.timestamp_us - t0) * T / span);
    if (bin >= T) bin = T - 1;
    std::size_t idx = ((static_cast<std::size_t>(bin) * 2 + e.polarity) * h + e.y) * w + e.x;
    if (binarize)
      out.bins[idx] = 1.0;
    else
      out.bins[idx] += 1.0;
  }
  return out;
}

// ---- pixel-shift augmentation ----

namespace detail {
inline Tensor shift_planes(const Tensor& x, int dy, int dx) {
  // Shift every trailing h x w plane; vacated cells are zero.
  const Shape& sh = x.shape();
  int h = sh[sh.size() - 2], w = sh[sh.size() - 1];
  std::size_t planes = x.numel() / (static_cast<std::size_t>(h) * w);
  Tensor out(sh);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * h * w;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        int sy = y - dy, sx = xx - dx;
        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
        dst[y * w + xx] = src[sy * w + sx];
      }
  }
  return out;
}
}  // namespace detail

// Translation by round(frac * extent) pixels; content shifted off the edge
// is dropped.
inline Tensor augment_shift(const Tensor& sample, double dx_frac, double dy_frac,
                            double max_frac = 0.2) {
  if (std::fabs(dx_frac) > max_frac || std::fabs(dy_frac) > max_frac)
    throw config_error("augment_shift: fraction outside configured range");
  const Shape& sh = sample.shape();
  if (sh.size() < 2) throw contract_error("augment_shift: sample must have spatial dims");
  int h = sh[sh.size() - 2], w = sh[sh.size() - 1];
  int dy = static_cast<int>(std::lround(dy_frac * h));
  int dx = static_cast<int>(std::lround(dx_frac * w));
  if (dy == 0 && dx == 0) return sample;
  return detail::shift_planes(sample, dy, dx);
}

inline Tensor augment_shift_random(const Tensor& sample, double max_frac, Rng& rng) {
  double dx = rng.uniform(-max_frac, max_frac);
  double dy = rng.uniform(-max_frac, max_frac);
  return augment_shift(sample, dx, dy, max_frac);
}

}  // namespace aoisnn
