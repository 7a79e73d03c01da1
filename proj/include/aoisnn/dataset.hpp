#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/events.hpp"
#include "aoisnn/network.hpp"
#include "aoisnn/rng.hpp"

namespace aoisnn {

// ---- manifest ----

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  int label = 0;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  std::string root;  // directory holding the referenced files
  std::string mode = "event";
  std::uint64_t seed = 0;
  int classes = 0;
  int width = 0;
  int height = 0;
  int T = 1;                       // suggested bin count
  std::uint64_t window_us = 100000;  // binning window for event mode
  std::vector<ManifestEntry> entries;

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw data_error("cannot write manifest " + path);
    os << "# aoisnn dataset manifest v1\n";
    os << "mode = " << mode << '\n';
    os << "seed = " << seed << '\n';
    os << "classes = " << classes << '\n';
    os << "width = " << width << '\n';
    os << "height = " << height << '\n';
    os << "T = " << T << '\n';
    os << "window_us = " << window_us << '\n';
    for (const ManifestEntry& e : entries)
      os << "sample " << e.split << ' ' << e.label << ' ' << e.path << '\n';
    if (!os) throw data_error("write failed for manifest " + path);
  }

  static DatasetManifest load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open manifest " + path);
    DatasetManifest m;
    m.root = std::filesystem::path(path).parent_path().string();
    if (m.root.empty()) m.root = ".";
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "sample") {
        ManifestEntry e;
        if (!(ls >> e.split >> e.label >> e.path))
          throw format_error("manifest: bad sample line: " + line);
        if (e.split != "train" && e.split != "test")
          throw format_error("manifest: unknown split '" + e.split + "'");
        m.entries.push_back(e);
      } else {
        std::string eq, value;
        if (!(ls >> eq >> value) || eq != "=")
          throw format_error("manifest: bad line: " + line);
        if (key == "mode") m.mode = value;
        else if (key == "seed") m.seed = std::stoull(value);
        else if (key == "classes") m.classes = std::stoi(value);
        else if (key == "width") m.width = std::stoi(value);
        else if (key == "height") m.height = std::stoi(value);
        else if (key == "T") m.T = std::stoi(value);
        else if (key == "window_us") m.window_us = std::stoull(value);
        else throw format_error("manifest: unknown key '" + key + "'");
      }
    }
    if (m.mode != "event" && m.mode != "frame")
      throw format_error("manifest: mode must be event or frame");
    for (const ManifestEntry& e : m.entries) {
      std::filesystem::path p = std::filesystem::path(m.root) / e.path;
      if (!std::filesystem::exists(p))
        throw data_error("manifest references missing file " + p.string());
    }
    return m;
  }
};

inline SampleInput binned_to_input(const BinnedSample& b) {
  SampleInput s;
  s.event_mode = true;
  s.label = b.label;
  for (int t = 1; t <= b.T(); ++t) s.bins.push_back(b.bin_at(t));
  return s;
}

inline SampleInput frame_to_input(const FrameSample& f) {
  SampleInput s;
  s.event_mode = false;
  s.label = f.label;
  s.frame = f.frame;
  return s;
}

// The frame-mode contract: the same tensor presented at every timestep.
inline std::vector<Tensor> frame_to_current(const FrameSample& f, int T) {
  if (T < 1) throw contract_error("frame_to_current: T must be >= 1");
  return std::vector<Tensor>(T, f.frame);
}

inline std::vector<SampleInput> load_split(const DatasetManifest& m, const std::string& split,
                                           int T, bool binarize = false) {
  std::vector<SampleInput> out;
  for (const ManifestEntry& e : m.entries) {
    if (e.split != split) continue;
    std::string p = (std::filesystem::path(m.root) / e.path).string();
    if (m.mode == "event") {
      EventStream s = load_event_stream(p);
      out.push_back(binned_to_input(bin_events(s, T, 0, m.window_us, binarize)));
    } else {
      out.push_back(frame_to_input(load_frame_sample(p)));
    }
  }
  return out;
}

// ---- synthetic desk-scale datasets ----

struct SynthConfig {
  int classes = 3;
  int train_per_class = 50;
  int test_per_class = 20;
  int height = 16;
  int width = 16;
  std::uint64_t window_us = 100000;
  double rate_hi = 150.0;  // events / s / pixel inside the class pattern
  double rate_lo = 10.0;   // background rate
  std::uint64_t seed = 1;
  std::string mode = "event";

  void validate() const {
    if (classes < 2) throw config_error("SynthConfig: need at least 2 classes");
    if (classes > 8) throw config_error("SynthConfig: at most 8 pattern classes supported");
    if (train_per_class < 1 || test_per_class < 0)
      throw config_error("SynthConfig: bad sample counts");
    if (height < 4 || width < 4) throw config_error("SynthConfig: extent too small");
    if (rate_hi < 0 || rate_lo < 0) throw config_error("SynthConfig: negative rate");
    if (mode != "event" && mode != "frame") throw config_error("SynthConfig: bad mode");
  }
};

namespace detail {

// Spatial class patterns: oriented bands and quadrant blobs. jx/jy jitter
// the pattern by a few pixels so samples within a class vary.
inline bool class_active(int cls, int x, int y, int w, int h, int jx, int jy) {
  x = x - jx;
  y = y - jy;
  switch (cls % 8) {
    case 0: return y >= h / 3 && y < 2 * h / 3;                    // horizontal band
    case 1: return x >= w / 3 && x < 2 * w / 3;                    // vertical band
    case 2: return std::abs(x - y) <= h / 5;                       // main diagonal
    case 3: return std::abs(x + y - (w - 1)) <= h / 5;             // anti-diagonal
    case 4: return x < w / 2 && y < h / 2;                         // quadrant blobs
    case 5: return x >= w / 2 && y < h / 2;
    case 6: return x < w / 2 && y >= h / 2;
    default: return x >= w / 2 && y >= h / 2;
  }
}

}  // namespace detail

inline EventStream synth_event_stream(const SynthConfig& cfg, int cls, std::uint64_t sample_key) {
  Rng rng(Rng::mix(cfg.seed, sample_key));
  int jx = static_cast<int>(rng.below(5)) - 2;
  int jy = static_cast<int>(rng.below(5)) - 2;
  double window_s = static_cast<double>(cfg.window_us) * 1e-6;
  EventStream s;
  s.sensor_width = static_cast<std::uint16_t>(cfg.width);
  s.sensor_height = static_cast<std::uint16_t>(cfg.height);
  s.label = static_cast<std::uint32_t>(cls);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      bool active = detail::class_active(cls, x, y, cfg.width, cfg.height, jx, jy);
      double rate = active ? cfg.rate_hi : cfg.rate_lo;
      int n = rng.poisson(rate * window_s);
      for (int i = 0; i < n; ++i) {
        Event e;
        e.timestamp_us = static_cast<std::uint64_t>(rng.next_double() * cfg.window_us);
        if (e.timestamp_us >= cfg.window_us) e.timestamp_us = cfg.window_us - 1;
        e.x = static_cast<std::uint16_t>(x);
        e.y = static_cast<std::uint16_t>(y);
        e.polarity = active ? (rng.bernoulli(0.8) ? 1 : 0) : (rng.bernoulli(0.5) ? 1 : 0);
        s.events.push_back(e);
      }
    }
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const Event& a, const Event& b) { return a.timestamp_us < b.timestamp_us; });
  return s;
}

inline FrameSample synth_frame_sample(const SynthConfig& cfg, int cls, std::uint64_t sample_key) {
  Rng rng(Rng::mix(cfg.seed, sample_key));
  int jx = static_cast<int>(rng.below(5)) - 2;
  int jy = static_cast<int>(rng.below(5)) - 2;
  FrameSample f;
  f.label = cls;
  f.frame = Tensor({1, cfg.height, cfg.width});
  double hi = cfg.rate_hi, lo = cfg.rate_lo, scale = hi > 0 ? hi : 1.0;
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      bool active = detail::class_active(cls, x, y, cfg.width, cfg.height, jx, jy);
      double base = (active ? hi : lo) / scale;
      double v = base * (0.75 + 0.25 * rng.next_double());
      f.frame.at3(0, y, x) = v > 1.0 ? 1.0 : v;
    }
  return f;
}

// In-memory dataset generation; the CLI's synth command wraps this with
// file output.
struct SynthDataset {
  std::vector<SampleInput> train;
  std::vector<SampleInput> test;
};

inline SynthDataset synth_dataset_memory(const SynthConfig& cfg, int T) {
  cfg.validate();
  SynthDataset out;
  std::uint64_t key = 0;
  for (int cls = 0; cls < cfg.classes; ++cls)
    for (int i = 0; i < cfg.train_per_class; ++i, ++key) {
      if (cfg.mode == "event")
        out.train.push_back(
            binned_to_input(bin_events(synth_event_stream(cfg, cls, key), T, 0, cfg.window_us)));
      else
        out.train.push_back(frame_to_input(synth_frame_sample(cfg, cls, key)));
    }
  for (int cls = 0; cls < cfg.classes; ++cls)
    for (int i = 0; i < cfg.test_per_class; ++i, ++key) {
      if (cfg.mode == "event")
        out.test.push_back(
            binned_to_input(bin_events(synth_event_stream(cfg, cls, key), T, 0, cfg.window_us)));
      else
        out.test.push_back(frame_to_input(synth_frame_sample(cfg, cls, key)));
    }
  return out;
}

// Writes streams/frames plus the manifest under out_dir.
inline DatasetManifest synth_event_dataset(const SynthConfig& cfg, const std::string& out_dir,
                                           int T) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "samples");
  DatasetManifest m;
  m.root = out_dir;
  m.mode = cfg.mode;
  m.seed = cfg.seed;
  m.classes = cfg.classes;
  m.width = cfg.width;
  m.height = cfg.height;
  m.T = T;
  m.window_us = cfg.window_us;
  std::uint64_t key = 0;
  auto emit = [&](const std::string& split, int per_class) {
    for (int cls = 0; cls < cfg.classes; ++cls)
      for (int i = 0; i < per_class; ++i, ++key) {
        char name[64];
        std::snprintf(name, sizeof name, "samples/%s_c%d_%04d.%s", split.c_str(), cls, i,
                      cfg.mode == "event" ? "aesl" : "afrm");
        std::string rel = name;
        std::string full = (fs::path(out_dir) / rel).string();
        if (cfg.mode == "event")
          write_event_stream(full, synth_event_stream(cfg, cls, key));
        else
          write_frame_sample(full, synth_frame_sample(cfg, cls, key));
        m.entries.push_back({rel, cls, split});
      }
  };
  emit("train", cfg.train_per_class);
  emit("test", cfg.test_per_class);
  m.save((fs::path(out_dir) / "manifest.txt").string());
  return m;
}

}  // namespace aoisnn
