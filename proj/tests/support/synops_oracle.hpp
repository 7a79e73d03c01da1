#pragma once

#include <cmath>
#include <cstdint>

#include "aoisnn/aoisnn.hpp"

namespace aoisnn::oracle {

// Independent synops oracle: connections of one producer position, found by
// walking the layer list forward and enumerating every weighted connection
// that reads it.
inline std::uint64_t brute_connections(const NetworkSpec& spec, int first_layer, Shape shape,
                                       std::ptrdiff_t pos) {
  Shape cur = shape;
  for (std::size_t i = static_cast<std::size_t>(first_layer); i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::dense || l.kind == LayerKind::head)
      return static_cast<std::uint64_t>(l.units);
    if (l.kind == LayerKind::conv) {
      int h = cur[1], w = cur[2];
      int ho = (h + 2 * l.padding - l.kernel) / l.stride + 1;
      int wo = (w + 2 * l.padding - l.kernel) / l.stride + 1;
      int rem = static_cast<int>(pos % (h * w));
      int y = rem / w, x = rem % w;
      std::uint64_t n = 0;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          int dy = y - (oy * l.stride - l.padding);
          int dx = x - (ox * l.stride - l.padding);
          if (dy >= 0 && dy < l.kernel && dx >= 0 && dx < l.kernel) ++n;
        }
      return n * static_cast<std::uint64_t>(l.out_channels);
    }
    if (l.kind == LayerKind::avg_pool) {
      int c = cur[0], h = cur[1], w = cur[2];
      int k = l.kernel, ho = h / k, wo = w / k;
      int ch = static_cast<int>(pos / (h * w));
      int rem = static_cast<int>(pos % (h * w));
      int y = rem / w, x = rem % w;
      if (y >= ho * k || x >= wo * k) return 0;
      pos = (static_cast<std::ptrdiff_t>(ch) * ho + y / k) * wo + x / k;
      cur = {c, ho, wo};
    } else if (l.kind == LayerKind::flatten) {
      cur = {static_cast<int>(shape_numel(cur))};
    }
  }
  return 0;
}

inline std::uint64_t brute_synops(const NetworkSpec& spec, const ForwardRecord& rec,
                                  const SampleInput& sample, int t_stop) {
  double total = 0.0;
  auto shapes = spec.layer_shapes();
  std::vector<int> spiking = spec.spiking_layer_indices();
  for (int t = 1; t <= t_stop; ++t) {
    if (sample.event_mode) {
      const Tensor& bins = sample.at(t);
      Shape in = {spec.in_channels, spec.in_h, spec.in_w};
      for (std::size_t p = 0; p < bins.numel(); ++p)
        if (bins[p] != 0.0)
          total += bins[p] * static_cast<double>(brute_connections(
                                 spec, 0, in, static_cast<std::ptrdiff_t>(p)));
    }
    for (std::size_t li = 0; li < spiking.size(); ++li) {
      const Tensor& spikes = rec.spike_tensors[li][t - 1];
      for (std::size_t p = 0; p < spikes.numel(); ++p)
        if (spikes[p] != 0.0)
          total += spikes[p] * static_cast<double>(brute_connections(
                                   spec, spiking[li] + 1, shapes[spiking[li]],
                                   static_cast<std::ptrdiff_t>(p)));
    }
  }
  return static_cast<std::uint64_t>(std::llround(total));
}

inline NetworkSpec random_tiny_network(Rng& rng) {
  for (;;) {
    NetworkSpec spec;
    spec.in_channels = 1 + static_cast<int>(rng.below(2));
    spec.in_h = 4 + static_cast<int>(rng.below(4));
    spec.in_w = 4 + static_cast<int>(rng.below(4));
    int c1 = 1 + static_cast<int>(rng.below(3));
    int k1 = 2 + static_cast<int>(rng.below(2));
    int s1 = 1 + static_cast<int>(rng.below(2));
    int pad = static_cast<int>(rng.below(2));
    spec.layers.push_back(NetworkSpec::conv(c1, k1, s1, pad));
    switch (rng.below(4)) {
      case 0:
        break;
      case 1:
        spec.layers.push_back(NetworkSpec::conv(1 + static_cast<int>(rng.below(3)), 2, 1));
        break;
      case 2:
        spec.layers.push_back(NetworkSpec::avg_pool(2));
        break;
      default:
        spec.layers.push_back(NetworkSpec::conv(2, 2, 1));
        spec.layers.push_back(NetworkSpec::avg_pool(2));
        break;
    }
    spec.layers.push_back(NetworkSpec::flatten());
    if (rng.bernoulli(0.5))
      spec.layers.push_back(NetworkSpec::dense(2 + static_cast<int>(rng.below(6))));
    spec.layers.push_back(NetworkSpec::head(2 + static_cast<int>(rng.below(3))));
    try {
      spec.validate();
      return spec;
    } catch (const config_error&) {
    }
  }
}

inline SampleInput random_sample(const NetworkSpec& spec, int T, Rng& rng, bool event_mode) {
  SampleInput s;
  s.event_mode = event_mode;
  s.label = static_cast<int>(rng.below(spec.num_classes()));
  if (event_mode) {
    for (int t = 0; t < T; ++t) {
      Tensor bin({spec.in_channels, spec.in_h, spec.in_w});
      for (std::size_t i = 0; i < bin.numel(); ++i)
        bin[i] = rng.bernoulli(0.4) ? static_cast<double>(1 + rng.below(2)) : 0.0;
      s.bins.push_back(std::move(bin));
    }
  } else {
    s.frame = Tensor({spec.in_channels, spec.in_h, spec.in_w});
    for (std::size_t i = 0; i < s.frame.numel(); ++i) s.frame[i] = rng.uniform(0, 1);
  }
  return s;
}

}  // namespace aoisnn::oracle
