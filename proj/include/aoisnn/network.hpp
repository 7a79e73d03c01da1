#pragma once

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/lif.hpp"
#include "aoisnn/rng.hpp"
#include "aoisnn/tape.hpp"
#include "aoisnn/tensor.hpp"

namespace aoisnn {

enum class LayerKind { conv, dense, avg_pool, flatten, head };

struct LayerSpec {
  LayerKind kind;
  int out_channels = 0;  // conv
  int kernel = 0;        // conv / pool
  int stride = 1;        // conv
  int padding = 0;       // conv
  int units = 0;         // dense / head
  LIFParams lif;         // conv and dense layers fire; head does not

  bool spiking() const { return kind == LayerKind::conv || kind == LayerKind::dense; }
};

// Declarative network description. Layer 0 is the encoder (first conv for
// the toy setups); the last layer must be the non-spiking output head.
struct NetworkSpec {
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  std::vector<LayerSpec> layers;

  static LayerSpec conv(int out_channels, int kernel, int stride, int padding = 0,
                        LIFParams lif = {}) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.lif = lif;
    return l;
  }
  static LayerSpec dense(int units, LIFParams lif = {}) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.units = units;
    l.lif = lif;
    return l;
  }
  static LayerSpec avg_pool(int kernel) {
    LayerSpec l;
    l.kind = LayerKind::avg_pool;
    l.kernel = kernel;
    return l;
  }
  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
  }
  static LayerSpec head(int units) {
    LayerSpec l;
    l.kind = LayerKind::head;
    l.units = units;
    return l;
  }

  int num_classes() const { return layers.back().units; }

  std::vector<int> spiking_layer_indices() const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].spiking()) idx.push_back(static_cast<int>(i));
    return idx;
  }

  void validate() const {
    if (in_channels < 1 || in_h < 1 || in_w < 1)
      throw config_error("NetworkSpec: invalid input extents");
    if (layers.empty() || layers.back().kind != LayerKind::head)
      throw config_error("NetworkSpec: last layer must be the output head");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
      if (layers[i].kind == LayerKind::head)
        throw config_error("NetworkSpec: head must be the last layer");
    for (const LayerSpec& l : layers)
      if (l.spiking()) l.lif.validate();
    layer_shapes();  // throws on any shape inconsistency
  }

  // Output shape of each layer, in order.
  std::vector<Shape> layer_shapes() const {
    std::vector<Shape> out;
    Shape cur = {in_channels, in_h, in_w};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      switch (l.kind) {
        case LayerKind::conv: {
          if (cur.size() != 3)
            throw config_error("NetworkSpec: conv layer " + std::to_string(i) +
                               " requires 3-d input, got " + shape_str(cur));
          int h = cur[1], w = cur[2];
          if (h + 2 * l.padding < l.kernel || w + 2 * l.padding < l.kernel)
            throw config_error("NetworkSpec: conv kernel exceeds padded input at layer " +
                               std::to_string(i));
          int ho = (h + 2 * l.padding - l.kernel) / l.stride + 1;
          int wo = (w + 2 * l.padding - l.kernel) / l.stride + 1;
          cur = {l.out_channels, ho, wo};
          break;
        }
        case LayerKind::avg_pool: {
          if (cur.size() != 3)
            throw config_error("NetworkSpec: pool layer " + std::to_string(i) +
                               " requires 3-d input");
          cur = {cur[0], cur[1] / l.kernel, cur[2] / l.kernel};
          if (cur[1] < 1 || cur[2] < 1)
            throw config_error("NetworkSpec: pool kernel exceeds input at layer " +
                               std::to_string(i));
          break;
        }
        case LayerKind::flatten:
          cur = {static_cast<int>(shape_numel(cur))};
          break;
        case LayerKind::dense:
        case LayerKind::head: {
          if (cur.size() != 1)
            throw config_error("NetworkSpec: layer " + std::to_string(i) +
                               " requires flattened input, got " + shape_str(cur));
          cur = {l.units};
          break;
        }
      }
      out.push_back(cur);
    }
    return out;
  }

  std::string canonical_text() const;
  static NetworkSpec parse(const std::string& text);
};

namespace detail {
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string NetworkSpec::canonical_text() const {
  std::ostringstream os;
  os << "input " << in_channels << ' ' << in_h << ' ' << in_w << '\n';
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerKind::conv:
        os << "conv " << l.out_channels << ' ' << l.kernel << ' ' << l.stride << ' ' << l.padding
           << " lif " << detail::fmt_double(l.lif.tau) << ' ' << detail::fmt_double(l.lif.v_thr)
           << ' ' << detail::fmt_double(l.lif.surrogate_width) << '\n';
        break;
      case LayerKind::dense:
        os << "dense " << l.units << " lif " << detail::fmt_double(l.lif.tau) << ' '
           << detail::fmt_double(l.lif.v_thr) << ' ' << detail::fmt_double(l.lif.surrogate_width)
           << '\n';
        break;
      case LayerKind::avg_pool:
        os << "pool " << l.kernel << '\n';
        break;
      case LayerKind::flatten:
        os << "flatten\n";
        break;
      case LayerKind::head:
        os << "head " << l.units << '\n';
        break;
    }
  }
  return os.str();
}

inline NetworkSpec NetworkSpec::parse(const std::string& text) {
  NetworkSpec spec;
  std::istringstream is(text);
  std::string line;
  bool have_input = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "input") {
      if (!(ls >> spec.in_channels >> spec.in_h >> spec.in_w))
        throw format_error("NetworkSpec: bad input line: " + line);
      have_input = true;
    } else if (tok == "conv" || tok == "dense") {
      LayerSpec l;
      if (tok == "conv") {
        l.kind = LayerKind::conv;
        if (!(ls >> l.out_channels >> l.kernel >> l.stride >> l.padding))
          throw format_error("NetworkSpec: bad conv line: " + line);
      } else {
        l.kind = LayerKind::dense;
        if (!(ls >> l.units)) throw format_error("NetworkSpec: bad dense line: " + line);
      }
      std::string lif_tok;
      if (!(ls >> lif_tok) || lif_tok != "lif" ||
          !(ls >> l.lif.tau >> l.lif.v_thr >> l.lif.surrogate_width))
        throw format_error("NetworkSpec: missing lif parameters: " + line);
      spec.layers.push_back(l);
    } else if (tok == "pool") {
      LayerSpec l;
      l.kind = LayerKind::avg_pool;
      if (!(ls >> l.kernel)) throw format_error("NetworkSpec: bad pool line: " + line);
      spec.layers.push_back(l);
    } else if (tok == "flatten") {
      spec.layers.push_back(LayerSpec{LayerKind::flatten});
    } else if (tok == "head") {
      LayerSpec l;
      l.kind = LayerKind::head;
      if (!(ls >> l.units)) throw format_error("NetworkSpec: bad head line: " + line);
      spec.layers.push_back(l);
    } else {
      throw format_error("NetworkSpec: unknown layer kind '" + tok + "'");
    }
  }
  if (!have_input) throw format_error("NetworkSpec: missing input line");
  spec.validate();
  return spec;
}

// The scaled-down reference architecture used by the CLI default and tests:
// LIF conv 16f k4 s2 -> LIF conv 32f k3 s1 -> avgpool 2 -> LIF dense 256
// -> affine head. The rectangular surrogate is widened to 2 so layers whose
// membranes sit well under threshold still receive gradient, and the dense
// layer is non-leaky: retaining residual membrane keeps the spatio-temporal
// ratio of its spike output moderate instead of letting it blow up when the
// residual norm shrinks.
inline NetworkSpec toy_network(int in_channels, int in_h, int in_w, int classes) {
  NetworkSpec spec;
  spec.in_channels = in_channels;
  spec.in_h = in_h;
  spec.in_w = in_w;
  LIFParams wide;
  wide.surrogate_width = 2.0;
  LIFParams deep;
  deep.surrogate_width = 2.0;
  deep.tau = 1.0;
  spec.layers = {NetworkSpec::conv(16, 4, 2, 0, wide), NetworkSpec::conv(32, 3, 1, 0, wide),
                 NetworkSpec::avg_pool(2),             NetworkSpec::flatten(),
                 NetworkSpec::dense(256, deep),        NetworkSpec::head(classes)};
  spec.validate();
  return spec;
}

// Weights and biases for every parameterised layer, in declaration order.
struct NetworkParams {
  // weights[i], biases[i] pair with the i-th conv/dense/head layer.
  std::vector<Parameter> weights;
  std::vector<Parameter> biases;

  static NetworkParams init(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    NetworkParams p;
    Rng rng(Rng::mix(seed, 0x77e1));
    Shape cur = {spec.in_channels, spec.in_h, spec.in_w};
    auto shapes = spec.layer_shapes();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerSpec& l = spec.layers[i];
      if (l.kind == LayerKind::conv) {
        int ci = cur[0];
        int fan_in = ci * l.kernel * l.kernel;
        double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor w({l.out_channels, ci, l.kernel, l.kernel});
        for (std::size_t j = 0; j < w.numel(); ++j) w[j] = rng.uniform(-a, a);
        p.weights.emplace_back(std::move(w));
        // Small positive bias so spiking layers start active on any seed; a
        // layer that never fires at init sees a flat loss and cannot recover.
        p.biases.emplace_back(Tensor::full({l.out_channels}, 0.1));
      } else if (l.kind == LayerKind::dense || l.kind == LayerKind::head) {
        int fan_in = cur[0];
        double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor w({l.units, fan_in});
        for (std::size_t j = 0; j < w.numel(); ++j) w[j] = rng.uniform(-a, a);
        p.weights.emplace_back(std::move(w));
        p.biases.emplace_back(l.kind == LayerKind::dense ? Tensor::full({l.units}, 0.1)
                                                         : Tensor::zeros({l.units}));
      }
      cur = shapes[i];
    }
    return p;
  }

  void zero_grad() {
    for (Parameter& w : weights) w.zero_grad();
    for (Parameter& b : biases) b.zero_grad();
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const Parameter& w : weights) n += w.value.numel();
    for (const Parameter& b : biases) n += b.value.numel();
    return n;
  }
};

// One input sample as seen by the network: either per-timestep event bins
// or a single frame presented as a constant current at every t.
struct SampleInput {
  bool event_mode = true;
  std::vector<Tensor> bins;  // event mode: one tensor per timestep
  Tensor frame;              // frame mode
  int label = 0;

  const Tensor& at(int t) const {  // t is 1-based
    if (event_mode) {
      if (t < 1 || static_cast<std::size_t>(t) > bins.size())
        throw data_error("SampleInput: no event bin for timestep " + std::to_string(t));
      return bins[t - 1];
    }
    return frame;
  }

  int max_t() const { return event_mode ? static_cast<int>(bins.size()) : 0; }
};

struct ForwardOptions {
  SpikeMode spike_mode = SpikeMode::hard;
  bool log_stf = false;          // record per-layer xi vars on the tape
  bool keep_spike_tensors = false;  // retain per-neuron spike values (synops)
  double stf_epsilon = 1e-8;
  double dropout = 0.0;          // applied after dense spiking layers
  std::uint64_t dropout_seed = 0;
  bool train_dropout = false;    // dropout active only when true
};

// Time-unrolled forward pass results. Vars refer to the tape the pass ran on.
struct ForwardRecord {
  std::vector<Var> outputs;                    // logits var per t
  std::vector<Tensor> output_values;           // logits value per t
  std::vector<std::vector<double>> spike_counts;   // [spiking layer][t]
  std::vector<std::vector<Tensor>> spike_tensors;  // [spiking layer][t], optional
  std::vector<std::vector<Var>> xi;            // [spiking layer][t], when log_stf
  std::vector<std::vector<double>> xi_values;  // same, plain values
};

// Steps a network through time on a tape, holding LIF residual state between
// steps. One runner = one sample = one tape.
class NetworkRunner {
 public:
  NetworkRunner(Tape& tape, const NetworkSpec& spec, NetworkParams& params, ForwardOptions opts)
      : tape_(tape), spec_(spec), opts_(opts) {
    spec_.validate();
    auto shapes = spec_.layer_shapes();
    std::size_t pi = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      if (l.kind == LayerKind::conv || l.kind == LayerKind::dense || l.kind == LayerKind::head) {
        weight_vars_.push_back(tape_.param(params.weights[pi]));
        bias_vars_.push_back(tape_.param(params.biases[pi]));
        ++pi;
      } else {
        weight_vars_.push_back(Var{});
        bias_vars_.push_back(Var{});
      }
      if (l.spiking()) residuals_.push_back(tape_.constant(Tensor::zeros(shapes[i])));
      else residuals_.push_back(Var{});
    }
  }

  // Current input to the first layer: W1 * x + b1 (Z^1). Exposed for the
  // encode-input contract; step() uses the same computation.
  Var first_layer_current(const Tensor& input) {
    Var x = tape_.constant(input);
    return layer_current(0, x);
  }

  // Advances one timestep and returns the head logits var.
  Var step(const Tensor& input) {
    ++t_;
    Var cur = tape_.constant(input);
    int spiking_idx = 0;
    Var logits{};
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::dense: {
          Var z = layer_current(static_cast<int>(i), cur);
          Var v = tape_.add(tape_.scale(residuals_[i], l.lif.tau), z);
          Var spikes = tape_.spike(v, l.lif.v_thr, l.lif.surrogate_width, opts_.spike_mode);
          Var one_minus = tape_.affine_scalar(spikes, -1.0, 1.0);
          Var residual = tape_.mul(one_minus, v);
          residuals_[i] = residual;
          record_spiking(spiking_idx, spikes, residual);
          cur = spikes;
          if (l.kind == LayerKind::dense && opts_.train_dropout && opts_.dropout > 0.0)
            cur = apply_dropout(cur, static_cast<int>(i));
          ++spiking_idx;
          break;
        }
        case LayerKind::avg_pool:
          cur = tape_.avg_pool2d(cur, l.kernel);
          break;
        case LayerKind::flatten:
          cur = tape_.reshape(cur, {static_cast<int>(tape_.value(cur).numel())});
          break;
        case LayerKind::head:
          logits = tape_.linear(weight_vars_[i], cur, bias_vars_[i]);
          break;
      }
    }
    record_.outputs.push_back(logits);
    record_.output_values.push_back(tape_.value(logits));
    return logits;
  }

  const ForwardRecord& record() const { return record_; }
  ForwardRecord take_record() { return std::move(record_); }
  Tape& tape() { return tape_; }
  int current_t() const { return t_; }

 private:
  Var layer_current(int layer, Var x) {
    const LayerSpec& l = spec_.layers[layer];
    if (l.kind == LayerKind::conv) {
      Var y = tape_.conv2d(x, weight_vars_[layer], l.stride, l.padding);
      return tape_.add_channel_bias(y, bias_vars_[layer]);
    }
    return tape_.linear(weight_vars_[layer], x, bias_vars_[layer]);
  }

  void record_spiking(int spiking_idx, Var spikes, Var residual) {
    if (record_.spike_counts.size() <= static_cast<std::size_t>(spiking_idx)) {
      record_.spike_counts.emplace_back();
      if (opts_.keep_spike_tensors) record_.spike_tensors.emplace_back();
      if (opts_.log_stf) {
        record_.xi.emplace_back();
        record_.xi_values.emplace_back();
      }
    }
    record_.spike_counts[spiking_idx].push_back(tape_.value(spikes).sum());
    if (opts_.keep_spike_tensors)
      record_.spike_tensors[spiking_idx].push_back(tape_.value(spikes));
    if (opts_.log_stf) {
      Var num = tape_.l2_norm(spikes, 0.0);
      Var den = tape_.l2_norm(residual, opts_.stf_epsilon);
      Var xi = tape_.div_scalar(num, den);
      record_.xi[spiking_idx].push_back(xi);
      record_.xi_values[spiking_idx].push_back(tape_.value(xi).item());
    }
  }

  Var apply_dropout(Var x, int layer) {
    const Tensor& v = tape_.value(x);
    Tensor mask(v.shape());
    Rng rng(Rng::mix(opts_.dropout_seed, static_cast<std::uint64_t>(layer) * 1000003 + t_));
    double keep = 1.0 - opts_.dropout;
    for (std::size_t i = 0; i < mask.numel(); ++i)
      mask[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return tape_.mask_mul(x, std::move(mask));
  }

  Tape& tape_;
  NetworkSpec spec_;
  ForwardOptions opts_;
  std::vector<Var> weight_vars_;
  std::vector<Var> bias_vars_;
  std::vector<Var> residuals_;
  ForwardRecord record_;
  int t_ = 0;
};

// Full unroll over t = 1..T. State starts at zero and is confined to the
// runner, so consecutive calls are independent by construction.
inline ForwardRecord network_forward(Tape& tape, const NetworkSpec& spec, NetworkParams& params,
                                     const SampleInput& sample, int T,
                                     ForwardOptions opts = {}) {
  if (T < 1) throw contract_error("network_forward: T must be >= 1");
  NetworkRunner runner(tape, spec, params, opts);
  for (int t = 1; t <= T; ++t) runner.step(sample.at(t));
  return runner.take_record();
}

}  // namespace aoisnn
