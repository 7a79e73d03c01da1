#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/network.hpp"
#include "aoisnn/objective.hpp"

namespace aoisnn {

// Static per-neuron outgoing-connection counts for every spike source in a
// network: the event input (source index 0) and each spiking layer (source
// index 1 + spiking position). Computed once by enumeration and cached.
class SynopsAccountant {
 public:
  explicit SynopsAccountant(const NetworkSpec& spec) : spec_(spec) {
    spec_.validate();
    auto shapes = spec_.layer_shapes();
    // Producer -> consumer pairs: the producer's output feeds the chain of
    // non-weighted layers up to the next weighted layer.
    Shape in_shape = {spec_.in_channels, spec_.in_h, spec_.in_w};
    fanout_.push_back(fanout_through(in_shape, 0, shapes));
    for (std::size_t i = 0; i < spec_.layers.size(); ++i)
      if (spec_.layers[i].spiking())
        fanout_.push_back(fanout_through(shapes[i], static_cast<int>(i) + 1, shapes));
  }

  // Fan-out map of a source (0 = input, 1 + k = k-th spiking layer). Empty
  // tensor means the source feeds nothing (e.g. the last spiking layer would
  // always feed the head, so that does not occur in valid specs).
  const Tensor& fanout(int source) const { return fanout_[source]; }
  int num_sources() const { return static_cast<int>(fanout_.size()); }

  // Total synaptic operations through timestep t_stop (1-based, inclusive).
  // Event mode counts the input bins as spikes; frame mode excludes the
  // analog input.
  std::uint64_t synops(const ForwardRecord& rec, const SampleInput& sample, int t_stop) const {
    if (t_stop < 1 || static_cast<std::size_t>(t_stop) > rec.output_values.size())
      throw contract_error("synops: t_stop out of range");
    if (rec.spike_tensors.empty())
      throw contract_error("synops: forward record lacks spike tensors");
    double total = 0.0;
    for (int t = 1; t <= t_stop; ++t) {
      if (sample.event_mode) {
        const Tensor& bins = sample.at(t);
        const Tensor& f = fanout_[0];
        for (std::size_t i = 0; i < bins.numel(); ++i) total += bins[i] * f[i];
      }
      for (std::size_t l = 0; l < rec.spike_tensors.size(); ++l) {
        const Tensor& spikes = rec.spike_tensors[l][t - 1];
        const Tensor& f = fanout_[l + 1];
        for (std::size_t i = 0; i < spikes.numel(); ++i) total += spikes[i] * f[i];
      }
    }
    return static_cast<std::uint64_t>(std::llround(total));
  }

 private:
  // Per-neuron connection counts of the consumer's input, by enumeration of
  // every weighted connection.
  static Tensor consumer_fanin_counts(const LayerSpec& l, const Shape& in_shape) {
    Tensor counts(in_shape);
    if (l.kind == LayerKind::dense || l.kind == LayerKind::head) {
      for (std::size_t i = 0; i < counts.numel(); ++i) counts[i] = l.units;
      return counts;
    }
    int ci = in_shape[0], h = in_shape[1], w = in_shape[2];
    int ho = (h + 2 * l.padding - l.kernel) / l.stride + 1;
    int wo = (w + 2 * l.padding - l.kernel) / l.stride + 1;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int dy = 0; dy < l.kernel; ++dy)
          for (int dx = 0; dx < l.kernel; ++dx) {
            int iy = oy * l.stride - l.padding + dy;
            int ix = ox * l.stride - l.padding + dx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int icn = 0; icn < ci; ++icn)
              counts.at3(icn, iy, ix) += l.out_channels;
          }
    return counts;
  }

  // Fan-out of a producer whose output enters the layer list at index
  // `first`, traced through pool/flatten to the next weighted layer.
  Tensor fanout_through(Shape shape, int first, const std::vector<Shape>& shapes) const {
    // Identity index mapping from producer position to the consumer input
    // position; -1 marks positions dropped by pooling truncation.
    std::vector<std::ptrdiff_t> map(shape_numel(shape));
    for (std::size_t i = 0; i < map.size(); ++i) map[i] = static_cast<std::ptrdiff_t>(i);
    std::vector<double> weight(map.size(), 1.0);
    Shape cur = shape;
    for (std::size_t i = first; i < spec_.layers.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      if (l.kind == LayerKind::conv || l.kind == LayerKind::dense || l.kind == LayerKind::head) {
        Tensor counts = consumer_fanin_counts(l, cur);
        Tensor out(shape);
        for (std::size_t p = 0; p < map.size(); ++p)
          out[p] = map[p] >= 0 ? counts[map[p]] : 0.0;
        return out;
      }
      if (l.kind == LayerKind::avg_pool) {
        int c = cur[0], h = cur[1], w = cur[2];
        int k = l.kernel, ho = h / k, wo = w / k;
        for (std::size_t p = 0; p < map.size(); ++p) {
          if (map[p] < 0) continue;
          std::ptrdiff_t q = map[p];
          int ch = static_cast<int>(q / (h * w));
          int rem = static_cast<int>(q % (h * w));
          int y = rem / w, x = rem % w;
          if (y >= ho * k || x >= wo * k) {
            map[p] = -1;
            continue;
          }
          map[p] = (static_cast<std::ptrdiff_t>(ch) * ho + y / k) * wo + x / k;
        }
        cur = {c, ho, wo};
      } else if (l.kind == LayerKind::flatten) {
        cur = {static_cast<int>(shape_numel(cur))};
      }
    }
    return Tensor::zeros(shape);  // no consumer
  }

  NetworkSpec spec_;
  std::vector<Tensor> fanout_;
};

// ---- cutoff ----

struct CutoffPolicy {
  double threshold = std::numeric_limits<double>::infinity();  // inf = run to max_T
  int max_T = 1;
  bool cumulative = false;  // score the running-average logits instead of f(X(t))

  void validate() const {
    if (threshold < 0.0) throw config_error("CutoffPolicy: threshold must be >= 0");
    if (max_T < 1) throw config_error("CutoffPolicy: max_T must be >= 1");
  }
};

struct CutoffResult {
  int exit_t = 0;
  int prediction = -1;
  double max_score = 0.0;
  std::uint64_t synops = 0;
};

// Max softmax score and argmax of a logits vector.
inline std::pair<double, int> max_softmax(const Tensor& logits) {
  logits.require_finite("cutoff logits");
  std::size_t best = 0;
  double m = logits[0];
  for (std::size_t i = 1; i < logits.numel(); ++i)
    if (logits[i] > m) m = logits[i], best = i;
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) denom += std::exp(logits[i] - m);
  return {1.0 / denom, static_cast<int>(best)};
}

// Per-sample inference trace: everything a threshold decision needs, so one
// forward pass serves a whole sweep.
struct InferenceTrace {
  std::vector<double> scores;       // max softmax per t
  std::vector<int> predictions;     // argmax per t
  std::vector<std::uint64_t> synops_cum;  // cumulative through t (optional)
  int label = 0;
};

inline InferenceTrace sample_trace(const NetworkSpec& spec, NetworkParams& params,
                                   const SampleInput& sample, int max_T, bool cumulative = false,
                                   const SynopsAccountant* acct = nullptr) {
  Tape tape;
  ForwardOptions opts;
  opts.keep_spike_tensors = acct != nullptr;
  ForwardRecord rec = network_forward(tape, spec, params, sample, max_T, opts);
  InferenceTrace tr;
  tr.label = sample.label;
  Tensor running(rec.output_values[0].shape());
  for (int t = 1; t <= max_T; ++t) {
    const Tensor& z = rec.output_values[t - 1];
    for (std::size_t i = 0; i < z.numel(); ++i) running[i] += z[i];
    Tensor scored = z;
    if (cumulative) {
      scored = running;
      for (std::size_t i = 0; i < scored.numel(); ++i) scored[i] /= t;
    }
    auto [score, pred] = max_softmax(scored);
    tr.scores.push_back(score);
    tr.predictions.push_back(pred);
    if (acct) tr.synops_cum.push_back(acct->synops(rec, sample, t));
  }
  return tr;
}

// First t (1-based) whose score >= threshold, else max_T.
inline int first_crossing(const std::vector<double>& scores, double threshold) {
  for (std::size_t t = 0; t < scores.size(); ++t)
    if (scores[t] >= threshold) return static_cast<int>(t) + 1;
  return static_cast<int>(scores.size());
}

inline CutoffResult cutoff_from_trace(const InferenceTrace& tr, double threshold) {
  CutoffResult r;
  r.exit_t = first_crossing(tr.scores, threshold);
  r.prediction = tr.predictions[r.exit_t - 1];
  r.max_score = tr.scores[r.exit_t - 1];
  if (!tr.synops_cum.empty()) r.synops = tr.synops_cum[r.exit_t - 1];
  return r;
}

// Streaming cutoff: stops the unroll at the first crossing rather than
// evaluating all of max_T.
inline CutoffResult cutoff_run(const NetworkSpec& spec, NetworkParams& params,
                               const SampleInput& sample, const CutoffPolicy& policy,
                               const SynopsAccountant* acct = nullptr) {
  policy.validate();
  Tape tape;
  ForwardOptions opts;
  opts.keep_spike_tensors = acct != nullptr;
  NetworkRunner runner(tape, spec, params, opts);
  Tensor running;
  CutoffResult r;
  for (int t = 1; t <= policy.max_T; ++t) {
    Var logits = runner.step(sample.at(t));
    const Tensor& z = tape.value(logits);
    if (t == 1) running = Tensor(z.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) running[i] += z[i];
    Tensor scored = z;
    if (policy.cumulative) {
      scored = running;
      for (std::size_t i = 0; i < scored.numel(); ++i) scored[i] /= t;
    }
    auto [score, pred] = max_softmax(scored);
    r.exit_t = t;
    r.prediction = pred;
    r.max_score = score;
    if (score >= policy.threshold) break;
  }
  if (acct) r.synops = acct->synops(runner.record(), sample, r.exit_t);
  return r;
}

// ---- dataset-level curves ----

// Fixed-timestep accuracy for each t = 1..T (the "without cutoff" curves).
inline std::vector<double> anytime_curve(const NetworkSpec& spec, NetworkParams& params,
                                         const std::vector<SampleInput>& dataset, int T) {
  if (dataset.empty()) throw contract_error("anytime_curve: empty dataset");
  std::vector<double> correct(T, 0.0);
  for (const SampleInput& s : dataset) {
    InferenceTrace tr = sample_trace(spec, params, s, T);
    for (int t = 0; t < T; ++t)
      if (tr.predictions[t] == s.label) correct[t] += 1.0;
  }
  for (double& c : correct) c /= static_cast<double>(dataset.size());
  return correct;
}

struct SweepRow {
  double threshold = 0.0;
  double accuracy = 0.0;
  double avg_timestep = 0.0;
  double avg_synops = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
};

inline SweepReport threshold_sweep(const NetworkSpec& spec, NetworkParams& params,
                                   const std::vector<SampleInput>& dataset,
                                   const std::vector<double>& thresholds, int max_T,
                                   bool cumulative = false, bool with_synops = true) {
  if (thresholds.empty()) throw contract_error("threshold_sweep: no thresholds");
  if (dataset.empty()) throw contract_error("threshold_sweep: empty dataset");
  SynopsAccountant acct(spec);
  std::vector<InferenceTrace> traces;
  traces.reserve(dataset.size());
  for (const SampleInput& s : dataset)
    traces.push_back(sample_trace(spec, params, s, max_T, cumulative,
                                  with_synops ? &acct : nullptr));
  SweepReport rep;
  for (double thr : thresholds) {
    if (thr < 0.0) throw config_error("threshold_sweep: negative threshold");
    SweepRow row;
    row.threshold = thr;
    for (const InferenceTrace& tr : traces) {
      CutoffResult r = cutoff_from_trace(tr, thr);
      row.accuracy += r.prediction == tr.label ? 1.0 : 0.0;
      row.avg_timestep += r.exit_t;
      row.avg_synops += static_cast<double>(r.synops);
    }
    double n = static_cast<double>(traces.size());
    row.accuracy /= n;
    row.avg_timestep /= n;
    row.avg_synops /= n;
    rep.rows.push_back(row);
  }
  return rep;
}

// n thresholds equally spaced over [lo, hi].
inline std::vector<double> threshold_grid(double lo, double hi, int n) {
  if (n < 1) throw config_error("threshold_grid: n must be >= 1");
  std::vector<double> grid;
  if (n == 1) return {lo};
  for (int i = 0; i < n; ++i) grid.push_back(lo + (hi - lo) * i / (n - 1));
  return grid;
}

inline void write_sweep_csv(std::ostream& os, const SweepReport& rep) {
  os << "threshold,accuracy,avg_timestep,avg_synops\n";
  for (const SweepRow& r : rep.rows)
    os << r.threshold << ',' << r.accuracy << ',' << r.avg_timestep << ',' << r.avg_synops
       << '\n';
}

inline void write_anytime_csv(std::ostream& os, const std::vector<double>& curve) {
  os << "timestep,accuracy\n";
  for (std::size_t t = 0; t < curve.size(); ++t) os << (t + 1) << ',' << curve[t] << '\n';
}

}  // namespace aoisnn
