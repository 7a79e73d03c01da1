#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/network.hpp"
#include "aoisnn/tape.hpp"

namespace aoisnn {

// ---- task losses ----

// Cross entropy of the time-averaged logits.
inline Var loss_mean(Tape& tape, const std::vector<Var>& outputs, int label) {
  if (outputs.empty()) throw contract_error("loss_mean: no timestep outputs");
  std::vector<std::pair<double, Var>> terms;
  double inv = 1.0 / static_cast<double>(outputs.size());
  for (Var v : outputs) terms.emplace_back(inv, v);
  return tape.cross_entropy(tape.weighted_sum(terms), label);
}

// Mean over timesteps of per-timestep cross entropies.
inline Var loss_tet(Tape& tape, const std::vector<Var>& outputs, int label) {
  if (outputs.empty()) throw contract_error("loss_tet: no timestep outputs");
  std::vector<std::pair<double, Var>> terms;
  double inv = 1.0 / static_cast<double>(outputs.size());
  for (Var v : outputs) terms.emplace_back(inv, tape.cross_entropy(v, label));
  return tape.weighted_sum(terms);
}

// ---- spatial-temporal factor ----

// xi = |theta|_2 / sqrt(|delta|_2^2 + eps^2). The V_thr * tau constant is
// absorbed into the regulariser weight alpha, not multiplied in here.
inline double stf_compute(const Tensor& spikes, const Tensor& residual, double epsilon) {
  require_same_shape(spikes, residual, "stf_compute");
  double num = 0.0, den = epsilon * epsilon;
  for (std::size_t i = 0; i < spikes.numel(); ++i) {
    num += spikes[i] * spikes[i];
    den += residual[i] * residual[i];
  }
  double d = std::sqrt(den);
  if (d == 0.0) {
    if (num == 0.0) return 0.0;
    throw numeric_error("stf_compute: zero residual norm with epsilon 0");
  }
  return std::sqrt(num) / d;
}

inline double stf_mask(double xi, bool prediction_correct) {
  return prediction_correct ? xi : 0.0;
}

// R over a flattened mini-batch set: (min - max)^2 of the non-zero entries,
// zero when fewer than two exist.
inline double str_penalty(const std::vector<double>& xi_set) {
  bool have = false;
  double mn = 0.0, mx = 0.0;
  for (double x : xi_set) {
    if (x == 0.0) continue;
    if (!have) {
      mn = mx = x;
      have = true;
    } else {
      if (x < mn) mn = x;
      if (x > mx) mx = x;
    }
  }
  int count = 0;
  for (double x : xi_set)
    if (x != 0.0) ++count;
  if (count < 2) return 0.0;
  return (mn - mx) * (mn - mx);
}

// ---- batch-level STR with gradient routing ----

enum class CorrectnessMode { per_timestep, per_sample };

struct StrOptions {
  double alpha = 0.0;
  bool stop_grad_max = true;  // treat xi_max as a fixed target
  CorrectnessMode correctness = CorrectnessMode::per_timestep;
  double epsilon = 1e-8;
};

// Correctness flags per timestep for one sample, per the configured mode.
inline std::vector<char> correctness_flags(const std::vector<Tensor>& output_values, int label,
                                           CorrectnessMode mode) {
  int T = static_cast<int>(output_values.size());
  std::vector<char> correct(T, 0);
  if (mode == CorrectnessMode::per_timestep) {
    for (int t = 0; t < T; ++t) {
      const Tensor& z = output_values[t];
      std::size_t best = 0;
      for (std::size_t i = 1; i < z.numel(); ++i)
        if (z[i] > z[best]) best = i;
      correct[t] = static_cast<int>(best) == label;
    }
  } else {
    Tensor avg(output_values[0].shape());
    for (const Tensor& z : output_values)
      for (std::size_t i = 0; i < z.numel(); ++i) avg[i] += z[i] / T;
    std::size_t best = 0;
    for (std::size_t i = 1; i < avg.numel(); ++i)
      if (avg[i] > avg[best]) best = i;
    char c = static_cast<int>(best) == label;
    std::fill(correct.begin(), correct.end(), c);
  }
  return correct;
}

// Gradient contribution to add to one sample's loss root: coeff * xi var.
struct StrTerm {
  int sample;
  int layer;  // spiking-layer index
  int t;      // 0-based
  double coeff;
};

struct BatchStr {
  double penalty_total = 0.0;            // sum over layers of R
  std::vector<double> penalty_per_layer;
  std::vector<StrTerm> terms;            // d(penalty)/d(xi) routing
};

// Computes R per spiking layer over the mini-batch (non-zero masked xi over
// samples x timesteps) and the derivative terms. Gradient flows through the
// min entry; the max entry only when stop_grad_max is off.
inline BatchStr batch_str(const std::vector<const ForwardRecord*>& records,
                          const std::vector<std::vector<char>>& correct,
                          const StrOptions& opts) {
  BatchStr out;
  if (records.empty()) return out;
  std::size_t layers = records[0]->xi_values.size();
  out.penalty_per_layer.assign(layers, 0.0);
  for (std::size_t l = 0; l < layers; ++l) {
    int count = 0;
    double mn = 0.0, mx = 0.0;
    int mn_s = -1, mn_t = -1, mx_s = -1, mx_t = -1;
    for (std::size_t s = 0; s < records.size(); ++s) {
      const auto& xs = records[s]->xi_values[l];
      for (std::size_t t = 0; t < xs.size(); ++t) {
        double x = stf_mask(xs[t], correct[s][t]);
        if (x == 0.0) continue;
        if (count == 0 || x < mn) {
          mn = x;
          mn_s = static_cast<int>(s);
          mn_t = static_cast<int>(t);
        }
        if (count == 0 || x > mx) {
          mx = x;
          mx_s = static_cast<int>(s);
          mx_t = static_cast<int>(t);
        }
        ++count;
      }
    }
    if (count < 2) continue;
    double r = (mn - mx) * (mn - mx);
    out.penalty_per_layer[l] = r;
    out.penalty_total += r;
    if (mn != mx) {
      out.terms.push_back({mn_s, static_cast<int>(l), mn_t, 2.0 * (mn - mx)});
      if (!opts.stop_grad_max)
        out.terms.push_back({mx_s, static_cast<int>(l), mx_t, -2.0 * (mn - mx)});
    }
  }
  return out;
}

// ---- combined objective ----

struct LossBreakdown {
  double task_loss = 0.0;
  double str_penalty = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

enum class TaskLoss { mean, tet };

// Single-sample combined loss (batch training assembles its own roots via
// batch_str; this covers the one-sample contract and tests).
inline LossBreakdown combined_loss(Tape& tape, const ForwardRecord& rec, int label,
                                   TaskLoss task, const StrOptions& opts, Var* root_out = nullptr) {
  if (opts.alpha < 0.0) throw config_error("combined_loss: alpha must be non-negative");
  Var task_var = task == TaskLoss::tet ? loss_tet(tape, rec.outputs, label)
                                       : loss_mean(tape, rec.outputs, label);
  LossBreakdown b;
  b.task_loss = tape.value(task_var).item();
  b.alpha = opts.alpha;
  if (opts.alpha == 0.0) {
    b.total = b.task_loss;
    if (root_out) *root_out = task_var;
    return b;
  }
  if (rec.xi_values.empty())
    throw contract_error("combined_loss: alpha > 0 requires an STF-logged forward record");
  auto correct = correctness_flags(rec.output_values, label, opts.correctness);
  std::vector<const ForwardRecord*> recs = {&rec};
  BatchStr str = batch_str(recs, {correct}, opts);
  b.str_penalty = str.penalty_total;
  b.total = b.task_loss + opts.alpha * b.str_penalty;
  if (root_out) {
    std::vector<std::pair<double, Var>> terms = {{1.0, task_var}};
    for (const StrTerm& term : str.terms)
      terms.emplace_back(opts.alpha * term.coeff, rec.xi[term.layer][term.t]);
    *root_out = tape.weighted_sum(terms);
  }
  return b;
}

// ---- STF trace export ----

// CSV schema: layer, timestep, sample_id, xi, masked, correct.
inline void write_stf_trace_csv(std::ostream& os,
                                const std::vector<const ForwardRecord*>& records,
                                const std::vector<std::vector<char>>& correct) {
  os << "layer,timestep,sample_id,xi,masked,correct\n";
  for (std::size_t s = 0; s < records.size(); ++s)
    for (std::size_t l = 0; l < records[s]->xi_values.size(); ++l)
      for (std::size_t t = 0; t < records[s]->xi_values[l].size(); ++t) {
        double xi = records[s]->xi_values[l][t];
        bool c = correct[s][t];
        os << l << ',' << (t + 1) << ',' << s << ',' << xi << ',' << stf_mask(xi, c) << ','
           << (c ? 1 : 0) << '\n';
      }
}

}  // namespace aoisnn
