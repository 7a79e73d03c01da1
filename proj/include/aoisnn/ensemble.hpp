#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/network.hpp"

namespace aoisnn {

// Elementwise mean of member outputs at one timestep. Coordinates on which
// all members agree return the common value exactly, so degenerate ensembles
// report zero disagreement instead of summation round-off.
inline Tensor ensemble_mean(const std::vector<Tensor>& outputs_per_member) {
  if (outputs_per_member.empty()) throw contract_error("ensemble_mean: empty ensemble");
  const Tensor& f0 = outputs_per_member[0];
  Tensor mu(f0.shape());
  for (const Tensor& f : outputs_per_member) {
    require_same_shape(mu, f, "ensemble_mean");
    for (std::size_t i = 0; i < mu.numel(); ++i) mu[i] += f[i];
  }
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    bool same = true;
    for (const Tensor& f : outputs_per_member)
      if (f[i] != f0[i]) {
        same = false;
        break;
      }
    mu[i] = same ? f0[i] : mu[i] / outputs_per_member.size();
  }
  return mu;
}

// Mean over members of the L2 norm of the deviation from mu. The norm is
// not squared; a squared variant is available for sensitivity checks.
inline double ensemble_variance(const std::vector<Tensor>& outputs_per_member, const Tensor& mu,
                                bool squared = false) {
  if (outputs_per_member.empty()) throw contract_error("ensemble_variance: empty ensemble");
  double acc = 0.0;
  for (const Tensor& f : outputs_per_member) {
    require_same_shape(mu, f, "ensemble_variance");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.numel(); ++i) {
      double d = f[i] - mu[i];
      s += d * d;
    }
    acc += squared ? s : std::sqrt(s);
  }
  return acc / outputs_per_member.size();
}

// Independently trained parameter sets sharing one architecture.
struct Ensemble {
  NetworkSpec spec;
  std::vector<NetworkParams> members;
};

struct UncertaintyCurve {
  std::vector<double> sigma2;  // per t, dataset mean
  double avg_sigma2 = 0.0;     // time average (the Table-1-style summary)
  double final_accuracy = 0.0; // ensemble-mean accuracy at t = T
};

// sigma^2(t) averaged over the dataset, on raw logits (never softmax).
// The member output at t is the anytime readout: the running mean of the
// per-timestep logits, the same quantity the task loss supervises. Pass
// cumulative = false to use the single-step logits instead.
inline UncertaintyCurve uncertainty_curve(Ensemble& ensemble,
                                          const std::vector<SampleInput>& dataset, int T,
                                          bool squared = false, bool cumulative = true) {
  if (ensemble.members.empty()) throw contract_error("uncertainty_curve: empty ensemble");
  if (dataset.empty()) throw contract_error("uncertainty_curve: empty dataset");
  UncertaintyCurve curve;
  curve.sigma2.assign(T, 0.0);
  std::size_t final_correct = 0;
  for (const SampleInput& s : dataset) {
    std::vector<std::vector<Tensor>> readout;  // [member][t]
    readout.reserve(ensemble.members.size());
    for (NetworkParams& m : ensemble.members) {
      Tape tape;
      ForwardRecord rec = network_forward(tape, ensemble.spec, m, s, T);
      std::vector<Tensor> outs;
      Tensor acc = Tensor::zeros(rec.output_values[0].shape());
      for (int t = 0; t < T; ++t) {
        if (cumulative) {
          for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += rec.output_values[t][i];
          Tensor mean = acc;
          for (std::size_t i = 0; i < mean.numel(); ++i) mean[i] /= (t + 1);
          outs.push_back(std::move(mean));
        } else {
          outs.push_back(rec.output_values[t]);
        }
      }
      readout.push_back(std::move(outs));
    }
    for (int t = 0; t < T; ++t) {
      std::vector<Tensor> outs;
      outs.reserve(readout.size());
      for (const auto& r : readout) outs.push_back(r[t]);
      Tensor mu = ensemble_mean(outs);
      curve.sigma2[t] += ensemble_variance(outs, mu, squared);
      if (t == T - 1) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < mu.numel(); ++i)
          if (mu[i] > mu[best]) best = i;
        if (static_cast<int>(best) == s.label) ++final_correct;
      }
    }
  }
  for (double& v : curve.sigma2) v /= static_cast<double>(dataset.size());
  for (double v : curve.sigma2) curve.avg_sigma2 += v / T;
  curve.final_accuracy = static_cast<double>(final_correct) / dataset.size();
  return curve;
}

inline void write_uncertainty_csv(std::ostream& os, const UncertaintyCurve& curve) {
  os << "timestep,sigma2\n";
  for (std::size_t t = 0; t < curve.sigma2.size(); ++t)
    os << (t + 1) << ',' << curve.sigma2[t] << '\n';
  os << "avg_sigma2," << curve.avg_sigma2 << '\n';
  os << "final_accuracy," << curve.final_accuracy << '\n';
}

}  // namespace aoisnn
