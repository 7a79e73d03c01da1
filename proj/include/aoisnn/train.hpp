#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "aoisnn/checkpoint.hpp"
#include "aoisnn/common.hpp"
#include "aoisnn/events.hpp"
#include "aoisnn/network.hpp"
#include "aoisnn/objective.hpp"
#include "aoisnn/rng.hpp"

namespace aoisnn {

struct TrainConfig {
  int T = 10;
  TaskLoss loss = TaskLoss::tet;
  double alpha = 0.0;  // STR weight; 0 = plain TET/mean baseline
  int epochs = 30;
  int batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  CorrectnessMode mask_mode = CorrectnessMode::per_timestep;
  bool stop_grad_max = true;
  double dropout = 0.0;
  double augment = 0.0;  // max pixel-shift fraction; 0 disables
  double stf_epsilon = 1e-8;
  double grad_clip = 0.0;  // global gradient-norm ceiling; 0 disables
  int threads = 0;         // 0 = hardware concurrency

  void validate() const {
    if (T < 1) throw config_error("TrainConfig: T must be >= 1");
    if (alpha < 0.0) throw config_error("TrainConfig: alpha must be >= 0");
    if (epochs < 1) throw config_error("TrainConfig: epochs must be >= 1");
    if (batch < 1) throw config_error("TrainConfig: batch must be >= 1");
    if (!(lr > 0.0)) throw config_error("TrainConfig: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw config_error("TrainConfig: momentum in [0,1)");
    if (weight_decay < 0.0) throw config_error("TrainConfig: weight_decay must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("TrainConfig: dropout in [0,1)");
    if (augment < 0.0 || augment > 0.5) throw config_error("TrainConfig: augment in [0,0.5]");
    if (grad_clip < 0.0) throw config_error("TrainConfig: grad_clip must be >= 0");
  }

  StrOptions str_options() const {
    StrOptions o;
    o.alpha = alpha;
    o.stop_grad_max = stop_grad_max;
    o.correctness = mask_mode;
    o.epsilon = stf_epsilon;
    return o;
  }
};

// Scales all gradients so their global L2 norm is at most max_norm.
inline void clip_grad_norm(NetworkParams& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter& w : params.weights)
    for (std::size_t i = 0; i < w.grad.numel(); ++i) sq += w.grad[i] * w.grad[i];
  for (const Parameter& b : params.biases)
    for (std::size_t i = 0; i < b.grad.numel(); ++i) sq += b.grad[i] * b.grad[i];
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  double scale = max_norm / norm;
  for (Parameter& w : params.weights)
    for (std::size_t i = 0; i < w.grad.numel(); ++i) w.grad[i] *= scale;
  for (Parameter& b : params.biases)
    for (std::size_t i = 0; i < b.grad.numel(); ++i) b.grad[i] *= scale;
}

// lr0 * (1 + cos(pi * e / E)) / 2: lr0 at e = 0, zero at e = E.
inline double cosine_lr(double lr0, int epoch, int total_epochs) {
  if (total_epochs < 1) throw config_error("cosine_lr: total_epochs must be >= 1");
  return lr0 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / total_epochs)) / 2.0;
}

// SGD with momentum and decoupled-into-gradient weight decay:
// g <- g + wd * w; m <- mu * m + g; w <- w - lr * m.
class SgdMomentum {
 public:
  explicit SgdMomentum(const NetworkParams& params) {
    for (const Parameter& w : params.weights) buffers_.emplace_back(Tensor::zeros(w.value.shape()));
    for (const Parameter& b : params.biases) buffers_.emplace_back(Tensor::zeros(b.value.shape()));
  }

  void step(NetworkParams& params, double lr, double momentum, double weight_decay) {
    std::size_t k = 0;
    for (Parameter& w : params.weights) apply(w, buffers_[k++], lr, momentum, weight_decay);
    for (Parameter& b : params.biases) apply(b, buffers_[k++], lr, momentum, weight_decay);
  }

 private:
  static void apply(Parameter& p, Tensor& buf, double lr, double mu, double wd) {
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      double g = p.grad[i] + wd * p.value[i];
      buf[i] = mu * buf[i] + g;
      p.value[i] -= lr * buf[i];
    }
  }

  std::vector<Tensor> buffers_;
};

struct EpochMetrics {
  int epoch = 0;
  double task_loss = 0.0;
  double str_penalty = 0.0;
  double total_loss = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> rows;
};

inline void write_metrics_csv(std::ostream& os, const RunMetrics& m) {
  os << "epoch,task_loss,str_penalty,total_loss,lr,wall_s\n";
  for (const EpochMetrics& r : m.rows)
    os << r.epoch << ',' << r.task_loss << ',' << r.str_penalty << ',' << r.total_loss << ','
       << r.lr << ',' << r.wall_s << '\n';
}

namespace detail {

inline SampleInput augment_sample(const SampleInput& s, double max_frac, Rng& rng) {
  SampleInput out = s;
  double dx = rng.uniform(-max_frac, max_frac);
  double dy = rng.uniform(-max_frac, max_frac);
  if (s.event_mode) {
    for (Tensor& b : out.bins) b = augment_shift(b, dx, dy, max_frac);
  } else {
    out.frame = augment_shift(s.frame, dx, dy, max_frac);
  }
  return out;
}

// Runs fn(i) for i in [0, n) over a fixed static partition. Worker outputs
// must not share mutable state; reductions happen after join.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int nt = std::min(threads, n);
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  for (int w = 0; w < nt; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += nt) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

// One mini-batch: forward every sample on its own tape, assemble roots with
// the batch STR terms, backward, and accumulate parameter gradients in
// sample order (fixed order keeps runs bit-reproducible under threading).
struct BatchResult {
  double task_loss = 0.0;    // batch mean
  double str_penalty = 0.0;  // sum over layers of R
};

inline BatchResult train_batch(const NetworkSpec& spec, NetworkParams& params,
                               const std::vector<const SampleInput*>& batch,
                               const TrainConfig& cfg, std::uint64_t dropout_base) {
  int B = static_cast<int>(batch.size());
  StrOptions str_opts = cfg.str_options();
  std::vector<std::unique_ptr<Tape>> tapes(B);
  std::vector<ForwardRecord> recs(B);
  std::vector<Var> task_vars(B);
  std::vector<std::vector<char>> correct(B);
  int threads = cfg.threads > 0 ? cfg.threads
                                : static_cast<int>(std::thread::hardware_concurrency());
  detail::parallel_for(B, threads, [&](int s) {
    tapes[s] = std::make_unique<Tape>();
    ForwardOptions fo;
    fo.log_stf = cfg.alpha > 0.0;
    fo.stf_epsilon = cfg.stf_epsilon;
    fo.dropout = cfg.dropout;
    fo.train_dropout = cfg.dropout > 0.0;
    fo.dropout_seed = Rng::mix(dropout_base, static_cast<std::uint64_t>(s));
    recs[s] = network_forward(*tapes[s], spec, params, *batch[s], cfg.T, fo);
    task_vars[s] = cfg.loss == TaskLoss::tet ? loss_tet(*tapes[s], recs[s].outputs, batch[s]->label)
                                             : loss_mean(*tapes[s], recs[s].outputs, batch[s]->label);
    correct[s] = correctness_flags(recs[s].output_values, batch[s]->label, str_opts.correctness);
  });

  BatchResult result;
  for (int s = 0; s < B; ++s) result.task_loss += tapes[s]->value(task_vars[s]).item() / B;

  BatchStr str;
  if (cfg.alpha > 0.0) {
    std::vector<const ForwardRecord*> rec_ptrs;
    for (const ForwardRecord& r : recs) rec_ptrs.push_back(&r);
    str = batch_str(rec_ptrs, correct, str_opts);
    result.str_penalty = str.penalty_total;
  }

  double total = result.task_loss + cfg.alpha * result.str_penalty;
  if (!std::isfinite(total))
    throw numeric_error("train_batch: non-finite loss (task " + std::to_string(result.task_loss) +
                        ", penalty " + std::to_string(result.str_penalty) + ")");

  std::vector<Var> roots(B);
  for (int s = 0; s < B; ++s) {
    std::vector<std::pair<double, Var>> terms = {{1.0 / B, task_vars[s]}};
    for (const StrTerm& term : str.terms)
      if (term.sample == s)
        terms.emplace_back(cfg.alpha * term.coeff, recs[s].xi[term.layer][term.t]);
    roots[s] = tapes[s]->weighted_sum(terms);
  }
  detail::parallel_for(B, threads, [&](int s) { tapes[s]->backward(roots[s]); });
  for (int s = 0; s < B; ++s) tapes[s]->accumulate_param_grads();
  return result;
}

// Full training loop: seeded shuffle per epoch, optional pixel-shift
// augmentation, combined objective, SGD with momentum under a cosine decay
// reaching zero at the final epoch. Deterministic given the seed.
inline RunMetrics train(const NetworkSpec& spec, NetworkParams& params,
                        const std::vector<SampleInput>& train_set, const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (train_set.empty()) throw contract_error("train: empty training set");
  SgdMomentum opt(params);
  RunMetrics metrics;
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
    Rng shuffle_rng(Rng::mix(cfg.seed, 0xE90C + static_cast<std::uint64_t>(epoch)));
    shuffle(order, shuffle_rng);
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<SampleInput> augmented;
      std::vector<const SampleInput*> batch;
      for (std::size_t i = start; i < end; ++i) {
        const SampleInput& s = train_set[order[i]];
        if (cfg.augment > 0.0) {
          Rng arng(Rng::mix(cfg.seed, 0xA06 + static_cast<std::uint64_t>(epoch) * 1000003 +
                                          static_cast<std::uint64_t>(order[i])));
          augmented.push_back(detail::augment_sample(s, cfg.augment, arng));
        }
      }
      if (cfg.augment > 0.0)
        for (const SampleInput& s : augmented) batch.push_back(&s);
      else
        for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set[order[i]]);
      params.zero_grad();
      std::uint64_t dropout_base =
          Rng::mix(cfg.seed, 0xD0 + static_cast<std::uint64_t>(epoch) * 1000003 + start);
      BatchResult br = train_batch(spec, params, batch, cfg, dropout_base);
      if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
      opt.step(params, lr, cfg.momentum, cfg.weight_decay);
      em.task_loss += br.task_loss;
      em.str_penalty += br.str_penalty;
      ++batches;
    }
    em.task_loss /= batches;
    em.str_penalty /= batches;
    em.total_loss = em.task_loss + cfg.alpha * em.str_penalty;
    em.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.rows.push_back(em);
  }
  return metrics;
}

// Fixed-T test accuracy at the last timestep; convenience for experiments.
inline double final_timestep_accuracy(const NetworkSpec& spec, NetworkParams& params,
                                      const std::vector<SampleInput>& test_set, int T) {
  if (test_set.empty()) throw contract_error("final_timestep_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const SampleInput& s : test_set) {
    Tape tape;
    ForwardRecord rec = network_forward(tape, spec, params, s, T);
    const Tensor& z = rec.output_values[T - 1];
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.numel(); ++i)
      if (z[i] > z[best]) best = i;
    if (static_cast<int>(best) == s.label) ++correct;
  }
  return static_cast<double>(correct) / test_set.size();
}

}  // namespace aoisnn
