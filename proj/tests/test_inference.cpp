#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include "aoisnn/aoisnn.hpp"
#include "support/synops_oracle.hpp"

using namespace aoisnn;
using namespace aoisnn::oracle;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

InferenceTrace trace_from_scores(const std::vector<double>& scores) {
  InferenceTrace tr;
  tr.scores = scores;
  tr.predictions.assign(scores.size(), 0);
  return tr;
}

}  // namespace

TEST_CASE("max_softmax") {
  auto [s, p] = max_softmax(Tensor::vec({std::log(3.0), 0.0}));
  CHECK(s == Catch::Approx(0.75).margin(1e-12));
  CHECK(p == 0);
  auto [s2, p2] = max_softmax(Tensor::vec({0.0, 0.0}));
  CHECK(s2 == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS_AS(max_softmax(Tensor::vec({std::nan(""), 0.0})), numeric_error);
}

TEST_CASE("cutoff first-crossing examples") {
  InferenceTrace tr = trace_from_scores({0.6, 0.92, 0.97});
  SECTION("threshold 0.9 exits at the first crossing") {
    CHECK(cutoff_from_trace(tr, 0.9).exit_t == 2);
    CHECK(cutoff_from_trace(tr, 0.9).max_score == 0.92);
  }
  SECTION("threshold 0 exits immediately") { CHECK(cutoff_from_trace(tr, 0.0).exit_t == 1); }
  SECTION("unreachable threshold runs to the end") {
    CHECK(cutoff_from_trace(tr, kInf).exit_t == 3);
    CHECK(cutoff_from_trace(tr, 0.99).exit_t == 3);
  }
  SECTION("comparison is >=, exact hit triggers") {
    CHECK(cutoff_from_trace(tr, 0.92).exit_t == 2);
  }
  SECTION("policy validation") {
    CutoffPolicy p;
    p.threshold = -0.1;
    CHECK_THROWS_AS(p.validate(), config_error);
    p.threshold = 0.5;
    p.max_T = 0;
    CHECK_THROWS_AS(p.validate(), config_error);
  }
}

TEST_CASE("cutoff on a real network") {
  NetworkSpec spec = toy_network(2, 16, 16, 3);
  NetworkParams params = NetworkParams::init(spec, 11);
  Rng rng(70);
  SampleInput s = random_sample(spec, 6, rng, true);

  SECTION("threshold 0 exits at t=1") {
    CutoffPolicy p;
    p.threshold = 0.0;
    p.max_T = 6;
    CHECK(cutoff_run(spec, params, s, p).exit_t == 1);
  }
  SECTION("threshold inf reproduces fixed-T inference bit-exactly") {
    CutoffPolicy p;
    p.max_T = 6;  // threshold defaults to inf
    CutoffResult r = cutoff_run(spec, params, s, p);
    CHECK(r.exit_t == 6);
    Tape tape;
    ForwardRecord rec = network_forward(tape, spec, params, s, 6);
    auto [score, pred] = max_softmax(rec.output_values[5]);
    CHECK(r.prediction == pred);
    CHECK(r.max_score == score);
  }
  SECTION("streaming cutoff agrees with the trace-based one") {
    SynopsAccountant acct(spec);
    InferenceTrace tr = sample_trace(spec, params, s, 6, false, &acct);
    for (double thr : {0.0, 0.4, 0.6, 0.9, 1.5}) {
      CutoffPolicy p;
      p.threshold = thr;
      p.max_T = 6;
      CutoffResult a = cutoff_run(spec, params, s, p, &acct);
      CutoffResult b = cutoff_from_trace(tr, thr);
      CHECK(a.exit_t == b.exit_t);
      CHECK(a.prediction == b.prediction);
      CHECK(a.max_score == b.max_score);
      CHECK(a.synops == b.synops);
    }
  }
  SECTION("cumulative scoring averages the logits") {
    InferenceTrace tr = sample_trace(spec, params, s, 6, true);
    Tape tape;
    ForwardRecord rec = network_forward(tape, spec, params, s, 6);
    Tensor avg(rec.output_values[0].shape());
    for (int t = 0; t < 4; ++t)
      for (std::size_t i = 0; i < avg.numel(); ++i) avg[i] += rec.output_values[t][i];
    for (std::size_t i = 0; i < avg.numel(); ++i) avg[i] /= 4.0;
    auto [score, pred] = max_softmax(avg);
    CHECK(tr.scores[3] == Catch::Approx(score).margin(1e-12));
    CHECK(tr.predictions[3] == pred);
  }
}

TEST_CASE("synops worked examples") {
  // Silent conv layer followed by a dense layer feeding a 10-way head:
  // every dense spike fans out to exactly 10 connections.
  NetworkSpec spec;
  spec.in_channels = 1;
  spec.in_h = 2;
  spec.in_w = 2;
  spec.layers = {NetworkSpec::conv(1, 1, 1), NetworkSpec::flatten(), NetworkSpec::dense(5),
                 NetworkSpec::head(10)};
  spec.validate();
  SynopsAccountant acct(spec);
  REQUIRE(acct.num_sources() == 3);
  for (std::size_t i = 0; i < 5; ++i) CHECK(acct.fanout(2)[i] == 10.0);

  SampleInput s;
  s.event_mode = false;  // analog input excluded
  s.frame = Tensor::zeros({1, 2, 2});
  ForwardRecord rec;
  rec.output_values = {Tensor::zeros({10}), Tensor::zeros({10})};
  rec.spike_tensors.resize(2);
  rec.spike_tensors[0] = {Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 2})};
  rec.spike_tensors[1] = {Tensor({5}, {1, 1, 1, 0, 0}), Tensor({5}, {1, 1, 0, 0, 0})};

  SECTION("3 spikes at fan-out 10 in one timestep") {
    CHECK(acct.synops(rec, s, 1) == 30);
  }
  SECTION("additivity over timesteps: 3 then 2 spikes") {
    CHECK(acct.synops(rec, s, 2) == 50);
  }
  SECTION("silent network") {
    rec.spike_tensors[1] = {Tensor::zeros({5}), Tensor::zeros({5})};
    CHECK(acct.synops(rec, s, 2) == 0);
  }
  SECTION("t_stop out of range") {
    CHECK_THROWS_AS(acct.synops(rec, s, 0), contract_error);
    CHECK_THROWS_AS(acct.synops(rec, s, 3), contract_error);
  }
}

TEST_CASE("synops formula matches brute-force enumeration on random networks") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    NetworkSpec spec = random_tiny_network(rng);
    NetworkParams params = NetworkParams::init(spec, rng.next_u64());
    // bias boost so some layers actually fire
    for (Parameter& b : params.biases)
      for (std::size_t i = 0; i < b.value.numel(); ++i) b.value[i] = rng.uniform(0.0, 0.8);
    int T = 1 + static_cast<int>(rng.below(3));
    bool event_mode = rng.bernoulli(0.7);
    SampleInput s = random_sample(spec, T, rng, event_mode);
    Tape tape;
    ForwardOptions opts;
    opts.keep_spike_tensors = true;
    ForwardRecord rec = network_forward(tape, spec, params, s, T, opts);
    SynopsAccountant acct(spec);
    int t_stop = 1 + static_cast<int>(rng.below(T));
    CHECK(acct.synops(rec, s, t_stop) == brute_synops(spec, rec, s, t_stop));
    // non-decreasing in t_stop
    std::uint64_t prev = 0;
    for (int t = 1; t <= T; ++t) {
      std::uint64_t v = acct.synops(rec, s, t);
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("frame mode excludes the analog input, event mode counts it") {
  NetworkSpec spec;
  spec.in_channels = 1;
  spec.in_h = 3;
  spec.in_w = 3;
  spec.layers = {NetworkSpec::conv(2, 2, 1), NetworkSpec::flatten(), NetworkSpec::head(2)};
  spec.validate();
  SynopsAccountant acct(spec);
  ForwardRecord rec;
  rec.output_values = {Tensor::zeros({2})};
  rec.spike_tensors.resize(1);
  rec.spike_tensors[0] = {Tensor::zeros({2, 2, 2})};

  SampleInput ev;
  ev.event_mode = true;
  Tensor bin = Tensor::zeros({1, 3, 3});
  bin.at3(0, 1, 1) = 1.0;  // centre pixel feeds all 4 windows x 2 channels
  ev.bins = {bin};
  CHECK(acct.synops(rec, ev, 1) == 8);

  SampleInput fr;
  fr.event_mode = false;
  fr.frame = bin;
  CHECK(acct.synops(rec, fr, 1) == 0);
}

TEST_CASE("exit time is monotone in threshold over random traces") {
  Rng rng(501);
  for (int trial = 0; trial < 60; ++trial) {
    int T = 2 + static_cast<int>(rng.below(8));
    std::vector<double> scores;
    for (int t = 0; t < T; ++t) scores.push_back(rng.uniform(0.2, 1.0));
    InferenceTrace tr = trace_from_scores(scores);
    int prev_exit = 1;
    for (double thr = 0.0; thr <= 1.05; thr += 0.05) {
      int e = cutoff_from_trace(tr, thr).exit_t;
      CHECK(e >= prev_exit);
      CHECK(e >= 1);
      CHECK(e <= T);
      // first-crossing: nothing before e crosses, e does unless none do
      for (int t = 0; t < e - 1; ++t) CHECK(scores[t] < thr);
      if (e < T) CHECK(scores[e - 1] >= thr);
      prev_exit = e;
    }
  }
}

TEST_CASE("threshold sweep over a dataset") {
  NetworkSpec spec = toy_network(2, 12, 12, 2);
  NetworkParams params = NetworkParams::init(spec, 23);
  Rng rng(88);
  std::vector<SampleInput> data;
  for (int i = 0; i < 12; ++i) data.push_back(random_sample(spec, 5, rng, true));

  std::vector<double> grid = threshold_grid(0.0, 1.0, 6);
  grid.push_back(kInf);
  SweepReport rep = threshold_sweep(spec, params, data, grid, 5);
  std::vector<double> curve = anytime_curve(spec, params, data, 5);

  SECTION("avg_T bounds and monotonicity") {
    double prev = 1.0;
    for (const SweepRow& r : rep.rows) {
      CHECK(r.avg_timestep >= prev - 1e-12);
      CHECK(r.avg_timestep >= 1.0);
      CHECK(r.avg_timestep <= 5.0);
      CHECK(r.accuracy >= 0.0);
      CHECK(r.accuracy <= 1.0);
      prev = r.avg_timestep;
    }
  }
  SECTION("threshold 0 row equals the t=1 anytime point") {
    CHECK(rep.rows.front().threshold == 0.0);
    CHECK(rep.rows.front().avg_timestep == 1.0);
    CHECK(rep.rows.front().accuracy == curve[0]);
  }
  SECTION("threshold inf row equals the t=T anytime point") {
    CHECK(rep.rows.back().avg_timestep == 5.0);
    CHECK(rep.rows.back().accuracy == curve[4]);
  }
  SECTION("empty inputs rejected") {
    CHECK_THROWS_AS(threshold_sweep(spec, params, data, {}, 5), contract_error);
    CHECK_THROWS_AS(threshold_sweep(spec, params, {}, grid, 5), contract_error);
    CHECK_THROWS_AS(anytime_curve(spec, params, {}, 5), contract_error);
  }
}

TEST_CASE("anytime curve basics") {
  NetworkSpec spec = toy_network(2, 12, 12, 2);
  NetworkParams params = NetworkParams::init(spec, 31);
  Rng rng(9);
  SECTION("single-sample curve takes values in {0,1}") {
    std::vector<SampleInput> one = {random_sample(spec, 4, rng, true)};
    for (double a : anytime_curve(spec, params, one, 4)) CHECK((a == 0.0 || a == 1.0));
  }
  SECTION("untrained network on a balanced set sits near chance") {
    std::vector<SampleInput> data;
    for (int i = 0; i < 60; ++i) {
      SampleInput s = random_sample(spec, 3, rng, true);
      s.label = i % 2;
      data.push_back(std::move(s));
    }
    // binomial 3-sigma band around 0.5 for n=60
    for (double a : anytime_curve(spec, params, data, 3)) {
      CHECK(a >= 0.5 - 3.0 * std::sqrt(0.25 / 60.0));
      CHECK(a <= 0.5 + 3.0 * std::sqrt(0.25 / 60.0));
    }
  }
}

TEST_CASE("threshold grid and csv export") {
  SECTION("grid endpoints and spacing") {
    std::vector<double> g = threshold_grid(0.8, 1.0, 20);
    REQUIRE(g.size() == 20);
    CHECK(g.front() == 0.8);
    CHECK(g.back() == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t i = 1; i < g.size(); ++i)
      CHECK(g[i] - g[i - 1] == Catch::Approx(0.2 / 19.0).margin(1e-12));
    CHECK(threshold_grid(0.5, 0.9, 1) == std::vector<double>{0.5});
    CHECK_THROWS_AS(threshold_grid(0, 1, 0), config_error);
  }
  SECTION("sweep csv schema") {
    SweepReport rep;
    rep.rows.push_back({0.9, 0.75, 2.5, 1200.0});
    std::ostringstream os;
    write_sweep_csv(os, rep);
    CHECK(os.str() == "threshold,accuracy,avg_timestep,avg_synops\n0.9,0.75,2.5,1200\n");
  }
  SECTION("anytime csv schema") {
    std::ostringstream os;
    write_anytime_csv(os, {0.5, 0.75});
    CHECK(os.str() == "timestep,accuracy\n1,0.5\n2,0.75\n");
  }
}
