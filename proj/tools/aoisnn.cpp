// aoisnn: train and evaluate anytime spiking networks on event or frame data.
//
// Subcommands:
//   synth  generate a deterministic synthetic event/frame dataset
//   train  train a network from a config file, write checkpoint + metrics
//   eval   fixed-timestep curves, cutoff sweeps, or ensemble uncertainty

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "aoisnn/aoisnn.hpp"

namespace fs = std::filesystem;
using namespace aoisnn;

namespace {

constexpr const char* kVersion = "aoisnn 1.0.0";

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// key = value pairs; '#' starts a comment line.
std::map<std::string, std::string> parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = value;
  }
  return kv;
}

double to_double(const std::map<std::string, std::string>& kv, const std::string& key,
                 double def) {
  auto it = kv.find(key);
  if (it == kv.end()) return def;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw config_error("config field '" + key + "': not a number: " + it->second);
  }
}

long to_long(const std::map<std::string, std::string>& kv, const std::string& key, long def) {
  auto it = kv.find(key);
  if (it == kv.end()) return def;
  try {
    return std::stol(it->second);
  } catch (...) {
    throw config_error("config field '" + key + "': not an integer: " + it->second);
  }
}

std::string to_str(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& def) {
  auto it = kv.find(key);
  return it == kv.end() ? def : it->second;
}

bool to_bool(const std::map<std::string, std::string>& kv, const std::string& key, bool def) {
  auto it = kv.find(key);
  if (it == kv.end()) return def;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw config_error("config field '" + key + "': expected true/false");
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write " + path);
  os << content;
}

void write_run_summary(const std::string& path, std::uint64_t config_hash, double wall_s) {
  std::ostringstream os;
  os << "version = " << kVersion << '\n';
  os << "config_hash = " << config_hash << '\n';
  os << "wall_s = " << wall_s << '\n';
  write_file(path, os.str());
}

std::vector<double> parse_thresholds(const std::string& arg) {
  if (arg == "inf") return {std::numeric_limits<double>::infinity()};
  auto c1 = arg.find(':');
  auto c2 = arg.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw config_error("--thresholds expects lo:hi:n or inf, got " + arg);
  double lo = std::stod(arg.substr(0, c1));
  double hi = std::stod(arg.substr(c1 + 1, c2 - c1 - 1));
  int n = std::stoi(arg.substr(c2 + 1));
  return threshold_grid(lo, hi, n);
}

struct TrainFile {
  TrainConfig cfg;
  std::string dataset;
  NetworkSpec spec;
  bool have_spec = false;
};

TrainFile load_train_config(const std::string& path) {
  auto kv = parse_config(path);
  TrainFile tf;
  tf.dataset = to_str(kv, "dataset", "");
  if (tf.dataset.empty()) throw config_error("config field 'dataset' is required");
  if (!fs::path(tf.dataset).is_absolute())
    tf.dataset = (fs::path(path).parent_path() / tf.dataset).string();
  TrainConfig& c = tf.cfg;
  c.T = static_cast<int>(to_long(kv, "T", c.T));
  std::string loss = to_str(kv, "loss", "tet");
  if (loss == "tet") c.loss = TaskLoss::tet;
  else if (loss == "mean") c.loss = TaskLoss::mean;
  else throw config_error("config field 'loss': expected tet or mean");
  c.alpha = to_double(kv, "alpha", c.alpha);
  c.epochs = static_cast<int>(to_long(kv, "epochs", c.epochs));
  c.batch = static_cast<int>(to_long(kv, "batch", c.batch));
  c.lr = to_double(kv, "lr", c.lr);
  c.momentum = to_double(kv, "momentum", c.momentum);
  c.weight_decay = to_double(kv, "weight_decay", c.weight_decay);
  c.seed = static_cast<std::uint64_t>(to_long(kv, "seed", static_cast<long>(c.seed)));
  std::string mask = to_str(kv, "mask", "per-timestep");
  if (mask == "per-timestep") c.mask_mode = CorrectnessMode::per_timestep;
  else if (mask == "per-sample") c.mask_mode = CorrectnessMode::per_sample;
  else throw config_error("config field 'mask': expected per-timestep or per-sample");
  c.stop_grad_max = to_bool(kv, "stopgrad_max", true);
  c.dropout = to_double(kv, "dropout", c.dropout);
  c.augment = to_double(kv, "augment", c.augment);
  c.stf_epsilon = to_double(kv, "stf_epsilon", c.stf_epsilon);
  c.grad_clip = to_double(kv, "grad_clip", c.grad_clip);
  c.threads = static_cast<int>(to_long(kv, "threads", c.threads));
  std::string network = to_str(kv, "network", "toy");
  if (network != "toy") {
    std::string spec_path = network;
    if (!fs::path(spec_path).is_absolute())
      spec_path = (fs::path(path).parent_path() / spec_path).string();
    std::ifstream is(spec_path);
    if (!is) throw config_error("config field 'network': cannot open spec file " + network);
    std::ostringstream ss;
    ss << is.rdbuf();
    tf.spec = NetworkSpec::parse(ss.str());
    tf.have_spec = true;
  }
  c.validate();
  return tf;
}

int cmd_synth(const std::string& out_dir, SynthConfig& cfg, int T, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw config_error("output directory " + out_dir + " is not empty; use --force");
  auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  synth_event_dataset(cfg, out_dir, T);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream cfg_text;
  cfg_text << cfg.classes << cfg.train_per_class << cfg.test_per_class << cfg.height << cfg.width
           << cfg.window_us << cfg.rate_hi << cfg.rate_lo << cfg.seed << cfg.mode << T;
  write_run_summary((fs::path(out_dir) / "run_summary.txt").string(), fnv1a(cfg_text.str()), wall);
  std::cout << "wrote dataset to " << out_dir << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, long seed_override) {
  TrainFile tf = load_train_config(config_path);
  if (seed_override >= 0) tf.cfg.seed = static_cast<std::uint64_t>(seed_override);
  DatasetManifest manifest = DatasetManifest::load(tf.dataset);
  std::vector<SampleInput> train_set = load_split(manifest, "train", tf.cfg.T);
  std::vector<SampleInput> test_set = load_split(manifest, "test", tf.cfg.T);
  if (train_set.empty()) throw data_error("manifest has no train samples");

  NetworkSpec spec;
  if (tf.have_spec) {
    spec = tf.spec;
  } else {
    int in_c = manifest.mode == "event" ? 2 : 1;
    spec = toy_network(in_c, manifest.height, manifest.width, manifest.classes);
  }
  NetworkParams params = NetworkParams::init(spec, tf.cfg.seed);

  fs::create_directories(out_dir);
  auto t0 = std::chrono::steady_clock::now();
  RunMetrics metrics = train(spec, params, train_set, tf.cfg);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ifstream cfg_is(config_path);
  std::ostringstream cfg_ss;
  cfg_ss << cfg_is.rdbuf();
  CheckpointMeta meta;
  meta.config_hash = fnv1a(cfg_ss.str() + std::to_string(tf.cfg.seed));
  meta.epoch = static_cast<std::uint32_t>(tf.cfg.epochs);
  meta.seed = tf.cfg.seed;
  checkpoint_save((fs::path(out_dir) / "checkpoint.aois").string(), spec, params, meta);

  {
    std::ofstream os(fs::path(out_dir) / "metrics.csv");
    write_metrics_csv(os, metrics);
  }
  if (!test_set.empty()) {
    std::ofstream os(fs::path(out_dir) / "anytime.csv");
    write_anytime_csv(os, anytime_curve(spec, params, test_set, tf.cfg.T));
  }
  write_run_summary((fs::path(out_dir) / "run_summary.txt").string(), meta.config_hash, wall);
  std::cout << "final task loss " << metrics.rows.back().task_loss;
  if (!test_set.empty())
    std::cout << ", test accuracy@T " << final_timestep_accuracy(spec, params, test_set, tf.cfg.T);
  std::cout << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& mode, const std::string& thresholds_arg,
             const std::vector<std::string>& extra_checkpoints, const std::string& out_dir,
             int T_override, bool cumulative) {
  Checkpoint cp = checkpoint_load(checkpoint_path);
  DatasetManifest manifest = DatasetManifest::load(data_path);
  int T = T_override > 0 ? T_override : manifest.T;
  std::vector<SampleInput> test_set = load_split(manifest, "test", T);
  if (test_set.empty()) throw data_error("manifest has no test samples");
  {
    // Compatibility: the checkpoint's spec must accept this dataset.
    Shape in = {cp.spec.in_channels, cp.spec.in_h, cp.spec.in_w};
    const Tensor& first = test_set[0].at(1);
    if (first.shape() != in)
      throw config_error("checkpoint input shape " + shape_str(in) +
                         " does not match dataset sample " + shape_str(first.shape()));
  }
  fs::create_directories(out_dir);
  auto t0 = std::chrono::steady_clock::now();
  if (mode == "fixed") {
    std::ofstream os(fs::path(out_dir) / "anytime.csv");
    write_anytime_csv(os, anytime_curve(cp.spec, cp.params, test_set, T));
  } else if (mode == "cutoff") {
    std::vector<double> thresholds = parse_thresholds(thresholds_arg);
    SweepReport rep = threshold_sweep(cp.spec, cp.params, test_set, thresholds, T, cumulative);
    std::ofstream os(fs::path(out_dir) / "sweep.csv");
    write_sweep_csv(os, rep);
  } else if (mode == "uncertainty") {
    if (extra_checkpoints.empty())
      throw config_error("uncertainty mode needs --checkpoints with at least one more model");
    Ensemble ens;
    ens.spec = cp.spec;
    ens.members.push_back(std::move(cp.params));
    for (const std::string& p : extra_checkpoints) {
      Checkpoint other = checkpoint_load(p);
      if (other.spec.canonical_text() != ens.spec.canonical_text())
        throw config_error("ensemble member " + p + " has a different architecture");
      ens.members.push_back(std::move(other.params));
    }
    UncertaintyCurve curve = uncertainty_curve(ens, test_set, T);
    std::ofstream os(fs::path(out_dir) / "uncertainty.csv");
    write_uncertainty_csv(os, curve);
  } else {
    throw config_error("--mode must be fixed, cutoff, or uncertainty");
  }
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_summary((fs::path(out_dir) / "run_summary.txt").string(),
                    fnv1a(checkpoint_path + mode + thresholds_arg), wall);
  std::cout << "wrote " << mode << " report to " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anytime spiking network trainer and evaluator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  SynthConfig synth_cfg;
  int synth_T = 10;
  bool force = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", synth_cfg.classes);
  synth->add_option("--train-per-class", synth_cfg.train_per_class);
  synth->add_option("--test-per-class", synth_cfg.test_per_class);
  synth->add_option("--height", synth_cfg.height);
  synth->add_option("--width", synth_cfg.width);
  synth->add_option("--window-us", synth_cfg.window_us);
  synth->add_option("--rate-hi", synth_cfg.rate_hi);
  synth->add_option("--rate-lo", synth_cfg.rate_lo);
  synth->add_option("--seed", synth_cfg.seed);
  synth->add_option("--mode", synth_cfg.mode, "event or frame");
  synth->add_option("--T", synth_T, "bin count recorded in the manifest");
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a network");
  std::string train_config, train_out = "run";
  long train_seed = -1;
  train_cmd->add_option("--config", train_config, "train config file")->required();
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--seed", train_seed, "override the config seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint, eval_data, eval_mode = "fixed", eval_thresholds = "0.8:1.0:20",
              eval_out = "eval";
  std::vector<std::string> eval_extra;
  int eval_T = 0;
  bool eval_cumulative = false;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();
  eval_cmd->add_option("--mode", eval_mode, "fixed, cutoff, or uncertainty");
  eval_cmd->add_option("--thresholds", eval_thresholds, "lo:hi:n or inf (cutoff mode)");
  eval_cmd->add_option("--checkpoints", eval_extra, "additional members (uncertainty mode)");
  eval_cmd->add_option("--T", eval_T, "override the manifest timestep count");
  eval_cmd->add_flag("--cumulative", eval_cumulative, "score running-average logits");
  eval_cmd->add_option("--out", eval_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(synth_out, synth_cfg, synth_T, force);
    if (*train_cmd) return cmd_train(train_config, train_out, train_seed);
    if (*eval_cmd)
      return cmd_eval(eval_checkpoint, eval_data, eval_mode, eval_thresholds, eval_extra,
                      eval_out, eval_T, eval_cumulative);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const contract_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const format_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
