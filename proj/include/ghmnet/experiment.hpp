#pragma once

// Experiment runner behind the command-line tool. Needs yaml-cpp; the rest of
// the library does not.

#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ghmnet/bp.hpp"
#include "ghmnet/checks.hpp"
#include "ghmnet/diffusion.hpp"
#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"
#include "ghmnet/nets.hpp"
#include "ghmnet/text_io.hpp"
#include "ghmnet/train.hpp"

namespace ghmnet::experiment {

inline constexpr const char* kVersion = "0.1.0";

struct ModelSpec {
  std::vector<int> m = {2, 2};
  int S = 2;
  double K = 4.0;
  std::string psi = "random";  // random | uniform | file
  std::string psi_file;
  std::string root = "random";  // random | uniform
};

struct SampleTask {
  int count = 10;
  double sigma = 0.0;
};
struct OracleCheckTask {
  int instances = 50;
  int trials = 5;
  double sigma2 = 1.0;
};
struct BpTask {
  int count = 10;
  double sigma2 = 1.0;
};
struct MpCheckTask {
  int instances = 50;
  int trials = 5;
  double sigma2 = 1.0;
};
struct ApproxSweepTask {
  std::string arch = "convnet";
  std::vector<double> delta = {1.0, 0.5, 0.25};
  int draws = 1000;
};
struct TrainTask {
  std::string arch = "unet";
  std::vector<int> n = {100, 1000};
  int D = 32;
  double B = 0.0;
  std::string init = "random";  // random | constructed
  double init_scale = 0.3;
  double delta = 0.5;
  double step = 0.5;
  int iterations = 100;
  int eval_n = 1000;
  int eval_every = 10;
  bool save_weights = false;
};
struct DiffuseTask {
  std::vector<double> T = {20.0};
  std::vector<int> N = {800};
  int samples = 10000;
  std::string denoiser = "exact";  // exact | path to U-Net weights
  bool round = true;
  bool dump_samples = false;
};

using TaskSpec = std::variant<SampleTask, OracleCheckTask, BpTask, MpCheckTask, ApproxSweepTask, TrainTask, DiffuseTask>;

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {"sample", "oracle-check", "bp", "mp-check", "approx-sweep",
                                                 "train", "diffuse"};
  return names;
}

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output = "out";
  ModelSpec model;
  std::string task;
  TaskSpec spec;
  std::filesystem::path base_dir;  // relative file references resolve against this
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

// Wrong types are parse errors, bad values are validation errors.
template <class T>
T read(const YAML::Node& node, const std::string& key, const T& fallback) {
  const auto v = node[key];
  if (!v) return fallback;
  try {
    return v.as<T>();
  } catch (const YAML::Exception&) {
    throw Error(ErrorCode::parse, "key '" + key + "' has the wrong type");
  }
}

template <class T>
std::vector<T> read_list(const YAML::Node& node, const std::string& key, const std::vector<T>& fallback) {
  const auto v = node[key];
  if (!v) return fallback;
  if (v.IsScalar()) return {read<T>(node, key, T{})};
  if (!v.IsSequence()) throw Error(ErrorCode::parse, "key '" + key + "' must be a value or a list");
  try {
    return v.as<std::vector<T>>();
  } catch (const YAML::Exception&) {
    throw Error(ErrorCode::parse, "key '" + key + "' has the wrong element type");
  }
}

inline void only_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw Error(ErrorCode::parse, "section '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    require(allowed.count(key) > 0, ErrorCode::configuration, "unknown key '" + key + "' in " + where);
  }
}

inline void check(bool ok, const std::string& what) { require(ok, ErrorCode::configuration, what); }

template <class T>
void all_positive(const std::vector<T>& v, const std::string& key) {
  check(!v.empty(), key + " must not be empty");
  for (const T& x : v) check(x > 0, key + " entries must be positive");
}

inline TaskSpec parse_task(const std::string& name, const YAML::Node& n) {
  using namespace std::string_literals;
  if (name == "sample") {
    only_keys(n, name, {"count", "sigma"});
    SampleTask t{read(n, "count", 10), read(n, "sigma", 0.0)};
    check(t.count >= 1, "count must be positive");
    check(t.sigma >= 0.0, "sigma must be nonnegative");
    return t;
  }
  if (name == "oracle-check" || name == "mp-check") {
    only_keys(n, name, {"instances", "trials", "sigma2"});
    const int instances = read(n, "instances", 50), trials = read(n, "trials", 5);
    const double sigma2 = read(n, "sigma2", 1.0);
    check(instances >= 1 && trials >= 1, "instances and trials must be positive");
    check(sigma2 > 0.0, "sigma2 must be positive");
    if (name == "oracle-check") return OracleCheckTask{instances, trials, sigma2};
    return MpCheckTask{instances, trials, sigma2};
  }
  if (name == "bp") {
    only_keys(n, name, {"count", "sigma2"});
    BpTask t{read(n, "count", 10), read(n, "sigma2", 1.0)};
    check(t.count >= 1, "count must be positive");
    check(t.sigma2 > 0.0, "sigma2 must be positive");
    return t;
  }
  if (name == "approx-sweep") {
    only_keys(n, name, {"arch", "delta", "draws"});
    ApproxSweepTask t;
    t.arch = read(n, "arch", t.arch);
    t.delta = read_list(n, "delta", t.delta);
    t.draws = read(n, "draws", t.draws);
    check(t.arch == "convnet" || t.arch == "unet", "arch must be convnet or unet");
    all_positive(t.delta, "delta");
    check(t.draws >= 1, "draws must be positive");
    return t;
  }
  if (name == "train") {
    only_keys(n, name, {"arch", "n", "D", "B", "init", "init_scale", "delta", "step", "iterations", "eval_n",
                        "eval_every", "save_weights"});
    TrainTask t;
    t.arch = read(n, "arch", t.arch);
    t.n = read_list(n, "n", t.n);
    t.D = read(n, "D", t.D);
    t.B = read(n, "B", t.B);
    t.init = read(n, "init", t.init);
    t.init_scale = read(n, "init_scale", t.init_scale);
    t.delta = read(n, "delta", t.delta);
    t.step = read(n, "step", t.step);
    t.iterations = read(n, "iterations", t.iterations);
    t.eval_n = read(n, "eval_n", t.eval_n);
    t.eval_every = read(n, "eval_every", t.eval_every);
    t.save_weights = read(n, "save_weights", t.save_weights);
    check(t.arch == "convnet" || t.arch == "unet", "arch must be convnet or unet");
    check(t.init == "random" || t.init == "constructed", "init must be random or constructed");
    all_positive(t.n, "n");
    check(t.D >= 1, "D must be positive");
    check(t.B >= 0.0, "B must be nonnegative (0 means no constraint)");
    check(t.init_scale >= 0.0, "init_scale must be nonnegative");
    check(t.delta > 0.0, "delta must be positive");
    check(t.step > 0.0, "step must be positive");
    check(t.iterations >= 0, "iterations must be nonnegative");
    check(t.eval_n >= 2, "eval_n must be at least 2");
    check(t.eval_every >= 1, "eval_every must be positive");
    return t;
  }
  if (name == "diffuse") {
    only_keys(n, name, {"T", "N", "samples", "denoiser", "round", "dump_samples"});
    DiffuseTask t;
    t.T = read_list(n, "T", t.T);
    t.N = read_list(n, "N", t.N);
    t.samples = read(n, "samples", t.samples);
    t.denoiser = read(n, "denoiser", t.denoiser);
    t.round = read(n, "round", t.round);
    t.dump_samples = read(n, "dump_samples", t.dump_samples);
    all_positive(t.T, "T");
    all_positive(t.N, "N");
    check(t.samples >= 1, "samples must be positive");
    return t;
  }
  throw Error(ErrorCode::configuration, "unknown task '" + name + "'");
}

}  // namespace detail

/// Parses a config document. `task` is the subcommand; the document must hold
/// exactly one task section and it must match.
inline ExperimentConfig parse_config(const std::string& text, const std::string& task,
                                     const std::filesystem::path& base_dir = {}) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::parse, "malformed config: " + std::string(e.what()));
  }
  if (!root.IsMap()) throw Error(ErrorCode::parse, "config must be a mapping");

  std::set<std::string> allowed = {"seed", "output", "model"};
  for (const auto& name : task_names()) allowed.insert(name);
  detail::only_keys(root, "config", allowed);

  ExperimentConfig c;
  c.base_dir = base_dir;
  c.seed = detail::read<std::uint64_t>(root, "seed", 0);
  c.output = detail::read<std::string>(root, "output", c.output);

  const auto model = root["model"];
  require(static_cast<bool>(model), ErrorCode::configuration, "missing 'model' section");
  detail::only_keys(model, "model", {"m", "S", "K", "psi", "psi_file", "root"});
  c.model.m = detail::read_list<int>(model, "m", c.model.m);
  c.model.S = detail::read(model, "S", c.model.S);
  c.model.K = detail::read(model, "K", c.model.K);
  c.model.psi = detail::read(model, "psi", c.model.psi);
  c.model.psi_file = detail::read(model, "psi_file", c.model.psi_file);
  c.model.root = detail::read(model, "root", c.model.root);
  detail::all_positive(c.model.m, "m");
  detail::check(c.model.S >= 2, "S must be at least 2");
  detail::check(c.model.K > 1.0, "K must exceed 1");
  detail::check(c.model.psi == "random" || c.model.psi == "uniform" || c.model.psi == "file",
                "psi must be random, uniform or file");
  detail::check((c.model.psi == "file") == !c.model.psi_file.empty(), "psi_file is required exactly when psi is file");
  detail::check(c.model.root == "random" || c.model.root == "uniform", "root must be random or uniform");
  if (c.model.psi == "random") detail::check(c.model.K >= c.model.S, "random tables need K >= S");

  int sections = 0;
  for (const auto& name : task_names()) sections += root[name] ? 1 : 0;
  require(sections == 1, ErrorCode::configuration, "config must contain exactly one task section");
  require(static_cast<bool>(root[task]), ErrorCode::configuration, "config has no '" + task + "' section");
  c.task = task;
  c.spec = detail::parse_task(task, root[task].IsNull() ? YAML::Node(YAML::NodeType::Map) : root[task]);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& task) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::configuration, "cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), task, std::filesystem::path(path).parent_path());
}

inline std::string resolve_path(const ExperimentConfig& c, const std::string& file) {
  std::filesystem::path p(file);
  return (p.is_absolute() || c.base_dir.empty() ? p : c.base_dir / p).string();
}

/// Full effective config, defaults included.
inline std::string resolved_yaml(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "output" << YAML::Value << c.output;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "m" << YAML::Value << YAML::Flow << c.model.m;
  out << YAML::Key << "S" << YAML::Value << c.model.S;
  out << YAML::Key << "K" << YAML::Value << c.model.K;
  out << YAML::Key << "psi" << YAML::Value << c.model.psi;
  if (!c.model.psi_file.empty()) out << YAML::Key << "psi_file" << YAML::Value << resolve_path(c, c.model.psi_file);
  out << YAML::Key << "root" << YAML::Value << c.model.root;
  out << YAML::EndMap;
  out << YAML::Key << c.task << YAML::Value << YAML::BeginMap;
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        auto kv = [&](const char* k, const auto& v) { out << YAML::Key << k << YAML::Value << v; };
        auto list = [&](const char* k, const auto& v) { out << YAML::Key << k << YAML::Value << YAML::Flow << v; };
        if constexpr (std::is_same_v<T, SampleTask>) {
          kv("count", t.count), kv("sigma", t.sigma);
        } else if constexpr (std::is_same_v<T, OracleCheckTask> || std::is_same_v<T, MpCheckTask>) {
          kv("instances", t.instances), kv("trials", t.trials), kv("sigma2", t.sigma2);
        } else if constexpr (std::is_same_v<T, BpTask>) {
          kv("count", t.count), kv("sigma2", t.sigma2);
        } else if constexpr (std::is_same_v<T, ApproxSweepTask>) {
          kv("arch", t.arch), list("delta", t.delta), kv("draws", t.draws);
        } else if constexpr (std::is_same_v<T, TrainTask>) {
          kv("arch", t.arch), list("n", t.n), kv("D", t.D), kv("B", t.B), kv("init", t.init);
          kv("init_scale", t.init_scale), kv("delta", t.delta), kv("step", t.step);
          kv("iterations", t.iterations), kv("eval_n", t.eval_n), kv("eval_every", t.eval_every);
          kv("save_weights", t.save_weights);
        } else {
          list("T", t.T), list("N", t.N), kv("samples", t.samples);
          kv("denoiser", t.denoiser == "exact" ? t.denoiser : resolve_path(c, t.denoiser));
          kv("round", t.round), kv("dump_samples", t.dump_samples);
        }
      },
      c.spec);
  out << YAML::EndMap << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Running

inline GhmParams make_model(const ExperimentConfig& c, std::uint64_t seed) {
  const auto topo = TreeTopology::build(c.model.m);
  if (c.model.psi == "file") return read_params_file(resolve_path(c, c.model.psi_file), topo, c.model.K);
  return generate_params(topo, c.model.S, c.model.K, c.model.psi == "uniform" ? PsiMode::uniform : PsiMode::random,
                         seed, c.model.root == "uniform" ? RootMode::uniform : RootMode::random);
}

struct RunOutput {
  std::string results;                                      // results.csv
  std::vector<std::pair<std::string, std::string>> files;  // further outputs, name -> content
};

namespace detail {

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : width_(header.size()) { row_strings(header); }

  Csv& cell(const std::string& s) {
    if (!row_.empty()) row_ += ',';
    row_ += s;
    ++cells_;
    return *this;
  }
  Csv& cell(double v) { return cell(format_double(v)); }
  Csv& cell(long long v) { return cell(std::to_string(v)); }
  Csv& cell(int v) { return cell(std::to_string(v)); }
  Csv& cell(std::uint64_t v) { return cell(std::to_string(v)); }
  template <class T>
  Csv& cells(const std::vector<T>& v) {
    for (const T& x : v) cell(x);
    return *this;
  }
  void end() {
    require(cells_ == width_, ErrorCode::io, "CSV row has the wrong number of cells");
    text_ += row_ + '\n';
    row_.clear();
    cells_ = 0;
  }
  const std::string& str() const { return text_; }

 private:
  void row_strings(const std::vector<std::string>& v) {
    for (const auto& s : v) cell(s);
    end();
  }
  std::size_t width_, cells_ = 0;
  std::string row_, text_;
};

inline std::vector<std::string> numbered(const std::string& prefix, int count) {
  std::vector<std::string> out;
  for (int i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline std::vector<std::string> concat(std::vector<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline RunOutput run_sample(const ExperimentConfig& c, const SampleTask& t) {
  const auto p = make_model(c, derive_seed(c.seed, "model"));
  const int d = p.leaf_count();
  Csv csv(concat({{"sample", "label"}, numbered("x_", d), t.sigma > 0 ? numbered("z_", d) : std::vector<std::string>{}}));
  Rng rng(derive_seed(c.seed, "sample"));
  for (int i = 0; i < t.count; ++i) {
    auto x = sample(p, rng);
    csv.cell(i).cell(x.label()).cells(x.leaves());
    if (t.sigma > 0) csv.cells(corrupt(x.leaves(), t.sigma, rng));
    csv.end();
  }
  std::ostringstream params;
  write_params(params, p);
  return {csv.str(), {{"params.txt", params.str()}}};
}

inline RunOutput run_oracle_check(const ExperimentConfig& c, const OracleCheckTask& t) {
  Csv csv({"instance", "S", "d", "K", "classify_max_abs_dev", "denoise_max_abs_dev"});
  for (int i = 0; i < t.instances; ++i) {
    const auto p = make_model(c, derive_seed(c.seed, "instance", i));
    const auto dev = bp_vs_oracle(p, t.trials, t.sigma2, derive_seed(c.seed, "oracle-trials", i));
    csv.cell(i).cell(p.S).cell(p.leaf_count()).cell(p.K).cell(dev.classify).cell(dev.denoise).end();
  }
  return {csv.str(), {}};
}

inline RunOutput run_bp(const ExperimentConfig& c, const BpTask& t) {
  const auto p = make_model(c, derive_seed(c.seed, "model"));
  const int d = p.leaf_count();
  Csv csv(concat({{"sample", "label"}, numbered("x_", d), numbered("posterior_", p.S), numbered("z_", d),
                  numbered("mean_", d)}));
  Rng rng(derive_seed(c.seed, "bp"));
  for (int i = 0; i < t.count; ++i) {
    auto x = sample(p, rng);
    auto z = corrupt(x.leaves(), std::sqrt(t.sigma2), rng);
    csv.cell(i).cell(x.label()).cells(x.leaves()).cells(bp_classify(p, x.leaves()));
    csv.cells(z).cells(bp_denoise(p, z, t.sigma2).mean).end();
  }
  return {csv.str(), {}};
}

inline RunOutput run_mp_check(const ExperimentConfig& c, const MpCheckTask& t) {
  Csv csv({"instance", "classify_nodes", "denoise_down", "denoise_up", "denoise_leaf", "classify_output",
           "denoise_mean", "unnormalized", "max_dev"});
  for (int i = 0; i < t.instances; ++i) {
    const auto p = make_model(c, derive_seed(c.seed, "instance", i));
    const auto dev = mp_vs_bp(p, t.trials, t.sigma2, derive_seed(c.seed, "mp-trials", i));
    csv.cell(i).cell(dev.classify_nodes).cell(dev.denoise_down).cell(dev.denoise_up).cell(dev.denoise_leaf);
    csv.cell(dev.classify_output).cell(dev.denoise_mean).cell(dev.unnormalized).cell(dev.max()).end();
  }
  return {csv.str(), {}};
}

inline RunOutput run_approx_sweep(const ExperimentConfig& c, const ApproxSweepTask& t) {
  const auto p = make_model(c, derive_seed(c.seed, "model"));
  Csv csv({"delta", "D", "native_width", "max_error"});
  for (double delta : t.delta) {
    if (t.arch == "convnet") {
      const auto w = construct_classifier(p, delta);
      csv.cell(delta).cell(w.D).cell(w.native_width()).cell(classifier_log_error(p, w)).end();
    } else {
      const auto w = construct_denoiser(p, delta);
      csv.cell(delta).cell(w.D).cell(w.native_width());
      csv.cell(denoiser_sup_error(p, w, t.draws, derive_seed(c.seed, "approx-draws"))).end();
    }
  }
  return {csv.str(), {}};
}

inline constexpr long long kMaxTrainWidth = 4096;

inline RunOutput run_train(const ExperimentConfig& c, const TrainTask& t) {
  const auto p = make_model(c, derive_seed(c.seed, "model"));
  const auto kind = t.arch == "convnet" ? NetKind::convnet : NetKind::unet;
  NetWeights init;
  if (t.init == "random") {
    init = random_init(p.topology, p.S, t.D, t.init_scale, derive_seed(c.seed, "init"), kind);
  } else {
    init = kind == NetKind::convnet ? construct_classifier(p, t.delta) : construct_denoiser(p, t.delta);
    require(init.native_width() <= kMaxTrainWidth, ErrorCode::configuration,
            "constructed network is too wide to train densely (width " + std::to_string(init.native_width()) + ")");
  }
  const auto eval_seed = derive_seed(c.seed, "d2-eval");
  const auto before = d2_net(init, p, t.eval_n, eval_seed);

  Csv csv({"n", "D", "initial_risk", "final_risk", "best_iteration", "initial_d2", "initial_d2_se", "final_d2",
           "final_d2_se"});
  std::string log = "n,iteration,risk,d2,d2_se,seconds\n";
  RunOutput out;
  for (int n : t.n) {
    TrainConfig tc;
    tc.task = kind == NetKind::convnet ? Task::classify : Task::denoise;
    tc.n = n;
    tc.step = t.step;
    tc.iterations = t.iterations;
    tc.B = t.B;
    tc.eval_n = t.eval_n;
    tc.eval_every = t.eval_every;
    tc.seed = derive_seed(c.seed, "train", static_cast<std::uint64_t>(n));
    const auto r = fit(p, tc, init);
    const auto after = d2_net(r.weights, p, t.eval_n, eval_seed);
    csv.cell(n).cell(static_cast<long long>(r.weights.D)).cell(r.initial_risk).cell(r.final_risk);
    csv.cell(r.best_iteration).cell(before.value).cell(before.se).cell(after.value).cell(after.se).end();
    for (const auto& row : r.log) {
      log += std::to_string(n) + ',' + std::to_string(row.iteration) + ',' + format_double(row.risk) + ',' +
             (std::isnan(row.d2) ? "" : format_double(row.d2)) + ',' +
             (std::isnan(row.d2_se) ? "" : format_double(row.d2_se)) + ',' + format_double(row.seconds) + '\n';
    }
    if (t.save_weights) {
      std::ostringstream w;
      write_weights(w, r.weights);
      out.files.emplace_back("weights_n" + std::to_string(n) + ".txt", w.str());
    }
  }
  out.results = csv.str();
  out.files.emplace_back("train_log.csv", log);
  return out;
}

inline RunOutput run_diffuse(const ExperimentConfig& c, const DiffuseTask& t) {
  const auto p = make_model(c, derive_seed(c.seed, "model"));
  const int d = p.leaf_count();
  NetWeights net;
  std::unique_ptr<BpTimeDenoiser> exact;
  TimeDenoiser drift;
  if (t.denoiser == "exact") {
    exact = std::make_unique<BpTimeDenoiser>(p);
    drift = [&exact](std::span<const double> z, double s) { return (*exact)(z, s); };
  } else {
    net = read_weights_file(resolve_path(c, t.denoiser));
    require(net.kind == NetKind::unet && net.S == p.S && net.topology.branching_factors() == p.topology.branching_factors(),
            ErrorCode::configuration, "denoiser weights do not match the model");
    drift = net_time_denoiser(net);
  }
  Csv csv({"T", "N", "samples", "tv", "tv_se", "se_scale"});
  Csv dump(concat({{"T", "N", "sample"}, numbered("x_", d)}));
  for (double T : t.T)
    for (int N : t.N) {
      DiffusionConfig dc{T, N, t.samples, derive_seed(c.seed, "diffuse"), t.round};
      const auto raw = sample_sde(drift, d, dc);
      const auto rounded = round_samples(raw, p.S);
      const auto r = eval_recovery(p, rounded);
      csv.cell(T).cell(N).cell(t.samples).cell(r.tv).cell(r.tv_se).cell(r.se_scale).end();
      if (t.dump_samples)
        for (std::size_t i = 0; i < raw.size(); ++i) {
          dump.cell(T).cell(N).cell(static_cast<long long>(i));
          if (t.round) dump.cells(rounded[i]);
          else dump.cells(raw[i]);
          dump.end();
        }
    }
  RunOutput out{csv.str(), {}};
  if (t.dump_samples) out.files.emplace_back("samples.csv", dump.str());
  return out;
}

}  // namespace detail

/// Runs the task in memory; nothing touches the disk except reading inputs.
inline RunOutput run(const ExperimentConfig& c) {
  return std::visit(
      [&](const auto& t) -> RunOutput {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, SampleTask>) return detail::run_sample(c, t);
        else if constexpr (std::is_same_v<T, OracleCheckTask>) return detail::run_oracle_check(c, t);
        else if constexpr (std::is_same_v<T, BpTask>) return detail::run_bp(c, t);
        else if constexpr (std::is_same_v<T, MpCheckTask>) return detail::run_mp_check(c, t);
        else if constexpr (std::is_same_v<T, ApproxSweepTask>) return detail::run_approx_sweep(c, t);
        else if constexpr (std::is_same_v<T, TrainTask>) return detail::run_train(c, t);
        else return detail::run_diffuse(c, t);
      },
      c.spec);
}

/// Exit status for an error code.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return 2;
    case ErrorCode::numeric:
    case ErrorCode::divergence: return 4;
    case ErrorCode::enumeration_limit: return 5;
    default: return 3;
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
}

/// Writes results.csv, config.resolved, the manifest and any extra files.
inline void write_outputs(const ExperimentConfig& c, const RunOutput& r, const std::string& config_path,
                          double wall_seconds) {
  const std::filesystem::path dir(c.output);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::io, "cannot create output directory " + c.output);
  write_text(dir / "results.csv", r.results);
  write_text(dir / "config.resolved", resolved_yaml(c));
  std::ostringstream m;
  m << "tool: ghmnet " << kVersion << "\n";
  m << "task: " << c.task << "\n";
  m << "config: " << config_path << "\n";
  m << "seed: " << c.seed << "\n";
  m << "compiler: " << __VERSION__ << "\n";
  m << "eigen: " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << "\n";
  m << "wall_seconds: " << format_double(wall_seconds) << "\n";
  m << "files: results.csv config.resolved";
  for (const auto& [name, text] : r.files) {
    write_text(dir / name, text);
    m << ' ' << name;
  }
  m << "\n";
  write_text(dir / "manifest", m.str());
}

}  // namespace ghmnet::experiment
