#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpsfc/env.hpp"
#include "svpsfc/errors.hpp"
#include "svpsfc/instance.hpp"
#include "svpsfc/nn.hpp"
#include "svpsfc/oracle.hpp"
#include "svpsfc/policies.hpp"
#include "svpsfc/ppo.hpp"
#include "svpsfc/random.hpp"

#ifndef SVPSFC_VERSION
#define SVPSFC_VERSION "0.0.0"
#endif

namespace svpsfc::experiments {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kCommands[] = {"generate", "train", "eval", "compare", "trace", "oracle", "sweep-fuel"};

/// Everything a command reads. Serialized verbatim into the manifest so a run can be replayed.
struct ExperimentSpec {
  std::string command;
  std::string instance;               // instance file; empty means generated (or the reference layout for trace/oracle)
  std::vector<std::string> policies{"greedy"};  // greedy | random | checkpoint path
  std::size_t n_min = 2;
  std::size_t n_max = 8;
  std::size_t configs_per_n = 100;
  std::size_t n_total = 8;
  double grid_size = 10.0;
  double fuel = 120.0;
  std::vector<double> fuel_sweep{20, 40, 60, 80, 100, 120, 140, 160, 180, 200};
  std::size_t m = 7;
  std::size_t horizon = 0;  // oracle only; 0 means m * n_real
  std::uint64_t budget = 50'000'000;  // oracle node budget
  std::uint64_t seed = 0;
  std::string config;  // training config file
  nlohmann::json train_overrides = nlohmann::json::object();
  std::string out = ".";
};

inline nlohmann::json to_json(const ExperimentSpec& s) {
  return {{"command", s.command},
          {"instance", s.instance},
          {"policies", s.policies},
          {"n_range", {s.n_min, s.n_max}},
          {"configs_per_n", s.configs_per_n},
          {"n_total", s.n_total},
          {"grid_size", s.grid_size},
          {"fuel", s.fuel},
          {"fuel_sweep", s.fuel_sweep},
          {"m", s.m},
          {"horizon", s.horizon},
          {"budget", s.budget},
          {"seed", s.seed},
          {"config", s.config},
          {"train_overrides", s.train_overrides},
          {"out", s.out}};
}

inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
  try {
    ExperimentSpec s;
    s.command = j.at("command").get<std::string>();
    s.instance = j.at("instance").get<std::string>();
    s.policies = j.at("policies").get<std::vector<std::string>>();
    s.n_min = j.at("n_range").at(0).get<std::size_t>();
    s.n_max = j.at("n_range").at(1).get<std::size_t>();
    s.configs_per_n = j.at("configs_per_n").get<std::size_t>();
    s.n_total = j.at("n_total").get<std::size_t>();
    s.grid_size = j.at("grid_size").get<double>();
    s.fuel = j.at("fuel").get<double>();
    s.fuel_sweep = j.at("fuel_sweep").get<std::vector<double>>();
    s.m = j.at("m").get<std::size_t>();
    s.horizon = j.at("horizon").get<std::size_t>();
    s.budget = j.at("budget").get<std::uint64_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.config = j.at("config").get<std::string>();
    s.train_overrides = j.at("train_overrides");
    s.out = j.at("out").get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("experiment spec: ") + e.what());
  }
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
  if (!os) throw Error("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Shortest round-trip decimal form, so CSV values reload to the same double.
inline std::string num(double v) {
  const nlohmann::json j = json_real(v);
  return j.is_string() ? j.get<std::string>() : j.dump();
}

inline void check_spec(const ExperimentSpec& s) {
  if (std::find(std::begin(kCommands), std::end(kCommands), s.command) == std::end(kCommands)) {
    throw InvalidArgument("unknown command '" + s.command + "'");
  }
  if (s.n_min < 1 || s.n_min > s.n_max) throw InvalidArgument("n range must satisfy 1 <= lo <= hi");
  if (s.n_max > s.n_total) {
    throw InvalidArgument("n range upper bound " + std::to_string(s.n_max) + " exceeds n_total " +
                          std::to_string(s.n_total));
  }
  if (s.configs_per_n == 0) throw InvalidArgument("configs-per-n must be positive");
  if (s.m < 1) throw InvalidArgument("m must be >= 1");
  if (s.policies.empty()) throw InvalidArgument("at least one policy is required");
  if (!s.instance.empty() && !fs::exists(s.instance)) throw InvalidArgument("instance file not found: " + s.instance);
}

/// Appends dummy slots until the instance has n_total targets. Like generated dummies they get
/// uniform coordinates on the grid, drawn from a stream derived from the instance seed.
inline Instance pad_instance(Instance inst, std::size_t n_total) {
  Rng rng(derive_seed(inst.seed, 5));
  while (inst.n_total() < n_total) {
    const double x = uniform_real(rng, 0.0, inst.grid_size);
    inst.vertices.push_back({x, uniform_real(rng, 0.0, inst.grid_size)});
    inst.dummy.push_back(true);
  }
  return inst;
}

struct ResolvedPolicy {
  std::string name;
  Policy policy;
  std::size_t n_total = 0;  // network width; 0 for heuristics
};

inline ResolvedPolicy resolve_policy(const std::string& name) {
  if (name == "greedy") return {name, greedy_policy(), 0};
  if (name == "random") return {name, random_policy(), 0};
  if (!fs::exists(name)) throw InvalidArgument("policy '" + name + "' is neither greedy, random, nor a checkpoint file");
  auto params = std::make_shared<const nn::MlpParameters>(nn::load_checkpoint(name).params);
  if (params->arch.act_dim < 2) throw SchemaError("checkpoint " + name + " has fewer than two actions");
  const std::size_t n_total = params->arch.act_dim - 1;
  if (params->arch.obs_dim != observation_dim(n_total)) {
    throw InvalidArgument("checkpoint " + name + " expects observation dimension " +
                          std::to_string(params->arch.obs_dim) + " but " + std::to_string(n_total) +
                          " targets give dimension " + std::to_string(observation_dim(n_total)));
  }
  return {name, ppo::neural_policy(params, true), n_total};
}

/// Heuristics run on the instance as given; networks see it padded to their width.
inline Instance adapt(const Instance& inst, const ResolvedPolicy& p) {
  return p.n_total > inst.n_total() ? pad_instance(inst, p.n_total) : inst;
}

inline std::uint64_t config_seed(std::uint64_t base, std::size_t n_real, std::size_t k) {
  return derive_seed(derive_seed(base, n_real), k);
}

struct EvalSet {
  std::vector<std::size_t> n_real;
  std::vector<std::uint64_t> seeds;
  std::vector<Instance> instances;
};

/// A given instance file keeps its own capacity unless `override_fuel` is set.
inline EvalSet build_eval_set(const ExperimentSpec& s, double fuel, bool override_fuel = false) {
  EvalSet set;
  if (!s.instance.empty()) {
    Instance inst = load_instance(s.instance);
    if (override_fuel) inst.fuel_capacity = fuel;
    set.n_real.push_back(inst.n_real());
    set.seeds.push_back(s.seed);
    set.instances.push_back(std::move(inst));
    return set;
  }
  for (std::size_t n = s.n_min; n <= s.n_max; ++n) {
    for (std::size_t k = 0; k < s.configs_per_n; ++k) {
      const std::uint64_t seed = config_seed(s.seed, n, k);
      set.n_real.push_back(n);
      set.seeds.push_back(seed);
      set.instances.push_back(generate_instance(s.n_total, n, s.grid_size, fuel, seed));
    }
  }
  return set;
}

inline Instance single_instance(const ExperimentSpec& s) {
  if (!s.instance.empty()) return load_instance(s.instance);
  return reference_instance(s.fuel);
}

struct Row {
  std::size_t n_real;
  std::string policy;
  std::uint64_t seed;
  double max_revisit;
  bool success;
};

inline std::vector<Row> evaluate_rows(const EvalSet& set, const ResolvedPolicy& p, std::size_t m) {
  std::vector<Row> rows;
  rows.reserve(set.instances.size());
  for (std::size_t i = 0; i < set.instances.size(); ++i) {
    Trajectory t;
    try {
      t = rollout(adapt(set.instances[i], p), p.policy, m, set.seeds[i]);
    } catch (const Error& e) {
      throw Error("policy " + p.name + ", instance seed " + std::to_string(set.seeds[i]) + ": " + e.what());
    }
    rows.push_back({set.n_real[i], p.name, set.seeds[i], t.max_revisit, t.success});
  }
  return rows;
}

inline std::string rows_csv(const std::vector<Row>& rows) {
  std::string csv = "n_real,policy,instance_seed,max_revisit,success\n";
  for (const Row& r : rows) {
    csv += std::to_string(r.n_real) + "," + r.policy + "," + std::to_string(r.seed) + "," + num(r.max_revisit) + "," +
           (r.success ? "1" : "0") + "\n";
  }
  return csv;
}

/// One box-plot line per (policy, n_real), policies in the order given, n ascending.
inline std::string summary_csv(const std::vector<Row>& rows, const std::vector<std::string>& policy_order,
                               nlohmann::json& summary) {
  std::string csv = "n_real,policy,count,mean,median,q1,q3,whisker_low,whisker_high,min,max,success_rate\n";
  summary = nlohmann::json::array();
  std::vector<std::size_t> ns;
  for (const Row& r : rows) ns.push_back(r.n_real);
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  for (std::size_t pi = 0; pi < policy_order.size(); ++pi) {
    for (std::size_t n : ns) {
      std::vector<double> values;
      std::vector<bool> success;
      // Row blocks are laid out policy by policy in the order given; duplicates of a name are kept apart.
      const std::size_t block = rows.size() / policy_order.size();
      for (std::size_t i = pi * block; i < (pi + 1) * block; ++i) {
        if (rows[i].n_real != n) continue;
        values.push_back(rows[i].max_revisit);
        success.push_back(rows[i].success);
      }
      const EvalStats st = summarize(values, success);
      csv += std::to_string(n) + "," + policy_order[pi] + "," + std::to_string(values.size()) + "," + num(st.mean) +
             "," + num(st.median) + "," + num(st.q1) + "," + num(st.q3) + "," + num(st.whisker_low) + "," +
             num(st.whisker_high) + "," + num(st.min) + "," + num(st.max) + "," + num(st.success_rate) + "\n";
      summary.push_back({{"n_real", n},
                         {"policy", policy_order[pi]},
                         {"mean", json_real(st.mean)},
                         {"median", json_real(st.median)},
                         {"success_rate", st.success_rate}});
    }
  }
  return csv;
}

inline ppo::PpoConfig training_config(const ExperimentSpec& s) {
  nlohmann::json j = s.config.empty() ? nlohmann::json::object() : nlohmann::json::parse(read_text(s.config));
  for (const auto& [key, value] : s.train_overrides.items()) j[key] = value;
  ppo::PpoConfig cfg = ppo::config_from_json(j);
  cfg.check();
  return cfg;
}

}  // namespace detail

struct RunResult {
  nlohmann::json manifest;
  std::vector<fs::path> outputs;  // relative to spec.out
};

inline RunResult cmd_generate(const ExperimentSpec& s) {
  RunResult r;
  const detail::EvalSet set = detail::build_eval_set(s, s.fuel);
  auto arr = nlohmann::json::array();
  for (const Instance& inst : set.instances) arr.push_back(to_json(inst));
  detail::write_json(fs::path(s.out) / "instances.json", arr);
  r.outputs.push_back("instances.json");
  r.manifest["results"] = {{"instances", set.instances.size()}, {"seeds", set.seeds}};
  return r;
}

inline RunResult cmd_train(const ExperimentSpec& s) {
  RunResult r;
  const ppo::PpoConfig cfg = detail::training_config(s);
  ppo::Trainer trainer(cfg);
  const fs::path dir(s.out);
  std::string log = std::string(ppo::kTrainLogHeader) + "\n";
  try {
    trainer.run([&](const ppo::TrainLogRow& row) {
      log += ppo::to_csv(row) + "\n";
      if (cfg.eval_interval > 0 && row.update % cfg.eval_interval == 0) {
        nn::save_checkpoint(trainer.checkpoint(), dir / "checkpoint.json");
      }
    });
  } catch (const NumericError& e) {
    // Parameters are still the last committed ones; keep them for inspection.
    nn::save_checkpoint(trainer.checkpoint(), dir / "checkpoint_abort.json");
    detail::write_text(dir / "train_log.csv", log);
    throw NumericError(std::string(e.what()) + " (state dumped to checkpoint_abort.json)");
  }
  nn::save_checkpoint(trainer.checkpoint(), dir / "checkpoint.json");
  detail::write_text(dir / "train_log.csv", log);
  r.outputs = {"checkpoint.json", "train_log.csv"};
  r.manifest["results"] = {{"updates", trainer.updates()},
                           {"steps", trainer.steps()},
                           {"validation_median", json_real(trainer.evaluate_validation())}};
  r.manifest["train_config"] = ppo::to_json(cfg);
  return r;
}

/// Evaluates every policy on the same generated configurations (or the given instance).
inline RunResult cmd_compare(const ExperimentSpec& s) {
  RunResult r;
  const detail::EvalSet set = detail::build_eval_set(s, s.fuel);
  std::vector<detail::Row> rows;
  for (const std::string& name : s.policies) {
    const auto p = detail::resolve_policy(name);
    const auto part = detail::evaluate_rows(set, p, s.m);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::string stem = s.command == "eval" ? "eval" : "compare";
  nlohmann::json summary;
  detail::write_text(fs::path(s.out) / (stem + ".csv"), detail::rows_csv(rows));
  detail::write_text(fs::path(s.out) / (stem + "_summary.csv"), detail::summary_csv(rows, s.policies, summary));
  r.outputs = {stem + ".csv", stem + "_summary.csv"};
  r.manifest["results"] = summary;
  return r;
}

inline RunResult cmd_eval(const ExperimentSpec& s) { return cmd_compare(s); }

inline RunResult cmd_trace(const ExperimentSpec& s) {
  RunResult r;
  const Instance inst = detail::single_instance(s);
  const auto p = detail::resolve_policy(s.policies.front());
  const Trajectory t = rollout(detail::adapt(inst, p), p.policy, s.m, s.seed);
  const fs::path dir(s.out);
  detail::write_json(dir / "trajectory.json", to_json(t));
  std::string poly = "step,vertex,x,y\n";
  const auto pts = polyline(t);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const std::size_t vertex = k == 0 ? 0 : t.actions[k - 1];
    poly += std::to_string(k) + "," + std::to_string(vertex) + "," + detail::num(pts[k].x) + "," +
            detail::num(pts[k].y) + "\n";
  }
  detail::write_text(dir / "polyline.csv", poly);
  r.outputs = {"trajectory.json", "polyline.csv"};
  r.manifest["results"] = {{"actions", t.actions}, {"max_revisit", json_real(t.max_revisit)}, {"success", t.success}};
  return r;
}

inline RunResult cmd_oracle(const ExperimentSpec& s) {
  RunResult r;
  const Instance inst = detail::single_instance(s);
  const std::size_t horizon = s.horizon > 0 ? s.horizon : s.m * inst.n_real();
  const OracleResult res = optimal_sequence(inst, horizon, s.budget);
  detail::write_json(fs::path(s.out) / "oracle.json", to_json(res, inst, horizon));
  r.outputs = {"oracle.json"};
  r.manifest["results"] = {{"value", json_real(res.value)},
                           {"actions", res.actions},
                           {"optimal", res.optimal},
                           {"nodes_expanded", res.nodes_expanded}};
  return r;
}

/// Fixed eval set generated at the smallest capacity, re-evaluated at every capacity without retraining.
inline RunResult cmd_sweep_fuel(const ExperimentSpec& s) {
  RunResult r;
  if (s.fuel_sweep.empty()) throw InvalidArgument("fuel sweep needs at least one capacity");
  const double lowest = *std::min_element(s.fuel_sweep.begin(), s.fuel_sweep.end());
  const detail::EvalSet base = detail::build_eval_set(s, lowest, true);
  std::vector<detail::ResolvedPolicy> policies;
  for (const std::string& name : s.policies) policies.push_back(detail::resolve_policy(name));

  std::string csv = "capacity,policy,mean_max_revisit,median_max_revisit,success_rate\n";
  auto results = nlohmann::json::array();
  for (const auto& p : policies) {
    for (double capacity : s.fuel_sweep) {
      detail::EvalSet set = base;
      for (std::size_t i = 0; i < set.instances.size(); ++i) {
        set.instances[i].fuel_capacity = capacity;
        const Validation v = validate(set.instances[i]);
        if (!v.ok()) {
          throw InvalidArgument("fuel capacity " + detail::num(capacity) + ", instance seed " +
                                std::to_string(set.seeds[i]) + ": " + v.violations.front());
        }
      }
      const auto rows = detail::evaluate_rows(set, p, s.m);
      std::vector<double> values;
      std::vector<bool> success;
      for (const auto& row : rows) {
        values.push_back(row.max_revisit);
        success.push_back(row.success);
      }
      const EvalStats st = summarize(values, success);
      csv += detail::num(capacity) + "," + p.name + "," + detail::num(st.mean) + "," + detail::num(st.median) + "," +
             detail::num(st.success_rate) + "\n";
      results.push_back({{"capacity", capacity},
                         {"policy", p.name},
                         {"mean", json_real(st.mean)},
                         {"success_rate", st.success_rate}});
    }
  }
  detail::write_text(fs::path(s.out) / "fuel_sweep.csv", csv);
  r.outputs = {"fuel_sweep.csv"};
  r.manifest["results"] = results;
  return r;
}

/// Runs one command and writes its outputs plus manifest.json into spec.out.
inline RunResult run(const ExperimentSpec& s) {
  detail::check_spec(s);
  fs::create_directories(s.out);
  RunResult r;
  if (s.command == "generate") r = cmd_generate(s);
  else if (s.command == "train") r = cmd_train(s);
  else if (s.command == "eval") r = cmd_eval(s);
  else if (s.command == "compare") r = cmd_compare(s);
  else if (s.command == "trace") r = cmd_trace(s);
  else if (s.command == "oracle") r = cmd_oracle(s);
  else r = cmd_sweep_fuel(s);

  r.manifest["version"] = SVPSFC_VERSION;
  r.manifest["spec"] = to_json(s);
  auto outputs = nlohmann::json::array();
  for (const auto& p : r.outputs) outputs.push_back(p.generic_string());
  r.manifest["outputs"] = outputs;
  detail::write_json(fs::path(s.out) / kManifestName, r.manifest);
  return r;
}

/// Re-executes the spec recorded in a manifest, writing into `out`.
inline RunResult replay(const fs::path& manifest_path, const std::string& out) {
  const nlohmann::json m = nlohmann::json::parse(detail::read_text(manifest_path));
  if (!m.contains("spec")) throw SchemaError(manifest_path.string() + ": no spec recorded");
  ExperimentSpec s = spec_from_json(m.at("spec"));
  s.out = out;
  return run(s);
}

/// True when every output listed in both manifests has identical bytes.
inline bool identical_outputs(const fs::path& dir_a, const fs::path& dir_b, std::string* first_difference = nullptr) {
  const nlohmann::json m = nlohmann::json::parse(detail::read_text(dir_a / kManifestName));
  for (const auto& name : m.at("outputs")) {
    const std::string file = name.get<std::string>();
    if (!fs::exists(dir_b / file) || detail::read_text(dir_a / file) != detail::read_text(dir_b / file)) {
      if (first_difference) *first_difference = file;
      return false;
    }
  }
  return true;
}

}  // namespace svpsfc::experiments
