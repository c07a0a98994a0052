#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "svpsfc/experiments.hpp"

namespace {

using svpsfc::experiments::ExperimentSpec;

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

void parse_n_range(const std::string& text, ExperimentSpec& s) {
  const auto parts = split(text, text.find(':') != std::string::npos ? ':' : '-');
  if (parts.size() == 1) {
    s.n_min = s.n_max = std::stoul(parts[0]);
  } else if (parts.size() == 2) {
    s.n_min = std::stoul(parts[0]);
    s.n_max = std::stoul(parts[1]);
  } else {
    throw svpsfc::InvalidArgument("--n-range expects lo:hi, got '" + text + "'");
  }
}

void add_common(CLI::App* sub, ExperimentSpec& s, std::string& n_range, std::string& fuel_sweep,
                std::vector<std::string>& sets) {
  sub->add_option("--instance", s.instance, "Instance JSON file (default: generated, or the reference layout)");
  sub->add_option("--policy", s.policies, "greedy | random | checkpoint path; repeat to compare several")
      ->expected(1, -1);
  sub->add_option("--n-range", n_range, "Real-target counts lo:hi for generated configurations");
  sub->add_option("--configs-per-n", s.configs_per_n, "Generated configurations per n")->capture_default_str();
  sub->add_option("--n-total", s.n_total, "Target slots per generated instance")->capture_default_str();
  sub->add_option("--grid", s.grid_size, "Grid side length")->capture_default_str();
  sub->add_option("--fuel", s.fuel, "Fuel capacity")->capture_default_str();
  sub->add_option("--fuel-sweep", fuel_sweep, "Comma-separated capacities for sweep-fuel");
  sub->add_option("--m", s.m, "Horizon multiplier (episode = m * n_real steps)")->capture_default_str();
  sub->add_option("--horizon", s.horizon, "Explicit oracle horizon in steps");
  sub->add_option("--budget", s.budget, "Oracle node budget")->capture_default_str();
  sub->add_option("--seed", s.seed, "Base seed")->capture_default_str();
  sub->add_option("--config", s.config, "Training config JSON");
  sub->add_option("--set", sets, "Training config override key=json, e.g. --set total_steps=4096");
  sub->add_option("--out", s.out, "Output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persistent surveillance with fuel constraints: experiments"};
  app.set_version_flag("--version", SVPSFC_VERSION);
  app.require_subcommand(1);

  ExperimentSpec spec;
  std::string n_range, fuel_sweep;
  std::vector<std::string> sets;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "Write generated instances"},
      {"train", "Train a policy with PPO"},
      {"eval", "Evaluate policies on generated configurations"},
      {"compare", "Compare policies per n with box-plot summaries"},
      {"trace", "Export one trajectory and its polyline"},
      {"oracle", "Exact minimum max revisit time for small instances"},
      {"sweep-fuel", "Evaluate fixed policies across fuel capacities"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, spec, n_range, fuel_sweep, sets);
    sub->callback([&spec, name = name] { spec.command = name; });
  }
  std::string manifest;
  CLI::App* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  replay->add_option("manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  std::string replay_out;
  replay->add_option("--out", replay_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    svpsfc::experiments::RunResult result;
    if (replay->parsed()) {
      result = svpsfc::experiments::replay(manifest, replay_out);
    } else {
      if (!n_range.empty()) parse_n_range(n_range, spec);
      if (!fuel_sweep.empty()) {
        spec.fuel_sweep.clear();
        for (const auto& c : split(fuel_sweep, ',')) spec.fuel_sweep.push_back(std::stod(c));
      }
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw svpsfc::InvalidArgument("--set expects key=value, got '" + kv + "'");
        spec.train_overrides[kv.substr(0, eq)] = nlohmann::json::parse(kv.substr(eq + 1));
      }
      result = svpsfc::experiments::run(spec);
    }
    std::cout << result.manifest.at("results").dump() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
