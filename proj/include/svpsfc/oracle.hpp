#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "svpsfc/env.hpp"
#include "svpsfc/policies.hpp"

namespace svpsfc {

struct OracleResult {
  std::vector<std::size_t> actions;
  double value = kInfinity;
  std::size_t twice_visited = 0;
  std::uint64_t nodes_expanded = 0;
  /// False when the node budget ran out; `actions`/`value` then hold the best sequence found so far.
  bool optimal = false;
  bool found = false;
};

namespace detail {

struct OracleSearch {
  const Environment& env;
  std::size_t horizon;
  std::uint64_t budget;

  OracleResult best;
  std::vector<std::size_t> path;
  std::uint64_t nodes = 0;
  bool exhausted = false;

  std::size_t twice_visited(const EnvState& s) const {
    std::size_t k = 0;
    for (std::size_t i = 1; i < s.visit_counts.size(); ++i) {
      if (env.instance().is_real_target(i) && s.visit_counts[i] >= 2) ++k;
    }
    return k;
  }

  // Infinity ranks above every real; among infinite values more twice-visited targets is better.
  bool improves(double value, std::size_t twice) const {
    if (!best.found) return true;
    if (value < best.value) return true;
    if (std::isinf(value) && std::isinf(best.value)) return twice > best.twice_visited;
    return false;
  }

  // Revisit maxima only grow along a branch, so the finite part is a lower bound on the leaf value.
  bool prunable(const EnvState& s) const {
    if (!best.found || std::isinf(best.value)) return false;
    double finite_max = 0.0;
    std::size_t missing_visits = 0;
    for (std::size_t i = 1; i < s.revisit.size(); ++i) {
      if (!env.instance().is_real_target(i)) continue;
      if (!std::isinf(s.revisit[i])) finite_max = std::max(finite_max, s.revisit[i]);
      if (s.visit_counts[i] < 2) missing_visits += 2 - s.visit_counts[i];
    }
    if (finite_max > best.value) return true;
    // Not enough steps left to visit every target twice: the leaf value is infinite.
    return missing_visits > horizon - s.step_count;
  }

  void visit(const EnvState& s) {
    if (exhausted) return;
    if (s.step_count == horizon) {
      const double value = env.max_revisit_time(s);
      const std::size_t twice = twice_visited(s);
      if (improves(value, twice)) {
        best.actions = path;
        best.value = value;
        best.twice_visited = twice;
        best.found = true;
      }
      return;
    }
    if (prunable(s)) return;
    const ActionMask mask = env.action_mask(s);
    for (std::size_t a = 0; a < mask.size(); ++a) {
      if (!mask[a]) continue;
      if (nodes >= budget) {
        exhausted = true;
        return;
      }
      ++nodes;
      StepOutcome out = env.step(s, a);
      path.push_back(a);
      visit(out.state);
      path.pop_back();
      if (exhausted) return;
    }
  }
};

}  // namespace detail

/// Depth-first branch and bound over masked action sequences of `horizon` steps. Returns the
/// minimum final max revisit time and the lexicographically smallest witness achieving it.
inline OracleResult optimal_sequence(const Instance& inst, std::size_t horizon, std::uint64_t budget) {
  EnvConfig cfg;
  cfg.horizon_steps = horizon;
  const Environment env(inst, cfg);
  detail::OracleSearch search{env, horizon, budget, {}, {}, 0, false};
  search.path.reserve(horizon);
  search.visit(env.reset());
  OracleResult r = std::move(search.best);
  r.nodes_expanded = search.nodes;
  r.optimal = !search.exhausted && r.found;
  return r;
}

/// Convenience overload with the episode horizon m * n_real.
inline OracleResult optimal_sequence_for_m(const Instance& inst, std::size_t m, std::uint64_t budget) {
  return optimal_sequence(inst, m * inst.n_real(), budget);
}

/// Re-simulates a fixed action sequence; used to check and export oracle witnesses.
inline Trajectory replay_sequence(const Instance& inst, const std::vector<std::size_t>& actions, std::size_t horizon) {
  EnvConfig cfg;
  cfg.horizon_steps = horizon;
  const Environment env(inst, cfg);
  std::size_t next = 0;
  const Policy scripted = [&](const Environment&, const EnvState&, const ActionMask&, Rng&) {
    return next < actions.size() ? actions[next++] : env.num_actions();
  };
  return rollout(env, scripted, 0);
}

/// Trajectory schema plus search metadata.
inline nlohmann::json to_json(const OracleResult& r, const Instance& inst, std::size_t horizon) {
  nlohmann::json j = r.found ? to_json(replay_sequence(inst, r.actions, horizon)) : nlohmann::json::object();
  if (!r.found) {
    j["instance"] = to_json(inst);
    j["actions"] = nlohmann::json::array();
    j["success"] = false;
  }
  j["max_revisit"] = json_real(r.value);
  j["horizon"] = horizon;
  j["optimal"] = r.optimal;
  j["nodes_expanded"] = r.nodes_expanded;
  return j;
}

}  // namespace svpsfc
