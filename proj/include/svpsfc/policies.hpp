#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpsfc/env.hpp"
#include "svpsfc/errors.hpp"
#include "svpsfc/instance.hpp"
#include "svpsfc/random.hpp"

namespace svpsfc {

/// A decision rule. Must return an action that is on in the mask; may draw from rng.
using Policy = std::function<std::size_t(const Environment&, const EnvState&, const ActionMask&, Rng&)>;

/// Thrown when a policy proposes a masked action.
class PolicyError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

/// Picks the unmasked target with the largest anticipated arrival clock c_j + d(l, j), lowest
/// index on ties; falls back to the depot when no target is unmasked.
inline std::size_t greedy_act(const Environment& env, const EnvState& s, const ActionMask& mask) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < mask.size(); ++j) {
    if (!mask[j]) continue;
    const double score = s.clocks[j] + env.distance(s.location, j);
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best;
}

/// Uniform over the unmasked entries.
inline std::size_t random_feasible_act(const ActionMask& mask, Rng& rng) {
  const std::size_t on = mask.count();
  if (on == 0) throw ContractViolation("random_feasible_act: empty mask");
  std::size_t pick = static_cast<std::size_t>(uniform_index(rng, on));
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (!mask[a]) continue;
    if (pick == 0) return a;
    --pick;
  }
  return mask.size();  // unreachable
}

inline Policy greedy_policy() {
  return [](const Environment& env, const EnvState& s, const ActionMask& mask, Rng&) {
    return greedy_act(env, s, mask);
  };
}

inline Policy random_policy() {
  return [](const Environment&, const EnvState&, const ActionMask& mask, Rng& rng) {
    return random_feasible_act(mask, rng);
  };
}

struct Trajectory {
  Instance instance;
  std::size_t horizon_multiplier = 7;
  std::vector<std::size_t> actions;
  std::vector<double> distances;
  std::vector<double> rewards;
  std::vector<double> fuel;  // fuel after each step
  std::vector<double> revisit;  // final per-vertex revisit maxima, slot 0 unused
  double max_revisit = kInfinity;
  double elapsed = 0.0;
  bool success = false;
};

/// Runs one masked episode of m * n_real steps from reset.
inline Trajectory rollout(const Environment& env, const Policy& policy, std::uint64_t seed) {
  Rng rng(seed);
  Trajectory t;
  t.instance = env.instance();
  EnvState s = env.reset();
  const std::size_t horizon = env.horizon();
  t.actions.reserve(horizon);
  t.distances.reserve(horizon);
  t.rewards.reserve(horizon);
  t.fuel.reserve(horizon);

  bool completed = false;
  while (s.step_count < horizon) {
    const ActionMask mask = env.action_mask(s);
    if (!mask.any()) break;
    const std::size_t a = policy(env, s, mask, rng);
    if (a >= mask.size() || !mask[a]) {
      throw PolicyError("policy chose masked action " + std::to_string(a) + " at step " +
                        std::to_string(s.step_count));
    }
    StepOutcome out = env.step(s, a);
    t.actions.push_back(a);
    t.distances.push_back(out.info.distance);
    t.rewards.push_back(out.reward);
    t.fuel.push_back(out.state.fuel);
    s = std::move(out.state);
    if (out.done) completed = true;
  }
  t.revisit = s.revisit;
  t.max_revisit = env.max_revisit_time(s);
  t.elapsed = s.elapsed;
  t.success = completed;
  return t;
}

inline Trajectory rollout(const Instance& inst, const Policy& policy, std::size_t m, std::uint64_t seed) {
  EnvConfig cfg;
  cfg.horizon_multiplier = m;
  Trajectory t = rollout(Environment(inst, cfg), policy, seed);
  t.horizon_multiplier = m;
  return t;
}

/// Linear-interpolation quantile of sorted data (the usual "type 7" definition).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0 || sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct EvalStats {
  std::vector<double> max_revisit;  // per instance, in input order
  std::vector<bool> success;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
  double whisker_low = 0.0;   // smallest value within q1 - 1.5 IQR
  double whisker_high = 0.0;  // largest value within q3 + 1.5 IQR
  double success_rate = 0.0;
};

inline EvalStats summarize(std::vector<double> values, std::vector<bool> success) {
  EvalStats st;
  st.max_revisit = values;
  st.success = std::move(success);
  if (values.empty()) return st;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  st.mean = sum / static_cast<double>(values.size());
  st.median = quantile_sorted(values, 0.5);
  st.q1 = quantile_sorted(values, 0.25);
  st.q3 = quantile_sorted(values, 0.75);
  st.min = values.front();
  st.max = values.back();
  const double iqr = st.q3 - st.q1;
  st.whisker_low = st.min;
  st.whisker_high = st.max;
  if (std::isfinite(iqr)) {
    for (double v : values) {
      if (v >= st.q1 - 1.5 * iqr) {
        st.whisker_low = v;
        break;
      }
    }
    for (auto it = values.rbegin(); it != values.rend(); ++it) {
      if (*it <= st.q3 + 1.5 * iqr) {
        st.whisker_high = *it;
        break;
      }
    }
  }
  std::size_t ok = 0;
  for (bool b : st.success) ok += b ? 1 : 0;
  st.success_rate = st.success.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(st.success.size());
  return st;
}

/// One rollout per instance with its own seed; aggregates are computed in instance order.
inline EvalStats evaluate_batch(const Policy& policy, const std::vector<Instance>& instances, std::size_t m,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != instances.size()) {
    throw InvalidArgument("evaluate_batch: " + std::to_string(instances.size()) + " instances but " +
                          std::to_string(seeds.size()) + " seeds");
  }
  std::vector<double> values;
  std::vector<bool> success;
  values.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    try {
      Trajectory t = rollout(instances[i], policy, m, seeds[i]);
      values.push_back(t.max_revisit);
      success.push_back(t.success);
    } catch (const PolicyError& e) {
      throw PolicyError("instance " + std::to_string(i) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("instance " + std::to_string(i) + ": " + e.what());
    }
  }
  return summarize(std::move(values), std::move(success));
}

/// JSON-safe real: infinities become the string "inf".
inline nlohmann::json json_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline nlohmann::json to_json(const Trajectory& t) {
  nlohmann::json j;
  j["instance"] = to_json(t.instance);
  j["m"] = t.horizon_multiplier;
  j["actions"] = t.actions;
  j["rewards"] = t.rewards;
  j["fuel"] = t.fuel;
  auto revisit = nlohmann::json::array();
  for (std::size_t i = 1; i < t.revisit.size(); ++i) revisit.push_back(json_real(t.revisit[i]));
  j["revisit"] = revisit;
  j["max_revisit"] = json_real(t.max_revisit);
  j["success"] = t.success;
  return j;
}

/// Visited coordinates in order, starting at the depot: actions.size() + 1 points.
inline std::vector<Point> polyline(const Trajectory& t) {
  std::vector<Point> pts;
  pts.reserve(t.actions.size() + 1);
  pts.push_back(t.instance.vertices.at(0));
  for (std::size_t a : t.actions) pts.push_back(t.instance.vertices.at(a));
  return pts;
}

}  // namespace svpsfc
