#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "svpsfc/errors.hpp"
#include "svpsfc/instance.hpp"

namespace svpsfc {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// MDP state plus bookkeeping. Per-target vectors are indexed by vertex number, so slot 0
/// (the depot) is present but always zero.
struct EnvState {
  std::size_t location = 0;
  std::vector<double> clocks;
  double fuel = 0.0;
  double elapsed = 0.0;
  std::size_t step_count = 0;
  std::vector<std::uint32_t> visit_counts;
  std::vector<double> revisit;  // kInfinity until a target has been visited twice

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

/// Feasibility bits over vertices 0..n_total; entry a set means action a is allowed.
class ActionMask {
 public:
  ActionMask() = default;
  explicit ActionMask(std::size_t size) : bits_(size, 0) {}

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t a) const { return bits_[a] != 0; }
  void set(std::size_t a, bool on) { bits_[a] = on ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool any() const { return count() > 0; }

  friend bool operator==(const ActionMask&, const ActionMask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct StepInfo {
  double distance = 0.0;
  bool refueled = false;
  bool revisit_updated = false;
};

struct StepOutcome {
  EnvState state;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct EnvConfig {
  /// Episodes last horizon_multiplier * n_real steps.
  std::size_t horizon_multiplier = 7;
  /// Explicit step horizon; 0 means horizon_multiplier * n_real.
  std::size_t horizon_steps = 0;
  /// Clock normalization for observations; 0 means 4 * grid_size.
  double clock_scale = 0.0;
};

using Observation = std::vector<double>;

inline std::size_t observation_dim(std::size_t n_total) { return 5 * n_total + 4; }

/// The single-vehicle persistent surveillance MDP. Immutable after construction; step() is a pure
/// function of (state, action), so one Environment can serve any number of concurrent rollouts.
class Environment {
 public:
  explicit Environment(Instance inst, EnvConfig config = {}) : inst_(std::move(inst)), config_(config) {
    Validation v = validate(inst_);
    if (!v.ok()) {
      std::string msg = "Environment: invalid instance:";
      for (const auto& s : v.violations) msg += " " + s + ";";
      throw InvalidArgument(msg);
    }
    if (config_.horizon_multiplier < 1 && config_.horizon_steps == 0) {
      throw InvalidArgument("Environment: horizon multiplier must be >= 1");
    }
    dist_ = DistanceMatrix(inst_);
    horizon_ = config_.horizon_steps > 0 ? config_.horizon_steps : config_.horizon_multiplier * inst_.n_real();
    clock_scale_ = config_.clock_scale > 0.0 ? config_.clock_scale : 4.0 * inst_.grid_size;
    distance_scale_ = inst_.grid_size * std::sqrt(2.0);
  }

  const Instance& instance() const { return inst_; }
  const DistanceMatrix& distances() const { return dist_; }
  double distance(std::size_t i, std::size_t j) const { return dist_(i, j); }
  std::size_t n_total() const { return inst_.n_total(); }
  std::size_t num_actions() const { return inst_.n_total() + 1; }
  std::size_t horizon() const { return horizon_; }
  std::size_t observation_size() const { return observation_dim(inst_.n_total()); }

  EnvState reset() const {
    const std::size_t nv = num_actions();
    EnvState s;
    s.location = 0;
    s.clocks.assign(nv, 0.0);
    s.fuel = inst_.fuel_capacity;
    s.visit_counts.assign(nv, 0);
    s.revisit.assign(nv, 0.0);
    for (std::size_t i = 1; i < nv; ++i) {
      if (inst_.is_real_target(i)) s.revisit[i] = kInfinity;
    }
    return s;
  }

  /// Self-visits, dummy targets, and targets from which the depot would be out of reach are
  /// masked. The fuel test uses the exact post-move fuel value so the reserve is never eroded
  /// by rounding.
  ActionMask action_mask(const EnvState& s) const {
    const std::size_t nv = num_actions();
    ActionMask mask(nv);
    mask.set(0, s.location != 0);
    for (std::size_t j = 1; j < nv; ++j) {
      if (j == s.location || inst_.is_dummy(j)) continue;
      mask.set(j, s.fuel - dist_(s.location, j) >= dist_(j, 0));
    }
    return mask;
  }

  StepOutcome step(const EnvState& s, std::size_t action) const {
    const std::size_t nv = num_actions();
    if (action >= nv) {
      throw ContractViolation("step: action " + std::to_string(action) + " out of range [0, " +
                              std::to_string(nv) + ")");
    }
    if (s.step_count >= horizon_) throw ContractViolation("step: episode already finished");
    if (!action_mask(s)[action]) {
      throw ContractViolation("step: action " + std::to_string(action) + " is masked at location " +
                              std::to_string(s.location) + " with fuel " + std::to_string(s.fuel));
    }

    StepOutcome out;
    out.state = s;
    EnvState& next = out.state;
    const double delta = dist_(s.location, action);
    out.info.distance = delta;

    if (action >= 1 && s.visit_counts[action] >= 1) {
      const double interval = s.clocks[action] + delta;
      next.revisit[action] = std::isinf(s.revisit[action]) ? interval : std::max(s.revisit[action], interval);
      out.info.revisit_updated = true;
    }

    double max_clock = 0.0;
    for (std::size_t i = 1; i < nv; ++i) {
      if (!inst_.is_real_target(i)) continue;
      next.clocks[i] = (i == action) ? 0.0 : s.clocks[i] + delta;
      max_clock = std::max(max_clock, next.clocks[i]);
    }

    if (action >= 1) {
      next.fuel = s.fuel - delta;
      next.visit_counts[action] += 1;
    } else {
      next.fuel = inst_.fuel_capacity;
      out.info.refueled = true;
    }
    next.location = action;
    next.elapsed = s.elapsed + delta;
    next.step_count = s.step_count + 1;

    out.reward = -max_clock;
    out.done = next.step_count == horizon_;
    return out;
  }

  /// Worst revisit interval over real targets; infinite while any real target has fewer than two visits.
  double max_revisit_time(const EnvState& s) const {
    double worst = 0.0;
    for (std::size_t i = 1; i < num_actions(); ++i) {
      if (inst_.is_real_target(i)) worst = std::max(worst, s.revisit[i]);
    }
    return worst;
  }

  /// one-hot location over targets (all zero at the depot) | clocks / clock_scale | d(l, .) / (grid*sqrt2) |
  /// (x, y) per vertex / (grid*sqrt2) | fuel / F
  Observation observe(const EnvState& s) const {
    Observation obs;
    observe_into(s, obs);
    return obs;
  }

  void observe_into(const EnvState& s, Observation& obs) const {
    const std::size_t nv = num_actions();
    obs.assign(observation_size(), 0.0);
    std::size_t k = 0;
    if (s.location > 0) obs[s.location - 1] = 1.0;
    k += nv - 1;
    for (std::size_t i = 1; i < nv; ++i) obs[k++] = s.clocks[i] / clock_scale_;
    for (std::size_t i = 0; i < nv; ++i) obs[k++] = dist_(s.location, i) / distance_scale_;
    for (std::size_t i = 0; i < nv; ++i) {
      obs[k++] = inst_.vertices[i].x / distance_scale_;
      obs[k++] = inst_.vertices[i].y / distance_scale_;
    }
    obs[k] = s.fuel / inst_.fuel_capacity;
  }

 private:
  Instance inst_;
  EnvConfig config_;
  DistanceMatrix dist_;
  std::size_t horizon_ = 0;
  double clock_scale_ = 0.0;
  double distance_scale_ = 1.0;
};

}  // namespace svpsfc
