#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpsfc/env.hpp"
#include "svpsfc/errors.hpp"
#include "svpsfc/instance.hpp"
#include "svpsfc/nn.hpp"
#include "svpsfc/policies.hpp"
#include "svpsfc/random.hpp"

namespace svpsfc::ppo {

struct PpoConfig {
  double gamma = 0.85;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  std::size_t epochs = 10;
  std::size_t minibatch_size = 64;
  std::size_t rollout_length = 2048;
  std::uint64_t total_steps = 2'000'000;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double learning_rate = 3e-4;
  /// Decay the learning rate linearly to zero over total_steps.
  bool anneal_learning_rate = false;
  /// Global gradient-norm clip per minibatch; 0 disables.
  double max_grad_norm = 0.5;
  /// Rewards are multiplied by this before entering the buffer; 0 means 1 / (4 * grid_size).
  double reward_scale = 0.0;
  /// Environment steps on one instance before resampling (applied at the next episode boundary).
  std::uint64_t reconfigure_interval = 5000;
  std::size_t n_total = 8;
  std::size_t n_real_min = 2;
  std::size_t n_real_max = 8;
  double fuel_capacity = 120.0;
  double grid_size = 10.0;
  std::size_t horizon_multiplier = 7;
  std::vector<std::size_t> hidden{64, 64};
  std::uint64_t seed = 0;
  /// Updates between evaluations on the frozen validation set; 0 disables.
  std::size_t eval_interval = 10;
  std::size_t eval_instances = 32;

  double effective_reward_scale() const { return reward_scale > 0.0 ? reward_scale : 1.0 / (4.0 * grid_size); }

  void check() const {
    auto fail = [](const std::string& what) { throw InvalidArgument("PpoConfig: " + what); };
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must lie in [0, 1]");
    if (!(clip_ratio > 0.0)) fail("clip_ratio must be positive");
    if (epochs == 0 || minibatch_size == 0 || rollout_length == 0) fail("epochs, minibatch and rollout sizes must be positive");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (n_total < 1 || n_real_min < 1 || n_real_min > n_real_max || n_real_max > n_total) {
      fail("need 1 <= n_real_min <= n_real_max <= n_total");
    }
    if (!(fuel_capacity > 0.0) || !(grid_size > 0.0)) fail("fuel_capacity and grid_size must be positive");
    if (horizon_multiplier < 1) fail("horizon_multiplier must be >= 1");
    if (reconfigure_interval == 0) fail("reconfigure_interval must be positive");
  }
};

inline nlohmann::json to_json(const PpoConfig& c) {
  return {{"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip_ratio", c.clip_ratio},
          {"epochs", c.epochs},
          {"minibatch_size", c.minibatch_size},
          {"rollout_length", c.rollout_length},
          {"total_steps", c.total_steps},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"learning_rate", c.learning_rate},
          {"anneal_learning_rate", c.anneal_learning_rate},
          {"max_grad_norm", c.max_grad_norm},
          {"reward_scale", c.reward_scale},
          {"reconfigure_interval", c.reconfigure_interval},
          {"n_total", c.n_total},
          {"n_real_min", c.n_real_min},
          {"n_real_max", c.n_real_max},
          {"fuel_capacity", c.fuel_capacity},
          {"grid_size", c.grid_size},
          {"horizon_multiplier", c.horizon_multiplier},
          {"hidden", c.hidden},
          {"seed", c.seed},
          {"eval_interval", c.eval_interval},
          {"eval_instances", c.eval_instances}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline PpoConfig config_from_json(const nlohmann::json& j) {
  PpoConfig c;
  const nlohmann::json defaults = to_json(c);
  if (!j.is_object()) throw SchemaError("training config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw SchemaError("training config: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("gamma", c.gamma);
    get("gae_lambda", c.gae_lambda);
    get("clip_ratio", c.clip_ratio);
    get("epochs", c.epochs);
    get("minibatch_size", c.minibatch_size);
    get("rollout_length", c.rollout_length);
    get("total_steps", c.total_steps);
    get("entropy_coef", c.entropy_coef);
    get("value_coef", c.value_coef);
    get("learning_rate", c.learning_rate);
    get("anneal_learning_rate", c.anneal_learning_rate);
    get("max_grad_norm", c.max_grad_norm);
    get("reward_scale", c.reward_scale);
    get("reconfigure_interval", c.reconfigure_interval);
    get("n_total", c.n_total);
    get("n_real_min", c.n_real_min);
    get("n_real_max", c.n_real_max);
    get("fuel_capacity", c.fuel_capacity);
    get("grid_size", c.grid_size);
    get("horizon_multiplier", c.horizon_multiplier);
    get("hidden", c.hidden);
    get("seed", c.seed);
    get("eval_interval", c.eval_interval);
    get("eval_instances", c.eval_instances);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("training config: ") + e.what());
  }
  c.check();
  return c;
}

/// One on-policy batch. Observations are stored column-per-step (obs_dim x size, column major).
struct RolloutBuffer {
  std::size_t obs_dim = 0;
  std::vector<double> observations;
  std::vector<ActionMask> masks;
  std::vector<std::size_t> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  double last_value = 0.0;  // V of the state following the final step
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return actions.size(); }

  std::span<const double> observation(std::size_t t) const {
    return {observations.data() + t * obs_dim, obs_dim};
  }
};

/// Generalized advantage estimation; `advantages` are left unnormalized.
inline void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  const std::size_t n = buf.size();
  if (buf.rewards.size() != n || buf.values.size() != n || buf.dones.size() != n) {
    throw InvalidArgument("compute_gae: buffer sequences differ in length");
  }
  buf.advantages.assign(n, 0.0);
  buf.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = (t + 1 < n) ? buf.values[t + 1] : buf.last_value;
    const double live = buf.dones[t] ? 0.0 : 1.0;
    const double delta = buf.rewards[t] + gamma * next_value * live - buf.values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    buf.advantages[t] = next_adv;
    buf.returns[t] = next_adv + buf.values[t];
  }
}

/// Zero mean, unit (population) variance. A constant batch is only centered.
inline std::vector<double> normalize_advantages(const std::vector<double>& adv) {
  if (adv.empty()) return {};
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= n;
  const double sd = std::sqrt(var);
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = sd > 1e-12 ? (adv[i] - mean) / sd : adv[i] - mean;
  return out;
}

struct LossTerms {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct LossCoefficients {
  double clip_ratio = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

/// Clipped-surrogate PPO loss over the samples `idx` and its exact gradient:
///   total = -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) + value_coef mean((V - R)^2) - entropy_coef mean(H)
/// with rho evaluated under each sample's recorded mask.
inline std::pair<LossTerms, nn::MlpGradients> ppo_loss(const nn::MlpParameters& params, const RolloutBuffer& buf,
                                                        std::span<const std::size_t> idx,
                                                        std::span<const double> advantages,
                                                        const LossCoefficients& coef) {
  const std::size_t b = idx.size();
  const Eigen::Index obs_dim = static_cast<Eigen::Index>(buf.obs_dim);
  nn::Matrix obs(obs_dim, static_cast<Eigen::Index>(b));
  for (std::size_t k = 0; k < b; ++k) {
    const auto o = buf.observation(idx[k]);
    obs.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const nn::Vector>(o.data(), obs_dim);
  }
  const nn::ForwardCache cache = nn::forward_batch(params, obs);
  const std::size_t act_dim = params.arch.act_dim;
  nn::Matrix dlogits = nn::Matrix::Zero(static_cast<Eigen::Index>(act_dim), static_cast<Eigen::Index>(b));
  nn::RowVector dvalues(static_cast<Eigen::Index>(b));

  LossTerms terms;
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> grad_logp(act_dim), grad_entropy(act_dim);
  std::vector<double> logits(act_dim);
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t t = idx[k];
    const auto col = static_cast<Eigen::Index>(k);
    for (std::size_t a = 0; a < act_dim; ++a) logits[a] = cache.logits(static_cast<Eigen::Index>(a), col);
    const nn::MaskedCategorical dist(logits, buf.masks[t]);
    const double logp = dist.log_prob(buf.actions[t]);
    const double log_ratio = logp - buf.log_probs[t];
    const double ratio = std::exp(log_ratio);
    const double adv = advantages[t];
    const double clipped = std::clamp(ratio, 1.0 - coef.clip_ratio, 1.0 + coef.clip_ratio);
    const double unclipped_obj = ratio * adv;
    const double clipped_obj = clipped * adv;
    terms.policy_loss -= std::min(unclipped_obj, clipped_obj) * inv_b;
    if (std::abs(ratio - 1.0) > coef.clip_ratio) terms.clip_fraction += inv_b;
    terms.approx_kl += ((ratio - 1.0) - log_ratio) * inv_b;
    const double h = dist.entropy();
    terms.entropy += h * inv_b;

    // d(policy loss)/d(logp): the clipped branch is flat outside the trust region.
    const double dlogp = (unclipped_obj <= clipped_obj) ? -unclipped_obj * inv_b : 0.0;
    dist.log_prob_gradient(buf.actions[t], grad_logp);
    dist.entropy_gradient(grad_entropy);
    for (std::size_t a = 0; a < act_dim; ++a) {
      dlogits(static_cast<Eigen::Index>(a), col) = dlogp * grad_logp[a] - coef.entropy_coef * inv_b * grad_entropy[a];
    }

    const double err = cache.values(col) - buf.returns[t];
    terms.value_loss += err * err * inv_b;
    dvalues(col) = coef.value_coef * 2.0 * err * inv_b;
  }
  terms.total = terms.policy_loss + coef.value_coef * terms.value_loss - coef.entropy_coef * terms.entropy;
  if (!std::isfinite(terms.total)) throw NumericError("ppo_loss: non-finite loss");
  return {terms, nn::backward(params, cache, dlogits, dvalues)};
}

struct UpdateDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  /// Terms of the very first minibatch, before any optimizer step.
  LossTerms first_minibatch;
  std::size_t minibatches = 0;
};

/// Epochs of shuffled minibatch Adam steps on the clipped objective. On any error the caller's
/// parameters and optimizer state are left untouched.
inline UpdateDiagnostics ppo_update(nn::MlpParameters& params, nn::OptimizerState& opt, const RolloutBuffer& buf,
                                    const PpoConfig& cfg, Rng& rng) {
  if (buf.advantages.size() != buf.size() || buf.returns.size() != buf.size()) {
    throw InvalidArgument("ppo_update: advantages not computed");
  }
  nn::MlpParameters work = params;
  nn::OptimizerState work_opt = opt;
  work_opt.config.learning_rate = cfg.learning_rate;
  const std::vector<double> adv = normalize_advantages(buf.advantages);
  const LossCoefficients coef{cfg.clip_ratio, cfg.value_coef, cfg.entropy_coef};

  std::vector<std::size_t> order(buf.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  UpdateDiagnostics diag;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_index(rng, i))]);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      auto [terms, grads] = ppo_loss(work, buf, idx, adv, coef);
      if (diag.minibatches == 0) diag.first_minibatch = terms;
      if (cfg.max_grad_norm > 0.0) {
        const double norm = nn::global_norm(grads);
        if (norm > cfg.max_grad_norm) nn::scale(grads, cfg.max_grad_norm / norm);
      }
      nn::adam_step(work, grads, work_opt);
      diag.policy_loss += terms.policy_loss;
      diag.value_loss += terms.value_loss;
      diag.entropy += terms.entropy;
      diag.clip_fraction += terms.clip_fraction;
      diag.approx_kl += terms.approx_kl;
      ++diag.minibatches;
    }
  }
  if (diag.minibatches > 0) {
    const double inv = 1.0 / static_cast<double>(diag.minibatches);
    diag.policy_loss *= inv;
    diag.value_loss *= inv;
    diag.entropy *= inv;
    diag.clip_fraction *= inv;
    diag.approx_kl *= inv;
  }
  params = std::move(work);
  opt = std::move(work_opt);
  return diag;
}

// ---------------------------------------------------------------------------------------------
// Policies backed by a network

/// Masked network policy. Deterministic mode takes the most probable action; otherwise samples.
inline Policy neural_policy(std::shared_ptr<const nn::MlpParameters> params, bool deterministic = true) {
  return [params = std::move(params), deterministic](const Environment& env, const EnvState& s, const ActionMask& mask,
                                                     Rng& rng) {
    if (env.observation_size() != params->arch.obs_dim || env.num_actions() != params->arch.act_dim) {
      throw InvalidArgument("network expects observation dimension " + std::to_string(params->arch.obs_dim) +
                            " and " + std::to_string(params->arch.act_dim) + " actions, environment provides " +
                            std::to_string(env.observation_size()) + " and " + std::to_string(env.num_actions()));
    }
    const Observation obs = env.observe(s);
    const nn::PolicyOutput out = nn::forward(*params, obs);
    const nn::MaskedCategorical dist(std::span<const double>(out.logits.data(), static_cast<std::size_t>(out.logits.size())),
                                     mask);
    return deterministic ? dist.mode() : dist.sample(rng);
  };
}

// ---------------------------------------------------------------------------------------------
// Rollout collection with instance resampling

namespace detail {

inline nlohmann::json state_to_json(const EnvState& s) {
  auto revisit = nlohmann::json::array();
  for (double r : s.revisit) revisit.push_back(json_real(r));
  return {{"location", s.location}, {"clocks", s.clocks},           {"fuel", s.fuel},
          {"elapsed", s.elapsed},   {"step_count", s.step_count},   {"visit_counts", s.visit_counts},
          {"revisit", revisit}};
}

inline EnvState state_from_json(const nlohmann::json& j) {
  EnvState s;
  s.location = j.at("location").get<std::size_t>();
  s.clocks = j.at("clocks").get<std::vector<double>>();
  s.fuel = j.at("fuel").get<double>();
  s.elapsed = j.at("elapsed").get<double>();
  s.step_count = j.at("step_count").get<std::size_t>();
  s.visit_counts = j.at("visit_counts").get<std::vector<std::uint32_t>>();
  for (const auto& r : j.at("revisit")) s.revisit.push_back(r.is_string() ? kInfinity : r.get<double>());
  return s;
}

}  // namespace detail

/// Steps one environment with the masked stochastic policy. Every reconfigure_interval steps
/// (at the next episode boundary) a new instance is drawn with n_real uniform over the
/// configured range and the remaining slots as dummies.
class RolloutCollector {
 public:
  explicit RolloutCollector(PpoConfig cfg)
      : cfg_(std::move(cfg)), rng_(derive_seed(cfg_.seed, 1)), instance_rng_(derive_seed(cfg_.seed, 2)) {
    cfg_.check();
    reconfigure();
  }

  const Environment& environment() const { return *env_; }
  std::uint64_t instances_drawn() const { return instances_drawn_; }

  RolloutBuffer collect(const nn::MlpParameters& params) {
    const std::size_t obs_dim = observation_dim(cfg_.n_total);
    if (params.arch.obs_dim != obs_dim) {
      throw InvalidArgument("collect: network input " + std::to_string(params.arch.obs_dim) +
                            " does not match observation dimension " + std::to_string(obs_dim));
    }
    const double reward_scale = cfg_.effective_reward_scale();
    RolloutBuffer buf;
    buf.obs_dim = obs_dim;
    buf.observations.reserve(cfg_.rollout_length * obs_dim);
    Observation obs;
    for (std::size_t t = 0; t < cfg_.rollout_length; ++t) {
      env_->observe_into(state_, obs);
      const ActionMask mask = env_->action_mask(state_);
      const nn::PolicyOutput out = nn::forward(params, obs);
      const nn::MaskedCategorical dist(
          std::span<const double>(out.logits.data(), static_cast<std::size_t>(out.logits.size())), mask);
      const std::size_t action = dist.sample(rng_);

      buf.observations.insert(buf.observations.end(), obs.begin(), obs.end());
      buf.masks.push_back(mask);
      buf.actions.push_back(action);
      buf.log_probs.push_back(dist.log_prob(action));
      buf.values.push_back(out.value);

      StepOutcome step = env_->step(state_, action);
      buf.rewards.push_back(step.reward * reward_scale);
      buf.dones.push_back(step.done ? 1 : 0);
      ++steps_on_instance_;
      if (step.done) {
        if (steps_on_instance_ >= cfg_.reconfigure_interval) reconfigure();
        state_ = env_->reset();
      } else {
        state_ = std::move(step.state);
      }
    }
    env_->observe_into(state_, obs);
    buf.last_value = nn::forward(params, obs).value;
    return buf;
  }

  nlohmann::json save_state() const {
    return {{"rng", rng_state(rng_)},
            {"instance_rng", rng_state(instance_rng_)},
            {"instance", to_json(env_->instance())},
            {"state", detail::state_to_json(state_)},
            {"steps_on_instance", steps_on_instance_},
            {"instances_drawn", instances_drawn_}};
  }

  void restore_state(const nlohmann::json& j) {
    restore_rng_state(rng_, j.at("rng").get<std::string>());
    restore_rng_state(instance_rng_, j.at("instance_rng").get<std::string>());
    env_ = std::make_unique<Environment>(instance_from_json(j.at("instance")), env_config());
    state_ = detail::state_from_json(j.at("state"));
    steps_on_instance_ = j.at("steps_on_instance").get<std::uint64_t>();
    instances_drawn_ = j.at("instances_drawn").get<std::uint64_t>();
  }

 private:
  EnvConfig env_config() const {
    EnvConfig ec;
    ec.horizon_multiplier = cfg_.horizon_multiplier;
    return ec;
  }

  void reconfigure() {
    const std::size_t span = cfg_.n_real_max - cfg_.n_real_min + 1;
    const std::size_t n_real = cfg_.n_real_min + static_cast<std::size_t>(uniform_index(instance_rng_, span));
    const std::uint64_t seed = instance_rng_();
    env_ = std::make_unique<Environment>(
        generate_instance(cfg_.n_total, n_real, cfg_.grid_size, cfg_.fuel_capacity, seed), env_config());
    state_ = env_->reset();
    steps_on_instance_ = 0;
    ++instances_drawn_;
  }

  PpoConfig cfg_;
  Rng rng_;
  Rng instance_rng_;
  std::unique_ptr<Environment> env_;
  EnvState state_;
  std::uint64_t steps_on_instance_ = 0;
  std::uint64_t instances_drawn_ = 0;
};

// ---------------------------------------------------------------------------------------------
// Training loop

struct TrainLogRow {
  std::size_t update = 0;
  std::uint64_t steps = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  /// Median max revisit of the deterministic policy on the validation set; NaN when not evaluated.
  double eval_median = std::numeric_limits<double>::quiet_NaN();
  double greedy_median = std::numeric_limits<double>::quiet_NaN();

  friend bool operator==(const TrainLogRow& a, const TrainLogRow& b) {
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.update == b.update && a.steps == b.steps && same(a.policy_loss, b.policy_loss) &&
           same(a.value_loss, b.value_loss) && same(a.entropy, b.entropy) && same(a.clip_fraction, b.clip_fraction) &&
           same(a.approx_kl, b.approx_kl) && same(a.eval_median, b.eval_median) &&
           same(a.greedy_median, b.greedy_median);
  }
};

inline const char* kTrainLogHeader =
    "update,steps,policy_loss,value_loss,entropy,clip_fraction,approx_kl,eval_median,greedy_median";

inline std::string to_csv(const TrainLogRow& r) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string();
    nlohmann::json j = json_real(v);
    return j.is_string() ? j.get<std::string>() : j.dump();
  };
  return std::to_string(r.update) + "," + std::to_string(r.steps) + "," + num(r.policy_loss) + "," +
         num(r.value_loss) + "," + num(r.entropy) + "," + num(r.clip_fraction) + "," + num(r.approx_kl) + "," +
         num(r.eval_median) + "," + num(r.greedy_median);
}

/// Fixed validation instances, independent of the training stream.
inline std::vector<Instance> validation_set(const PpoConfig& cfg) {
  std::vector<Instance> out;
  Rng rng(derive_seed(cfg.seed, 3));
  const std::size_t span = cfg.n_real_max - cfg.n_real_min + 1;
  for (std::size_t i = 0; i < cfg.eval_instances; ++i) {
    const std::size_t n_real = cfg.n_real_min + static_cast<std::size_t>(uniform_index(rng, span));
    out.push_back(generate_instance(cfg.n_total, n_real, cfg.grid_size, cfg.fuel_capacity, rng()));
  }
  return out;
}

/// Alternates collection, advantage estimation and clipped updates until the step budget is
/// spent. All state needed to continue bit-identically lives in checkpoint().
class Trainer {
 public:
  explicit Trainer(PpoConfig cfg)
      : cfg_(std::move(cfg)), collector_(cfg_), update_rng_(derive_seed(cfg_.seed, 4)) {
    Rng init_rng(derive_seed(cfg_.seed, 0));
    params_ = nn::init_mlp(nn::architecture_for(cfg_.n_total, cfg_.hidden), init_rng);
    opt_ = nn::make_optimizer(params_, {cfg_.learning_rate});
    init_validation();
  }

  static Trainer resume(const nn::Checkpoint& ck) {
    if (ck.extra.is_null() || !ck.optimizer) throw SchemaError("checkpoint carries no trainer state");
    Trainer t(config_from_json(ck.extra.at("config")));
    if (!(t.params_.arch == ck.params.arch)) throw SchemaError("checkpoint architecture does not match its config");
    t.params_ = ck.params;
    t.opt_ = *ck.optimizer;
    t.collector_.restore_state(ck.extra.at("collector"));
    restore_rng_state(t.update_rng_, ck.extra.at("update_rng").get<std::string>());
    t.updates_ = ck.extra.at("updates").get<std::size_t>();
    t.steps_ = ck.extra.at("steps").get<std::uint64_t>();
    return t;
  }

  const PpoConfig& config() const { return cfg_; }
  const nn::MlpParameters& params() const { return params_; }
  std::size_t updates() const { return updates_; }
  std::uint64_t steps() const { return steps_; }
  bool finished() const { return steps_ >= cfg_.total_steps; }

  TrainLogRow update_once() {
    RolloutBuffer buf = collector_.collect(params_);
    compute_gae(buf, cfg_.gamma, cfg_.gae_lambda);
    PpoConfig step_cfg = cfg_;
    if (cfg_.anneal_learning_rate) {
      const double progress = static_cast<double>(steps_) / static_cast<double>(cfg_.total_steps);
      step_cfg.learning_rate = cfg_.learning_rate * std::max(0.0, 1.0 - progress);
    }
    const UpdateDiagnostics d = ppo_update(params_, opt_, buf, step_cfg, update_rng_);
    steps_ += buf.size();
    ++updates_;
    TrainLogRow row{updates_, steps_, d.policy_loss, d.value_loss, d.entropy, d.clip_fraction, d.approx_kl};
    if (cfg_.eval_interval > 0 && (updates_ % cfg_.eval_interval == 0 || finished())) {
      row.eval_median = evaluate_validation();
      row.greedy_median = greedy_median_;
    }
    return row;
  }

  std::vector<TrainLogRow> run(const std::function<void(const TrainLogRow&)>& on_update = {}) {
    std::vector<TrainLogRow> log;
    while (!finished()) {
      log.push_back(update_once());
      if (on_update) on_update(log.back());
    }
    return log;
  }

  double evaluate_validation() const {
    if (validation_.empty()) return std::numeric_limits<double>::quiet_NaN();
    const EvalStats st = evaluate_batch(neural_policy(std::make_shared<const nn::MlpParameters>(params_)), validation_,
                                        cfg_.horizon_multiplier, validation_seeds_);
    return st.median;
  }

  nn::Checkpoint checkpoint() const {
    nn::Checkpoint ck;
    ck.params = params_;
    ck.optimizer = opt_;
    ck.extra = {{"config", to_json(cfg_)},
                {"collector", collector_.save_state()},
                {"update_rng", rng_state(update_rng_)},
                {"updates", updates_},
                {"steps", steps_}};
    return ck;
  }

 private:
  void init_validation() {
    if (cfg_.eval_interval == 0 || cfg_.eval_instances == 0) return;
    validation_ = validation_set(cfg_);
    validation_seeds_.assign(validation_.size(), 0);
    greedy_median_ = evaluate_batch(greedy_policy(), validation_, cfg_.horizon_multiplier, validation_seeds_).median;
  }

  PpoConfig cfg_;
  RolloutCollector collector_;
  Rng update_rng_;
  nn::MlpParameters params_;
  nn::OptimizerState opt_;
  std::size_t updates_ = 0;
  std::uint64_t steps_ = 0;
  std::vector<Instance> validation_;
  std::vector<std::uint64_t> validation_seeds_;
  double greedy_median_ = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace svpsfc::ppo
