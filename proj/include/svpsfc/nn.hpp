#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "svpsfc/env.hpp"
#include "svpsfc/errors.hpp"
#include "svpsfc/random.hpp"

namespace svpsfc::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct MlpArchitecture {
  std::size_t obs_dim = 0;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t act_dim = 0;

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

inline MlpArchitecture architecture_for(std::size_t n_total, std::vector<std::size_t> hidden = {64, 64}) {
  return {observation_dim(n_total), std::move(hidden), n_total + 1};
}

/// Shared tanh trunk feeding a linear policy head (act_dim logits) and a linear value head.
/// The same type doubles as the gradient and Adam-moment container.
struct MlpParameters {
  MlpArchitecture arch;
  std::vector<DenseLayer> trunk;
  DenseLayer policy_head;
  DenseLayer value_head;

  /// trunk layers, then policy head, then value head (checkpoint order).
  std::vector<DenseLayer*> layers() {
    std::vector<DenseLayer*> out;
    for (auto& l : trunk) out.push_back(&l);
    out.push_back(&policy_head);
    out.push_back(&value_head);
    return out;
  }
  std::vector<const DenseLayer*> layers() const {
    std::vector<const DenseLayer*> out;
    for (const auto& l : trunk) out.push_back(&l);
    out.push_back(&policy_head);
    out.push_back(&value_head);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer* l : layers()) n += static_cast<std::size_t>(l->weight.size() + l->bias.size());
    return n;
  }
};

using MlpGradients = MlpParameters;

inline MlpParameters zeros_like(const MlpParameters& p) {
  MlpParameters z = p;
  for (DenseLayer* l : z.layers()) {
    l->weight.setZero();
    l->bias.setZero();
  }
  return z;
}

/// Uniform in +-1/sqrt(fan_in) for weights and biases, drawn layer by layer in checkpoint order.
inline MlpParameters init_mlp(const MlpArchitecture& arch, Rng& rng) {
  if (arch.obs_dim == 0 || arch.act_dim == 0) throw InvalidArgument("init_mlp: empty input or output dimension");
  MlpParameters p;
  p.arch = arch;
  auto make = [&rng](std::size_t out, std::size_t in) {
    DenseLayer l{Matrix(out, in), Vector(out)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = uniform_real(rng, -bound, bound);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = uniform_real(rng, -bound, bound);
    return l;
  };
  std::size_t in = arch.obs_dim;
  for (std::size_t width : arch.hidden) {
    p.trunk.push_back(make(width, in));
    in = width;
  }
  p.policy_head = make(arch.act_dim, in);
  p.value_head = make(1, in);
  return p;
}

/// Activations kept for backpropagation. Columns are samples.
struct ForwardCache {
  std::vector<Matrix> activations;  // [0] is the input, [k] the output of trunk layer k
  Matrix logits;
  RowVector values;
};

namespace detail {

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + where);
}

}  // namespace detail

inline ForwardCache forward_batch(const MlpParameters& p, const Matrix& obs) {
  if (static_cast<std::size_t>(obs.rows()) != p.arch.obs_dim) {
    throw InvalidArgument("forward: observation dimension " + std::to_string(obs.rows()) + " does not match network input " +
                          std::to_string(p.arch.obs_dim));
  }
  ForwardCache c;
  c.activations.reserve(p.trunk.size() + 1);
  c.activations.push_back(obs);
  for (std::size_t k = 0; k < p.trunk.size(); ++k) {
    Matrix z = p.trunk[k].weight * c.activations.back();
    z.colwise() += p.trunk[k].bias;
    c.activations.push_back(z.array().tanh().matrix());
    detail::check_finite(c.activations.back(), "trunk layer " + std::to_string(k));
  }
  c.logits = p.policy_head.weight * c.activations.back();
  c.logits.colwise() += p.policy_head.bias;
  detail::check_finite(c.logits, "policy head");
  c.values = p.value_head.weight * c.activations.back();
  c.values.array() += p.value_head.bias(0);
  detail::check_finite(c.values, "value head");
  return c;
}

struct PolicyOutput {
  Vector logits;
  double value = 0.0;
};

inline PolicyOutput forward(const MlpParameters& p, std::span<const double> obs) {
  const Eigen::Map<const Matrix> x(obs.data(), static_cast<Eigen::Index>(obs.size()), 1);
  ForwardCache c = forward_batch(p, x);
  return {c.logits.col(0), c.values(0)};
}

/// Reverse-mode gradients of a scalar loss given its partials with respect to the head outputs.
inline MlpGradients backward(const MlpParameters& p, const ForwardCache& c, const Matrix& dlogits,
                             const RowVector& dvalues) {
  MlpGradients g = p;
  const Matrix& top = c.activations.back();
  g.policy_head.weight = dlogits * top.transpose();
  g.policy_head.bias = dlogits.rowwise().sum();
  g.value_head.weight = dvalues * top.transpose();
  g.value_head.bias = Vector::Constant(1, dvalues.sum());

  Matrix upstream = p.policy_head.weight.transpose() * dlogits + p.value_head.weight.transpose() * dvalues;
  for (std::size_t k = p.trunk.size(); k-- > 0;) {
    const Matrix& out = c.activations[k + 1];
    Matrix dz = upstream.array() * (1.0 - out.array().square());
    g.trunk[k].weight = dz * c.activations[k].transpose();
    g.trunk[k].bias = dz.rowwise().sum();
    detail::check_finite(g.trunk[k].weight, "gradient of trunk layer " + std::to_string(k));
    if (k > 0) upstream = p.trunk[k].weight.transpose() * dz;
  }
  return g;
}

inline double global_norm(const MlpGradients& g) {
  double sq = 0.0;
  for (const DenseLayer* l : g.layers()) sq += l->weight.squaredNorm() + l->bias.squaredNorm();
  return std::sqrt(sq);
}

inline void scale(MlpGradients& g, double factor) {
  for (DenseLayer* l : g.layers()) {
    l->weight *= factor;
    l->bias *= factor;
  }
}

/// Softmax restricted to the unmasked entries. Masked entries behave as logit -inf: probability
/// exactly 0, never sampled, zero gradient.
class MaskedCategorical {
 public:
  MaskedCategorical(std::span<const double> logits, const ActionMask& mask)
      : mask_(mask), log_probs_(logits.size(), -std::numeric_limits<double>::infinity()), probs_(logits.size(), 0.0) {
    if (logits.size() != mask.size()) {
      throw InvalidArgument("MaskedCategorical: " + std::to_string(logits.size()) + " logits but mask of size " +
                            std::to_string(mask.size()));
    }
    if (!mask.any()) throw ContractViolation("MaskedCategorical: empty mask");
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < logits.size(); ++a) {
      if (!mask[a]) continue;
      if (!std::isfinite(logits[a])) throw NumericError("MaskedCategorical: non-finite logit for action " + std::to_string(a));
      top = std::max(top, logits[a]);
    }
    double sum = 0.0;
    for (std::size_t a = 0; a < logits.size(); ++a) {
      if (mask[a]) sum += std::exp(logits[a] - top);
    }
    const double log_norm = top + std::log(sum);
    for (std::size_t a = 0; a < logits.size(); ++a) {
      if (!mask[a]) continue;
      log_probs_[a] = logits[a] - log_norm;
      probs_[a] = std::exp(log_probs_[a]);
    }
  }

  std::size_t size() const { return probs_.size(); }
  const std::vector<double>& probs() const { return probs_; }
  const ActionMask& mask() const { return mask_; }

  double log_prob(std::size_t a) const {
    if (a >= size() || !mask_[a]) throw ContractViolation("log_prob of masked action " + std::to_string(a));
    return log_probs_[a];
  }

  double entropy() const {
    double h = 0.0;
    for (std::size_t a = 0; a < size(); ++a) {
      if (mask_[a] && probs_[a] > 0.0) h -= probs_[a] * log_probs_[a];
    }
    return h;
  }

  std::size_t sample(Rng& rng) const {
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t last_on = size();
    for (std::size_t a = 0; a < size(); ++a) {
      if (!mask_[a]) continue;
      last_on = a;
      acc += probs_[a];
      if (u < acc) return a;
    }
    return last_on;  // rounding left u just above the cumulative sum
  }

  /// Most probable action, lowest index on ties.
  std::size_t mode() const {
    std::size_t best = size();
    for (std::size_t a = 0; a < size(); ++a) {
      if (mask_[a] && (best == size() || probs_[a] > probs_[best])) best = a;
    }
    return best;
  }

  /// d log_prob(a) / d logits, written into out.
  void log_prob_gradient(std::size_t a, std::span<double> out) const {
    for (std::size_t k = 0; k < size(); ++k) out[k] = mask_[k] ? ((k == a ? 1.0 : 0.0) - probs_[k]) : 0.0;
  }

  /// d entropy / d logits, written into out.
  void entropy_gradient(std::span<double> out) const {
    const double h = entropy();
    for (std::size_t k = 0; k < size(); ++k) out[k] = mask_[k] ? -probs_[k] * (log_probs_[k] + h) : 0.0;
  }

 private:
  ActionMask mask_;
  std::vector<double> log_probs_;
  std::vector<double> probs_;
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  MlpParameters first_moment;
  MlpParameters second_moment;
};

inline OptimizerState make_optimizer(const MlpParameters& p, AdamConfig config = {}) {
  return {config, 0, zeros_like(p), zeros_like(p)};
}

namespace detail {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string("adam_step: shape mismatch in ") + what);
  }
}

}  // namespace detail

/// Bias-corrected Adam update in place.
inline void adam_step(MlpParameters& params, const MlpGradients& grads, OptimizerState& opt) {
  auto p = params.layers();
  auto g = grads.layers();
  auto m = opt.first_moment.layers();
  auto v = opt.second_moment.layers();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw InvalidArgument("adam_step: layer count mismatch");
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    detail::require_same_shape(p[k]->weight, g[k]->weight, "weights");
    detail::require_same_shape(p[k]->bias, g[k]->bias, "biases");
    detail::require_same_shape(p[k]->weight, m[k]->weight, "moments");
    detail::require_same_shape(p[k]->bias, v[k]->bias, "moments");
  }
  const AdamConfig& c = opt.config;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](auto& param, const auto& grad, auto& m1, auto& m2) {
    m1 = c.beta1 * m1 + (1.0 - c.beta1) * grad;
    m2 = c.beta2 * m2 + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= c.learning_rate * (m1.array() / correction1) / ((m2.array() / correction2).sqrt() + c.epsilon);
  };
  for (std::size_t k = 0; k < p.size(); ++k) {
    update(p[k]->weight, g[k]->weight, m[k]->weight, v[k]->weight);
    update(p[k]->bias, g[k]->bias, m[k]->bias, v[k]->bias);
  }
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointSchemaVersion = 1;

namespace detail {

inline nlohmann::json layers_to_json(const MlpParameters& p) {
  auto arr = nlohmann::json::array();
  for (const DenseLayer* l : p.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l->weight.size()));
    for (Eigen::Index r = 0; r < l->weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l->weight.cols(); ++c) w.push_back(l->weight(r, c));
    }
    std::vector<double> b(l->bias.data(), l->bias.data() + l->bias.size());
    arr.push_back({{"rows", l->weight.rows()}, {"cols", l->weight.cols()}, {"w", w}, {"b", b}});
  }
  return arr;
}

inline void layers_from_json(const nlohmann::json& arr, MlpParameters& p) {
  auto layers = p.layers();
  if (!arr.is_array() || arr.size() != layers.size()) {
    throw SchemaError("checkpoint: expected " + std::to_string(layers.size()) + " layers");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& j = arr[k];
    const auto w = j.at("w").get<std::vector<double>>();
    const auto b = j.at("b").get<std::vector<double>>();
    DenseLayer& l = *layers[k];
    if (j.contains("rows") && (j.at("rows").get<Eigen::Index>() != l.weight.rows() ||
                               j.at("cols").get<Eigen::Index>() != l.weight.cols())) {
      throw SchemaError("checkpoint: layer " + std::to_string(k) + " dimensions disagree with arch");
    }
    if (w.size() != static_cast<std::size_t>(l.weight.size()) || b.size() != static_cast<std::size_t>(l.bias.size())) {
      throw SchemaError("checkpoint: layer " + std::to_string(k) + " has wrong parameter count");
    }
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = w[i++];
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = b[static_cast<std::size_t>(r)];
  }
}

inline MlpParameters shaped(const MlpArchitecture& arch) {
  MlpParameters p;
  p.arch = arch;
  std::size_t in = arch.obs_dim;
  for (std::size_t w : arch.hidden) {
    p.trunk.push_back({Matrix::Zero(w, in), Vector::Zero(w)});
    in = w;
  }
  p.policy_head = {Matrix::Zero(arch.act_dim, in), Vector::Zero(arch.act_dim)};
  p.value_head = {Matrix::Zero(1, in), Vector::Zero(1)};
  return p;
}

}  // namespace detail

struct Checkpoint {
  MlpParameters params;
  std::optional<OptimizerState> optimizer;
  nlohmann::json extra;  // owner-defined payload (trainer state), null when absent
};

inline nlohmann::json to_json(const Checkpoint& ck) {
  nlohmann::json j;
  j["version"] = kCheckpointSchemaVersion;
  j["arch"] = {{"obs_dim", ck.params.arch.obs_dim}, {"hidden", ck.params.arch.hidden}, {"act_dim", ck.params.arch.act_dim}};
  j["layers"] = detail::layers_to_json(ck.params);
  if (ck.optimizer) {
    const OptimizerState& o = *ck.optimizer;
    j["opt_state"] = {{"step", o.step},
                      {"learning_rate", o.config.learning_rate},
                      {"beta1", o.config.beta1},
                      {"beta2", o.config.beta2},
                      {"epsilon", o.config.epsilon},
                      {"m", detail::layers_to_json(o.first_moment)},
                      {"v", detail::layers_to_json(o.second_moment)}};
  }
  if (!ck.extra.is_null()) j["trainer"] = ck.extra;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("version") || j.at("version").get<int>() != kCheckpointSchemaVersion) {
      throw SchemaError("checkpoint: unsupported or missing schema version");
    }
    MlpArchitecture arch;
    const auto& a = j.at("arch");
    arch.obs_dim = a.at("obs_dim").get<std::size_t>();
    arch.hidden = a.at("hidden").get<std::vector<std::size_t>>();
    arch.act_dim = a.at("act_dim").get<std::size_t>();
    Checkpoint ck;
    ck.params = detail::shaped(arch);
    detail::layers_from_json(j.at("layers"), ck.params);
    if (j.contains("opt_state")) {
      const auto& o = j.at("opt_state");
      OptimizerState st;
      st.step = o.at("step").get<std::uint64_t>();
      st.config.learning_rate = o.at("learning_rate").get<double>();
      st.config.beta1 = o.at("beta1").get<double>();
      st.config.beta2 = o.at("beta2").get<double>();
      st.config.epsilon = o.at("epsilon").get<double>();
      st.first_moment = detail::shaped(arch);
      st.second_moment = detail::shaped(arch);
      detail::layers_from_json(o.at("m"), st.first_moment);
      detail::layers_from_json(o.at("v"), st.second_moment);
      ck.optimizer = std::move(st);
    }
    if (j.contains("trainer")) ck.extra = j.at("trainer");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << to_json(ck).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("checkpoint: malformed JSON in " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace svpsfc::nn
