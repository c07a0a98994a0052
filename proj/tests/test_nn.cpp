#include <cmath>
#include <filesystem>

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include "svpsfc/nn.hpp"

namespace svpsfc::nn {
namespace {

// Random masked-categorical problem on a small network; the three loss terms used by training.
struct Problem {
  MlpParameters params;
  Matrix obs;
  std::vector<ActionMask> masks;
  std::vector<std::size_t> actions;
  std::vector<double> weights;
  std::vector<double> returns;
};

Problem make_problem(std::uint64_t seed) {
  Rng rng(seed);
  MlpArchitecture arch;
  arch.obs_dim = 2 + uniform_index(rng, 6);
  arch.act_dim = 2 + uniform_index(rng, 5);
  arch.hidden.clear();
  const std::size_t depth = uniform_index(rng, 3);
  for (std::size_t k = 0; k < depth; ++k) arch.hidden.push_back(1 + uniform_index(rng, 8));
  Problem p;
  p.params = init_mlp(arch, rng);
  const std::size_t batch = 1 + uniform_index(rng, 5);
  p.obs = Matrix(static_cast<Eigen::Index>(arch.obs_dim), static_cast<Eigen::Index>(batch));
  for (Eigen::Index i = 0; i < p.obs.size(); ++i) p.obs.data()[i] = uniform_real(rng, -1.5, 1.5);
  for (std::size_t b = 0; b < batch; ++b) {
    ActionMask m(arch.act_dim);
    for (std::size_t a = 0; a < arch.act_dim; ++a) m.set(a, uniform01(rng) < 0.6);
    const std::size_t forced = uniform_index(rng, arch.act_dim);
    m.set(forced, true);
    std::size_t act = uniform_index(rng, arch.act_dim);
    while (!m[act]) act = uniform_index(rng, arch.act_dim);
    p.masks.push_back(m);
    p.actions.push_back(act);
    p.weights.push_back(uniform_real(rng, -2.0, 2.0));
    p.returns.push_back(uniform_real(rng, -3.0, 3.0));
  }
  return p;
}

enum class Term { LogProb, Entropy, ValueMse };

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

double loss_value(const MlpParameters& params, const Problem& p, Term term) {
  const ForwardCache c = forward_batch(params, p.obs);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < p.obs.cols(); ++b) {
    const auto logits = column(c.logits, b);
    const MaskedCategorical dist(logits, p.masks[b]);
    switch (term) {
      case Term::LogProb: loss += p.weights[b] * dist.log_prob(p.actions[b]); break;
      case Term::Entropy: loss += dist.entropy(); break;
      case Term::ValueMse: loss += std::pow(c.values(b) - p.returns[b], 2) / static_cast<double>(p.obs.cols()); break;
    }
  }
  return loss;
}

MlpGradients analytic(const Problem& p, Term term) {
  const ForwardCache c = forward_batch(p.params, p.obs);
  Matrix dlogits = Matrix::Zero(c.logits.rows(), c.logits.cols());
  RowVector dvalues = RowVector::Zero(c.values.size());
  std::vector<double> g(static_cast<std::size_t>(c.logits.rows()));
  for (Eigen::Index b = 0; b < p.obs.cols(); ++b) {
    const auto logits = column(c.logits, b);
    const MaskedCategorical dist(logits, p.masks[b]);
    if (term == Term::LogProb) {
      dist.log_prob_gradient(p.actions[b], g);
      for (std::size_t a = 0; a < g.size(); ++a) dlogits(static_cast<Eigen::Index>(a), b) = p.weights[b] * g[a];
    } else if (term == Term::Entropy) {
      dist.entropy_gradient(g);
      for (std::size_t a = 0; a < g.size(); ++a) dlogits(static_cast<Eigen::Index>(a), b) = g[a];
    } else {
      dvalues(b) = 2.0 * (c.values(b) - p.returns[b]) / static_cast<double>(p.obs.cols());
    }
  }
  return backward(p.params, c, dlogits, dvalues);
}

// Central differences over every parameter; returns the worst relative error.
double worst_relative_error(const Problem& p, Term term) {
  const MlpGradients g = analytic(p, term);
  MlpParameters probe = p.params;
  auto pl = probe.layers();
  auto gl = g.layers();
  const double h = 1e-5;
  double worst = 0.0;
  auto check = [&](double& x, double analytic_value) {
    const double saved = x;
    x = saved + h;
    const double up = loss_value(probe, p, term);
    x = saved - h;
    const double down = loss_value(probe, p, term);
    x = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic_value), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic_value) / scale);
  };
  for (std::size_t k = 0; k < pl.size(); ++k) {
    for (Eigen::Index i = 0; i < pl[k]->weight.size(); ++i) check(pl[k]->weight.data()[i], gl[k]->weight.data()[i]);
    for (Eigen::Index i = 0; i < pl[k]->bias.size(); ++i) check(pl[k]->bias.data()[i], gl[k]->bias.data()[i]);
  }
  return worst;
}

TEST(Forward, ZeroWeightsGiveZeroOutputs) {
  Rng rng(1);
  MlpParameters p = zeros_like(init_mlp({10, {64, 64}, 4}, rng));
  const std::vector<double> obs(10, 0.7);
  const PolicyOutput out = forward(p, obs);
  EXPECT_TRUE(out.logits.isZero(0.0));
  EXPECT_EQ(out.value, 0.0);
}

TEST(Forward, DeterministicAndDimensionChecked) {
  Rng rng(2);
  const MlpParameters p = init_mlp(architecture_for(4), rng);
  std::vector<double> obs(24);
  for (auto& x : obs) x = uniform01(rng);
  const PolicyOutput a = forward(p, obs), b = forward(p, obs);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.value, b.value);
  EXPECT_THROW(forward(p, std::vector<double>(23)), InvalidArgument);
}

TEST(Forward, LipschitzBound) {
  Rng rng(3);
  const MlpParameters p = init_mlp(architecture_for(8), rng);
  double logits_norm = 1.0, value_norm = 1.0;
  for (const auto& l : p.trunk) {
    const double s = Eigen::JacobiSVD<Matrix>(l.weight).singularValues()(0);
    logits_norm *= s;
    value_norm *= s;
  }
  logits_norm *= Eigen::JacobiSVD<Matrix>(p.policy_head.weight).singularValues()(0);
  value_norm *= Eigen::JacobiSVD<Matrix>(p.value_head.weight).singularValues()(0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(44), y(44);
    Vector delta(44);
    for (std::size_t i = 0; i < 44; ++i) {
      x[i] = uniform01(rng);
      delta(static_cast<Eigen::Index>(i)) = uniform_real(rng, -1.0, 1.0);
    }
    delta *= 1e-6 / delta.norm();
    for (std::size_t i = 0; i < 44; ++i) y[i] = x[i] + delta(static_cast<Eigen::Index>(i));
    const PolicyOutput a = forward(p, x), b = forward(p, y);
    EXPECT_LE((a.logits - b.logits).norm(), logits_norm * 1e-6 * (1 + 1e-6));
    EXPECT_LE(std::abs(a.value - b.value), value_norm * 1e-6 * (1 + 1e-6));
  }
}

TEST(MaskedCategorical, SymmetricSoftmaxOverOnEntries) {
  ActionMask m(3);
  m.set(0, true);
  m.set(2, true);
  const std::vector<double> logits{0, 0, 0};
  const MaskedCategorical d(logits, m);
  EXPECT_DOUBLE_EQ(d.probs()[0], 0.5);
  EXPECT_EQ(d.probs()[1], 0.0);
  EXPECT_DOUBLE_EQ(d.probs()[2], 0.5);
  EXPECT_THROW(d.log_prob(1), ContractViolation);
}

TEST(MaskedCategorical, ForcedChoice) {
  ActionMask m(4);
  m.set(2, true);
  const std::vector<double> logits{5, -1, -3, 2};
  const MaskedCategorical d(logits, m);
  EXPECT_EQ(d.probs()[2], 1.0);
  EXPECT_EQ(d.entropy(), 0.0);
  Rng rng(0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(d.sample(rng), 2u);
}

TEST(MaskedCategorical, LogLinearLogits) {
  ActionMask m(3);
  for (std::size_t a = 0; a < 3; ++a) m.set(a, true);
  const std::vector<double> logits{std::log(1.0), std::log(2.0), std::log(3.0)};
  const MaskedCategorical d(logits, m);
  EXPECT_NEAR(d.probs()[0], 1.0 / 6, 1e-15);
  EXPECT_NEAR(d.probs()[1], 2.0 / 6, 1e-15);
  EXPECT_NEAR(d.probs()[2], 3.0 / 6, 1e-15);
  double total = 0.0;
  for (double p : d.probs()) total += p;
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(MaskedCategorical, EntropyBoundsAndErrors) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 8);
    ActionMask m(n);
    for (std::size_t a = 0; a < n; ++a) m.set(a, uniform01(rng) < 0.5);
    m.set(uniform_index(rng, n), true);
    std::vector<double> logits(n);
    for (auto& l : logits) l = uniform_real(rng, -4, 4);
    const MaskedCategorical d(logits, m);
    EXPECT_GE(d.entropy(), 0.0);
    EXPECT_LE(d.entropy(), std::log(static_cast<double>(m.count())) + 1e-12);
  }
  ActionMask all(4);
  for (std::size_t a = 0; a < 4; ++a) all.set(a, true);
  EXPECT_NEAR(MaskedCategorical(std::vector<double>(4, 0.3), all).entropy(), std::log(4.0), 1e-12);
  EXPECT_THROW(MaskedCategorical(std::vector<double>(4, 0.0), ActionMask(4)), ContractViolation);
}

TEST(MaskedCategorical, NeverSamplesMaskedEntries) {
  ActionMask m(6);
  m.set(1, true);
  m.set(4, true);
  const std::vector<double> logits{50, -2, 50, 50, 1, 50};
  const MaskedCategorical d(logits, m);
  Rng rng(4);
  for (int i = 0; i < 100000; ++i) {
    const std::size_t a = d.sample(rng);
    ASSERT_TRUE(a == 1 || a == 4);
  }
}

TEST(Backward, SingleLinearLayerValueLoss) {
  Rng rng(5);
  MlpParameters p = init_mlp({3, {}, 2}, rng);
  Matrix x(3, 1);
  x << 0.5, -1.0, 2.0;
  const ForwardCache c = forward_batch(p, x);
  const MlpGradients g = backward(p, c, Matrix::Zero(2, 1), RowVector::Ones(1));
  EXPECT_EQ(g.value_head.weight, x.transpose());
  EXPECT_EQ(g.value_head.bias(0), 1.0);
  EXPECT_TRUE(g.policy_head.weight.isZero(0.0));
  EXPECT_TRUE(g.policy_head.bias.isZero(0.0));
}

TEST(Backward, ValueOnlyLossLeavesPolicyHeadDead) {
  const Problem p = make_problem(21);
  const MlpGradients g = analytic(p, Term::ValueMse);
  EXPECT_TRUE(g.policy_head.weight.isZero(0.0));
  EXPECT_TRUE(g.policy_head.bias.isZero(0.0));
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Problem p = make_problem(100 + seed);
    EXPECT_LE(worst_relative_error(p, Term::LogProb), 1e-4) << "seed " << seed;
    EXPECT_LE(worst_relative_error(p, Term::Entropy), 1e-4) << "seed " << seed;
    EXPECT_LE(worst_relative_error(p, Term::ValueMse), 1e-4) << "seed " << seed;
  }
}

TEST(Backward, NonFiniteReportsLayer) {
  Rng rng(6);
  MlpParameters p = init_mlp({3, {4, 4}, 2}, rng);
  p.trunk[1].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    forward_batch(p, Matrix::Ones(3, 1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("trunk layer 1"), std::string::npos);
  }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Rng rng(7);
  MlpParameters p = init_mlp({4, {3}, 2}, rng);
  const MlpParameters before = p;
  OptimizerState opt = make_optimizer(p);
  adam_step(p, zeros_like(p), opt);
  EXPECT_EQ(p.trunk[0].weight, before.trunk[0].weight);
  EXPECT_EQ(p.value_head.bias, before.value_head.bias);
}

TEST(Adam, FirstStepIsSignLikeUpdate) {
  // Two live parameters: the value head's single weight and bias on a width-1 network.
  MlpParameters p = detail::shaped({1, {}, 1});
  p.value_head.weight(0, 0) = 1.0;
  p.value_head.bias(0) = -1.0;
  MlpGradients g = zeros_like(p);
  g.value_head.weight(0, 0) = 0.5;
  g.value_head.bias(0) = -2.0;
  OptimizerState opt = make_optimizer(p, {0.1});
  adam_step(p, g, opt);
  // After bias correction m = g and v = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.value_head.weight(0, 0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value_head.bias(0), -1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value_head.weight(0, 0), 0.9, 1e-7);
  EXPECT_NEAR(p.value_head.bias(0), -0.9, 1e-7);
}

TEST(Adam, DeterministicAndShapeChecked) {
  Rng rng(8);
  MlpParameters a = init_mlp({4, {3}, 2}, rng);
  MlpParameters b = a;
  MlpGradients g = a;
  OptimizerState oa = make_optimizer(a), ob = make_optimizer(b);
  adam_step(a, g, oa);
  adam_step(b, g, ob);
  EXPECT_EQ(a.trunk[0].weight, b.trunk[0].weight);
  Rng other(9);
  const MlpGradients wrong = init_mlp({5, {3}, 2}, other);
  EXPECT_THROW(adam_step(a, wrong, oa), InvalidArgument);
}

TEST(Checkpoint, RoundTripWithOptimizer) {
  Rng rng(10);
  Checkpoint ck;
  ck.params = init_mlp(architecture_for(3), rng);
  OptimizerState opt = make_optimizer(ck.params);
  adam_step(ck.params, ck.params, opt);
  ck.optimizer = opt;
  const auto path = std::filesystem::temp_directory_path() / "svpsfc_test_ckpt.json";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  ASSERT_EQ(back.params.arch, ck.params.arch);
  for (std::size_t k = 0; k < ck.params.layers().size(); ++k) {
    EXPECT_EQ(back.params.layers()[k]->weight, ck.params.layers()[k]->weight);
    EXPECT_EQ(back.params.layers()[k]->bias, ck.params.layers()[k]->bias);
    EXPECT_EQ(back.optimizer->second_moment.layers()[k]->weight, opt.second_moment.layers()[k]->weight);
  }
  EXPECT_EQ(back.optimizer->step, 1u);

  nlohmann::json j = to_json(ck);
  j["layers"][0]["w"].erase(0);
  EXPECT_THROW(checkpoint_from_json(j), SchemaError);
}

}  // namespace
}  // namespace svpsfc::nn
