#include <cmath>
#include <numbers>
#include <map>
#include <random>
#include <tuple>

#include "doctest.h"
#include "mpccbf/errors.hpp"
#include "mpccbf/nn.hpp"
#include "mpccbf/sac.hpp"
#include "mpccbf/training.hpp"

using namespace mpccbf;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& g) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = standard_normal(g);
  return m;
}

}  // namespace

TEST_CASE("hand-built 1-2-1 network") {
  Mlp net({1, 2, 1});
  net.weight(0) << 1.0, -2.0;
  net.bias(0) << 0.5, 0.0;
  net.weight(1) << 3.0, 1.0;
  net.bias(1) << -1.0;
  Eigen::MatrixXd x(1, 1);
  x << 0.25;
  const double expected = 3.0 * std::tanh(0.75) + std::tanh(-0.5) - 1.0;
  CHECK(net.forward(x)(0, 0) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(net.parameter_count() == 7);
  const Eigen::VectorXd p = net.parameters();
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(p[2] == 0.5);
  CHECK(p[6] == -1.0);
}

TEST_CASE("mlp backward agrees with finite differences") {
  std::mt19937_64 g(3);
  Mlp net({3, 5, 4, 2});
  net.initialize(g);
  const Eigen::MatrixXd x = random_matrix(3, 6, g);
  const Eigen::MatrixXd w = random_matrix(2, 6, g);
  auto loss = [&](const Mlp& n) { return (n.forward(x).array() * w.array()).sum(); };
  Mlp::Cache cache;
  net.forward(x, &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<int>(net.parameter_count()));
  const Eigen::MatrixXd dx = net.backward(cache, w, &grad);
  const Eigen::VectorXd p0 = net.parameters();
  const double h = 1e-6;
  for (int i = 0; i < p0.size(); ++i) {
    Mlp a = net, b = net;
    Eigen::VectorXd pa = p0, pb = p0;
    pa[i] += h;
    pb[i] -= h;
    a.set_parameters(pa);
    b.set_parameters(pb);
    CHECK(rel_err(grad[i], (loss(a) - loss(b)) / (2 * h)) < 1e-4);
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 6; ++j) {
      Eigen::MatrixXd xa = x, xb = x;
      xa(i, j) += h;
      xb(i, j) -= h;
      const double fd = ((net.forward(xa).array() - net.forward(xb).array()) * w.array()).sum() / (2 * h);
      CHECK(rel_err(dx(i, j), fd) < 1e-4);
    }
  }
}

TEST_CASE("policy backward agrees with finite differences") {
  std::mt19937_64 g(5);
  GaussianPolicy pol(4, 3, {8, 8}, -5.0, 2.0);
  pol.net.initialize(g);
  const Eigen::MatrixXd obs = random_matrix(4, 5, g);
  const Eigen::MatrixXd noise = random_matrix(3, 5, g);
  const Eigen::MatrixXd wa = random_matrix(3, 5, g);
  const Eigen::RowVectorXd wl = random_matrix(1, 5, g);
  auto objective = [&](const GaussianPolicy& p) {
    const auto s = p.sample(obs, noise);
    return (s.action.array() * wa.array()).sum() + s.log_prob.dot(wl);
  };
  const auto s = pol.sample(obs, noise);
  const Eigen::VectorXd grad = pol.backward(s, wa, wl);
  const Eigen::VectorXd p0 = pol.net.parameters();
  const double h = 1e-6;
  for (int i = 0; i < p0.size(); ++i) {
    GaussianPolicy a = pol, b = pol;
    Eigen::VectorXd pa = p0, pb = p0;
    pa[i] += h;
    pb[i] -= h;
    a.net.set_parameters(pa);
    b.net.set_parameters(pb);
    CHECK(rel_err(grad[i], (objective(a) - objective(b)) / (2 * h)) < 1e-4);
  }
}

TEST_CASE("actor objective gradient agrees with finite differences") {
  SacHyperparams hp = SacHyperparams::desk_scale();
  hp.hidden = {8, 8};
  SacAgent agent(4, 2, hp, 9);
  std::mt19937_64 g(6);
  const Eigen::MatrixXd obs = random_matrix(4, 7, g);
  const Eigen::MatrixXd noise = random_matrix(2, 7, g);
  Eigen::VectorXd grad;
  agent.actor_objective(obs, noise, &grad);
  const Eigen::VectorXd p0 = agent.policy.net.parameters();
  const double h = 1e-6;
  for (int i = 0; i < p0.size(); ++i) {
    Eigen::VectorXd pa = p0, pb = p0;
    pa[i] += h;
    pb[i] -= h;
    agent.policy.net.set_parameters(pa);
    const double fa = agent.actor_objective(obs, noise, nullptr);
    agent.policy.net.set_parameters(pb);
    const double fb = agent.actor_objective(obs, noise, nullptr);
    CHECK(rel_err(grad[i], (fa - fb) / (2 * h)) < 1e-4);
  }
  agent.policy.net.set_parameters(p0);
}

TEST_CASE("log-prob of the squashed gaussian") {
  GaussianPolicy pol(1, 1, {4}, -5.0, 2.0);
  // Zero weights: mean 0, log-std at the midpoint of its range.
  const Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(1, 1);
  Eigen::MatrixXd noise(1, 1);
  noise << 0.3;
  const auto s = pol.sample(obs, noise);
  const double ls = s.log_std(0, 0);
  CHECK(ls == doctest::Approx(-1.5));
  const double u = std::exp(ls) * 0.3;
  const double expected = -0.5 * 0.09 - ls - 0.5 * std::log(2 * std::numbers::pi) - std::log(1 - std::tanh(u) * std::tanh(u));
  CHECK(s.log_prob[0] == doctest::Approx(expected).epsilon(1e-5));
  CHECK(s.action(0, 0) == doctest::Approx(std::tanh(u)));
}

TEST_CASE("target blend with tau one copies the source") {
  std::mt19937_64 g(1);
  Mlp a({3, 4, 1}), b({3, 4, 1});
  a.initialize(g);
  b.initialize(g);
  b.blend_from(a, 1.0);
  CHECK(a.parameters() == b.parameters());
  Mlp c({3, 4, 1});
  c.blend_from(a, 0.25);
  CHECK((c.parameters() - 0.25 * a.parameters()).norm() < 1e-15);
}

TEST_CASE("critic loss decreases on a fixed batch with gamma zero") {
  SacHyperparams hp = SacHyperparams::desk_scale();
  hp.gamma = 0.0;
  hp.hidden = {16, 16};
  hp.lr_actor = 0.0;
  SacAgent agent(2, 1, hp, 4);
  std::mt19937_64 g(8);
  std::vector<Transition> data;
  for (int i = 0; i < 32; ++i) {
    Eigen::VectorXd o(2), a(1);
    o << uniform(g, -1, 1), uniform(g, -1, 1);
    a << uniform(g, -1, 1);
    data.push_back({o, a, o[0] - a[0], o, true});
  }
  std::vector<const Transition*> batch;
  for (const auto& t : data) batch.push_back(&t);
  const double first = agent.update(batch).critic_loss;
  double last = first;
  for (int k = 0; k < 300; ++k) last = agent.update(batch).critic_loss;
  CHECK(last < 0.2 * first);
}

TEST_CASE("zero learning rates leave every weight bit-identical") {
  SacHyperparams hp = SacHyperparams::desk_scale();
  hp.hidden = {8};
  hp.lr_actor = 0.0;
  hp.lr_critic = 0.0;
  SacAgent agent(2, 1, hp, 4);
  std::vector<Transition> data;
  for (int i = 0; i < 8; ++i) data.push_back({Eigen::VectorXd::Ones(2) * i, Eigen::VectorXd::Ones(1) * 0.1, 1.0 * i,
                                              Eigen::VectorXd::Ones(2), false});
  std::vector<const Transition*> batch;
  for (const auto& t : data) batch.push_back(&t);
  const Eigen::VectorXd p = agent.policy.net.parameters();
  const Eigen::VectorXd q = agent.q1.parameters();
  for (int k = 0; k < 5; ++k) agent.update(batch);
  CHECK(agent.policy.net.parameters() == p);
  CHECK(agent.q1.parameters() == q);
}

TEST_CASE("temperature tuning moves alpha toward the entropy target") {
  SacHyperparams hp = SacHyperparams::desk_scale();
  hp.hidden = {8};
  hp.lr_critic = 0.0;
  hp.lr_actor = 1e-2;  // also the temperature step size
  std::vector<Transition> data;
  for (int i = 0; i < 16; ++i)
    data.push_back({Eigen::VectorXd::Ones(2) * (0.1 * i), Eigen::VectorXd::Ones(2) * 0.1, 0.0,
                    Eigen::VectorXd::Ones(2), false});
  std::vector<const Transition*> batch;
  for (const auto& t : data) batch.push_back(&t);
  auto alpha_after = [&](double target_per_dim) {
    SacHyperparams h = hp;
    h.auto_alpha = true;
    h.target_entropy_per_dim = target_per_dim;
    SacAgent agent(2, 2, h, 5);
    SacDiagnostics d;
    for (int k = 0; k < 20; ++k) d = agent.update(batch);
    return std::pair{agent.alpha(), d.entropy};
  };
  const auto [low, h_low] = alpha_after(-50.0);
  const auto [high, h_high] = alpha_after(50.0);
  CHECK(h_low > -50.0);
  CHECK(low < hp.alpha);
  CHECK(h_high < 50.0);
  CHECK(high > hp.alpha);

  SacAgent fixed(2, 2, hp, 5);
  for (int k = 0; k < 5; ++k) fixed.update(batch);
  CHECK(fixed.alpha() == doctest::Approx(hp.alpha).epsilon(1e-15));
}

TEST_CASE("replay buffer drops the oldest entry at capacity") {
  ReplayBuffer rb(3);
  for (int i = 0; i < 5; ++i) rb.push({Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), 1.0 * i,
                                       Eigen::VectorXd::Zero(1), false});
  CHECK(rb.size() == 3);
  CHECK(rb.at(0).reward == 2.0);
  CHECK(rb.at(2).reward == 4.0);
  std::mt19937_64 g(1);
  const auto s = rb.sample(50, g);
  CHECK(s.size() == 50);
  for (const Transition* t : s) CHECK(t->reward >= 2.0);
}

TEST_CASE("observation normalization and virtual neighbors") {
  const ObsRanges r;
  const MergeGeometry geo;
  const StraightRoute main = geo.main_road();
  const VehicleState vp = virtual_vehicle(main, 15.0);
  CHECK(vp.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(vp.v == 15.0);
  const Eigen::VectorXd o =
      build_observation({-100, 0, 0, 10}, {0, 0}, std::nullopt, std::nullopt, vp, vp, r);
  REQUIRE(o.size() == kObservationSize);
  CHECK(o[0] == doctest::Approx(-5.0 / 6.0));
  CHECK(o[3] == doctest::Approx(0.0));
  CHECK(o[4] == doctest::Approx(1.0 / 9.0));
  CHECK(o[5] == doctest::Approx(0.0));
  CHECK(o[6] == doctest::Approx(5.0 / 6.0));
  CHECK(o[9] == doctest::Approx(0.5));
  CHECK(normalize(1e6, 0, 1) == 1.0);
  CHECK(normalize(-1e6, 0, 1) == -1.0);
}

TEST_CASE("action map is log-affine onto the bounds") {
  const ThetaBounds b = ThetaBounds::defaults();
  const auto lo = map_action_to_theta(-Eigen::VectorXd::Ones(16), b);
  const auto hi = map_action_to_theta(Eigen::VectorXd::Ones(16), b);
  const auto mid = map_action_to_theta(Eigen::VectorXd::Zero(16), b);
  const auto over = map_action_to_theta(Eigen::VectorXd::Constant(16, 3.0), b);
  for (int i = 0; i < 16; ++i) {
    CHECK(lo.values[i] == doctest::Approx(b.lower[i]));
    CHECK(hi.values[i] == doctest::Approx(b.upper[i]));
    CHECK(mid.values[i] == doctest::Approx(std::sqrt(b.lower[i] * b.upper[i])));
    CHECK(over.values[i] == hi.values[i]);
  }
  CHECK(mid.values[0] == doctest::Approx(1.0));
  CHECK(mid.values[14] == doctest::Approx(10.0));
  CHECK(b.lower[4] == 0.25);
  CHECK(b.upper[4] == 4.0);
  CHECK(b.upper[15] == 40.0);
  CHECK_THROWS_AS(map_action_to_theta(Eigen::VectorXd::Zero(3), b), ShapeMismatch);
}

TEST_CASE("reward terms and penalty") {
  RewardWeights w;
  RewardInput in;
  in.state = {0, 0, 0, 15};
  in.fuel_rate = 0.4;
  CHECK(reward(in, w) == doctest::Approx(-0.06));
  in.input = {2.0, 0.0};
  CHECK(reward(in, w) == doctest::Approx(-1.06));
  in.state.v = 13;
  in.state.psi = 0.1;
  const double base = -(0.25 * 4 + 0.25 * 4 + 0.1 * 0.01 + 0.15 * 0.4);
  CHECK(reward(in, w) == doctest::Approx(base));
  in.feasible = false;
  CHECK(reward(in, w) == doctest::Approx(base - 1e3));
  in.feasible = true;
  RewardWeights w2 = w;
  for (double& b : w2.beta) b *= 2;
  CHECK(reward(in, w2) == doctest::Approx(2 * base));
  w2.beta[0] = 1.5;
  CHECK_THROWS_AS(w2.validate(), ValidationError);
}

TEST_CASE("sac hyperparameter validation") {
  SacHyperparams h;
  CHECK_NOTHROW(h.validate());
  CHECK(h.hidden == std::vector<int>{512, 512});
  h.gamma = 1.0;
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h = SacHyperparams{};
  h.hidden = {};
  CHECK_THROWS_AS(h.validate(), ValidationError);
}

TEST_CASE("toy bandit policy mean approaches the optimum") {
  SacHyperparams h = SacHyperparams::desk_scale();
  h.warmup_steps = 256;
  h.batch_size = 64;
  h.hidden = {32, 32};
  const double mean = train_toy(h, 5000, 1);
  CHECK(std::abs(mean - 0.5) < 0.1);
}

TEST_CASE("fleet training env is reproducible and covers every CAV") {
  ScenarioConfig cfg;
  cfg.target_cavs = 3;
  auto run = [&] {
    FleetTrainingEnv env(cfg, ObsRanges::for_scenario(cfg), ThetaBounds::defaults(), RewardWeights{}, 3);
    std::map<int, Eigen::VectorXd> obs = env.reset();
    double total = 0.0;
    int transitions = 0;
    for (int k = 0; k < 40; ++k) {
      std::map<int, Eigen::VectorXd> actions;
      for (const auto& [id, o] : obs) actions[id] = Eigen::VectorXd::Zero(16);
      const auto s = env.step(actions);
      CHECK(s.transitions.size() == actions.size());
      for (const auto& t : s.transitions) {
        total += t.reward;
        ++transitions;
        CHECK(t.next_obs.size() == kObservationSize);
      }
      obs = s.obs;
      if (s.episode_over) break;
    }
    return std::tuple{total, transitions, obs};
  };
  const auto a = run();
  const auto b = run();
  CHECK(std::get<1>(a) > 40);
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
}

TEST_CASE("fleet training env rejects a missing action") {
  ScenarioConfig cfg;
  FleetTrainingEnv env(cfg, ObsRanges::for_scenario(cfg), ThetaBounds::defaults(), RewardWeights{}, 1);
  std::map<int, Eigen::VectorXd> obs = env.reset();
  for (int k = 0; k < 50 && obs.empty(); ++k) obs = env.step({}).obs;
  REQUIRE_FALSE(obs.empty());
  CHECK_THROWS_AS(env.step({}), ValidationError);
}
