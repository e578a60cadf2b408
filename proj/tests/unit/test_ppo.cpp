#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <tuple>

#include "fixtures.hpp"
#include "pathforge/ppo.hpp"

using namespace pathforge;

namespace {

ad::Matrix column(std::vector<double> v) {
  const std::size_t n = v.size();
  return ad::Matrix(n, 1, std::move(v));
}

std::vector<PpoStep> episode_of(const std::vector<double>& rewards, const std::vector<double>& values) {
  std::vector<PpoStep> s(rewards.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i].reward = rewards[i];
    s[i].value = values[i];
  }
  s.back().last = true;
  return s;
}

}  // namespace

TEST(PpoSurrogate, UnitRatioGivesPolicyGradient) {
  ad::Tape tape;
  const std::vector<double> lp{-0.5, -1.2, -2.0}, adv{1.0, -2.0, 0.5};
  ad::Var logp = tape.variable(column(lp));
  ad::Var obj = ppo_surrogate(logp, tape.constant(column(lp)), tape.constant(column(adv)), 0.2);
  EXPECT_NEAR(obj.value().item(), (1.0 - 2.0 + 0.5) / 3.0, 1e-12);
  tape.backward(obj);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(logp.grad()[i], adv[i] / 3.0, 1e-12);
}

TEST(PpoSurrogate, ClippedSideHasNoGradient) {
  ad::Tape tape;
  // Ratio e^0.5 > 1.2 with a positive advantage, ratio e^-0.5 < 0.8 with a negative one.
  ad::Var logp = tape.variable(column({0.5, -0.5, 0.1}));
  ad::Var obj = ppo_surrogate(logp, tape.constant(column({0.0, 0.0, 0.0})), tape.constant(column({2.0, -1.0, 1.0})), 0.2);
  EXPECT_NEAR(obj.value().item(), (1.2 * 2.0 + 0.8 * -1.0 + std::exp(0.1)) / 3.0, 1e-12);
  tape.backward(obj);
  EXPECT_EQ(logp.grad()[0], 0.0);
  EXPECT_EQ(logp.grad()[1], 0.0);
  EXPECT_NEAR(logp.grad()[2], std::exp(0.1) / 3.0, 1e-12);
}

TEST(Gae, LambdaOneIsMonteCarloMinusValue) {
  const auto steps = episode_of({1, 0, 2, 1}, {0.5, 0.1, -0.3, 0.7});
  std::vector<double> adv, ret;
  gae(steps, 0.9, 1.0, adv, ret);
  const std::vector<double> g{1 + 0.9 * (0 + 0.9 * (2 + 0.9 * 1)), 0 + 0.9 * (2 + 0.9 * 1), 2 + 0.9 * 1, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(ret[i], g[i], 1e-12);
    EXPECT_NEAR(adv[i], g[i] - steps[i].value, 1e-12);
  }
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  const auto steps = episode_of({1, 0, 2}, {0.5, 0.1, -0.3});
  std::vector<double> adv, ret;
  gae(steps, 0.9, 0.0, adv, ret);
  EXPECT_NEAR(adv[0], 1 + 0.9 * 0.1 - 0.5, 1e-12);
  EXPECT_NEAR(adv[1], 0 + 0.9 * -0.3 - 0.1, 1e-12);
  EXPECT_NEAR(adv[2], 2 - -0.3, 1e-12);
}

TEST(Gae, EpisodesDoNotLeakIntoEachOther) {
  auto a = episode_of({1, 1}, {0, 0});
  const auto b = episode_of({5, 5}, {0, 0});
  a.insert(a.end(), b.begin(), b.end());
  std::vector<double> adv, ret;
  gae(a, 1.0, 1.0, adv, ret);
  EXPECT_EQ(ret[0], 2.0);
  EXPECT_EQ(ret[1], 1.0);
  EXPECT_EQ(ret[2], 10.0);
}

TEST(Ppo, CriticLearnsConstantReward) {
  PpoConfig cfg;
  cfg.gamma = 0.0;
  cfg.entropy_coef = 0.0;
  cfg.lr = 3e-3;
  ActorCritic net(8, 2, cfg, 1);
  ad::Adam opt(net.parameters(), {.lr = cfg.lr});
  Rng rng(2);
  std::vector<PpoStep> steps;
  for (int i = 0; i < 32; ++i) {
    PpoStep s;
    s.obs.assign(8, 0.0);
    s.obs[static_cast<std::size_t>(i % 8)] = 1.0;
    s.action = i % 2;
    s.log_prob = std::log(net.probabilities(s.obs)[static_cast<std::size_t>(s.action)]);
    s.reward = 1.0;
    s.last = true;
    steps.push_back(s);
  }
  for (int it = 0; it < 40; ++it) {
    for (auto& s : steps) s.value = net.state_value(s.obs);
    ppo_update(net, opt, steps, cfg, rng);
  }
  for (const auto& s : steps) EXPECT_NEAR(net.state_value(s.obs), 1.0, 0.05);
}

TEST(Ppo, TwoArmedBanditConverges) {
  const auto c = fixtures::chain(2);
  PopulationConfig pop;
  EpisodeConfig ep;
  ep.horizon = 1;
  ep.weighted_reward = false;
  const auto task = make_task(c, pop, ep);
  PpoConfig cfg;
  cfg.repeat_per_collect = 2;
  PpoAgent agent(2, cfg, 3);
  Rng env(4), act(5);
  for (int i = 0; i < 150; ++i) agent.train_epoch(task, 16, env, act);
  EXPECT_GT(agent.network().probabilities(flat_observation(2, {}))[0], 0.95);
}

TEST(Ppo, AgentRejectsOtherCorpusSizes) {
  const auto c = fixtures::chain(3);
  const auto task = make_task(c, PopulationConfig{}, EpisodeConfig{});
  PpoAgent agent(4, PpoConfig{}, 6);
  Rng env(7), act(8);
  EXPECT_THROW(agent.train_epoch(task, 1, env, act), UsageError);
  MlpPolicy p(agent.network(), ActMode::Greedy);
  EXPECT_THROW(p.begin_episode(c, nullptr), UsageError);
}

TEST(Ppo, SearchGridIsTheFullProduct) {
  const auto grid = ppo_search_grid();
  ASSERT_EQ(grid.size(), 54u);
  std::set<std::tuple<double, std::size_t, std::size_t, std::size_t>> seen;
  for (const auto& c : grid) {
    seen.insert({c.lr, c.hidden, c.batch_size, c.repeat_per_collect});
    EXPECT_NO_THROW(c.validate());
  }
  EXPECT_EQ(seen.size(), 54u);
}

TEST(Ppo, RejectsBadConfig) {
  PpoConfig c;
  c.clip = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.gae_lambda = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}
