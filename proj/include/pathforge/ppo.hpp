#pragma once

#include <vector>

#include "pathforge/layers.hpp"
#include "pathforge/policy.hpp"
#include "pathforge/training.hpp"

namespace pathforge {

struct PpoConfig {
  double lr = 1e-3;
  std::size_t hidden = 64;
  std::size_t batch_size = 16;
  std::size_t repeat_per_collect = 10;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  bool normalize_advantages = true;

  void validate() const;
};

/// Learning rate x hidden width x batch size x repeat per collect.
std::vector<PpoConfig> ppo_search_grid();

/// Two MLPs over a flat observation: policy logits and state value.
class ActorCritic {
 public:
  ActorCritic(std::size_t obs_dim, std::size_t n_actions, const PpoConfig& cfg, std::uint64_t seed);
  ActorCritic(const ActorCritic&) = delete;
  ActorCritic& operator=(const ActorCritic&) = delete;

  ad::Var logits(ad::Tape& tape, ad::Var obs) { return actor_(tape, obs); }
  ad::Var value(ad::Tape& tape, ad::Var obs) { return critic_(tape, obs); }
  ad::ParameterList parameters();

  std::vector<double> probabilities(const std::vector<double>& obs);
  double state_value(const std::vector<double>& obs);
  std::size_t obs_dim() const { return obs_dim_; }
  std::size_t n_actions() const { return n_actions_; }

 private:
  std::size_t obs_dim_;
  std::size_t n_actions_;
  ad::Mlp2 actor_;
  ad::Mlp2 critic_;
};

struct PpoStep {
  std::vector<double> obs;
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool last = false;  // final step of its episode
};

/// Generalised advantage estimates; returns = advantages + values.
void gae(const std::vector<PpoStep>& steps, double gamma, double lambda, std::vector<double>& advantages,
         std::vector<double>& returns);

/// Clipped surrogate objective mean(min(r A, clip(r, 1-eps, 1+eps) A)) with
/// r = exp(log_prob - old_log_prob). Inputs are column vectors.
ad::Var ppo_surrogate(ad::Var log_prob, ad::Var old_log_prob, ad::Var advantages, double clip);

UpdateStats ppo_update(ActorCritic& net, ad::Adam& opt, const std::vector<PpoStep>& steps, const PpoConfig& cfg,
                       Rng& rng);

class MlpPolicy : public Policy {
 public:
  MlpPolicy(ActorCritic& net, ActMode mode) : net_(net), mode_(mode) {}
  std::string name() const override { return "ppo-mlp"; }
  void begin_episode(const Corpus& corpus, const Episode*) override;
  int act(const std::vector<EpisodeStep>& history, Rng& rng) override;

 private:
  ActorCritic& net_;
  ActMode mode_;
  std::size_t n_docs_ = 0;
};

/// MLP actor-critic over the flat feedback observation, trained with PPO.
class PpoAgent : public Agent {
 public:
  PpoAgent(std::size_t n_docs, const PpoConfig& cfg, std::uint64_t seed);
  std::vector<EpisodeLog> train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) override;
  Policy& evaluation_policy() override { return eval_; }
  ActorCritic& network() { return net_; }

 private:
  PpoConfig cfg_;
  ActorCritic net_;
  ad::Adam opt_;
  Rng update_rng_;
  MlpPolicy eval_;
};

}  // namespace pathforge
