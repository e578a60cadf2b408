#include "pathforge/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pathforge {

using ad::Var;

void PpoConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("ppo learning rate must be positive");
  if (hidden == 0 || batch_size == 0 || repeat_per_collect == 0)
    throw ConfigError("ppo hidden, batch size and repeat per collect must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw ConfigError("ppo gamma and gae lambda must lie in [0,1]");
  if (!(clip > 0.0)) throw ConfigError("ppo clip ratio must be positive");
  if (value_coef < 0.0 || entropy_coef < 0.0) throw ConfigError("ppo loss coefficients must be >= 0");
}

std::vector<PpoConfig> ppo_search_grid() {
  std::vector<PpoConfig> grid;
  for (double lr : {1e-4, 3e-4, 1e-3})
    for (std::size_t hidden : {64, 128, 256})
      for (std::size_t batch : {16, 64})
        for (std::size_t repeat : {2, 10, 15}) {
          PpoConfig c;
          c.lr = lr;
          c.hidden = hidden;
          c.batch_size = batch;
          c.repeat_per_collect = repeat;
          grid.push_back(c);
        }
  return grid;
}

ActorCritic::ActorCritic(std::size_t obs_dim, std::size_t n_actions, const PpoConfig& cfg, std::uint64_t seed)
    : obs_dim_(obs_dim), n_actions_(n_actions) {
  cfg.validate();
  if (obs_dim == 0 || n_actions == 0) throw ConfigError("actor-critic needs a non-empty observation and action set");
  Rng rng(derive_seed(seed, 0xac));
  actor_ = ad::Mlp2("actor", obs_dim, cfg.hidden, n_actions, rng, ad::Activation::Tanh);
  critic_ = ad::Mlp2("critic", obs_dim, cfg.hidden, 1, rng, ad::Activation::Tanh);
}

ad::ParameterList ActorCritic::parameters() {
  ad::ParameterList out;
  actor_.collect(out);
  critic_.collect(out);
  return out;
}

namespace {

Var row_input(ad::Tape& tape, const std::vector<double>& obs) { return tape.constant(ad::Matrix(1, obs.size(), obs)); }

}  // namespace

std::vector<double> ActorCritic::probabilities(const std::vector<double>& obs) {
  ad::Tape tape;
  const auto& p = ad::softmax(logits(tape, row_input(tape, obs)), 1).value();
  return {p.data().begin(), p.data().end()};
}

double ActorCritic::state_value(const std::vector<double>& obs) {
  ad::Tape tape;
  return value(tape, row_input(tape, obs)).value().item();
}

void gae(const std::vector<PpoStep>& steps, double gamma, double lambda, std::vector<double>& advantages,
         std::vector<double>& returns) {
  const std::size_t n = steps.size();
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const bool terminal = steps[i].last || i + 1 == n;
    const double next_value = terminal ? 0.0 : steps[i + 1].value;
    if (terminal) acc = 0.0;
    const double delta = steps[i].reward + gamma * next_value - steps[i].value;
    acc = delta + gamma * lambda * acc;
    advantages[i] = acc;
    returns[i] = acc + steps[i].value;
  }
}

Var ppo_surrogate(Var log_prob, Var old_log_prob, Var advantages, double clip) {
  Var ratio = ad::exp(ad::sub(log_prob, ad::detach(old_log_prob)));
  Var unclipped = ad::hadamard(ratio, advantages);
  Var clipped = ad::hadamard(ad::clamp(ratio, 1.0 - clip, 1.0 + clip), advantages);
  return ad::mean(ad::minimum(unclipped, clipped));
}

UpdateStats ppo_update(ActorCritic& net, ad::Adam& opt, const std::vector<PpoStep>& steps, const PpoConfig& cfg,
                       Rng& rng) {
  if (steps.empty()) throw UsageError("ppo_update without transitions");
  std::vector<double> adv, ret;
  gae(steps, cfg.gamma, cfg.gae_lambda, adv, ret);
  if (cfg.normalize_advantages && adv.size() > 1) adv = standardize(adv);

  const std::size_t dim = net.obs_dim();
  UpdateStats stats;
  std::vector<std::size_t> order(steps.size());
  for (std::size_t rep = 0; rep < cfg.repeat_per_collect; ++rep) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size), b = hi - lo;
      ad::Matrix obs(b, dim), old_lp(b, 1), a(b, 1), r(b, 1);
      std::vector<std::size_t> actions(b);
      for (std::size_t k = 0; k < b; ++k) {
        const auto& s = steps[order[lo + k]];
        if (s.obs.size() != dim) throw ad::ShapeError("ppo observation size mismatch");
        std::copy(s.obs.begin(), s.obs.end(), obs.row(k).begin());
        actions[k] = static_cast<std::size_t>(s.action);
        old_lp(k, 0) = s.log_prob;
        a(k, 0) = adv[order[lo + k]];
        r(k, 0) = ret[order[lo + k]];
      }
      ad::Tape tape;
      Var x = tape.constant(std::move(obs));
      Var logp_all = ad::log_softmax(net.logits(tape, x), 1);
      Var probs = ad::exp(logp_all);
      Var logp = ad::pick_cols(logp_all, actions);
      Var surrogate = ppo_surrogate(logp, tape.constant(std::move(old_lp)), tape.constant(std::move(a)), cfg.clip);
      Var err = ad::sub(net.value(tape, x), tape.constant(std::move(r)));
      Var value_loss = ad::mean(ad::hadamard(err, err));
      Var ent = ad::scale(ad::sum(ad::hadamard(probs, logp_all)), -1.0 / static_cast<double>(b));
      Var loss = ad::add(ad::scale(surrogate, -1.0),
                         ad::sub(ad::scale(value_loss, cfg.value_coef), ad::scale(ent, cfg.entropy_coef)));
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      stats.loss += loss.value().item();
      stats.entropy += ent.value().item();
      ++stats.updates;
    }
  }
  stats.loss /= static_cast<double>(stats.updates);
  stats.entropy /= static_cast<double>(stats.updates);
  return stats;
}

void MlpPolicy::begin_episode(const Corpus& corpus, const Episode*) {
  if (corpus.n_docs() != net_.n_actions())
    throw UsageError("mlp policy built for " + std::to_string(net_.n_actions()) + " documents, corpus has " +
                     std::to_string(corpus.n_docs()));
  n_docs_ = corpus.n_docs();
}

int MlpPolicy::act(const std::vector<EpisodeStep>& history, Rng& rng) {
  const auto p = net_.probabilities(flat_observation(n_docs_, history));
  return static_cast<int>(mode_ == ActMode::Greedy ? argmax_lowest(p) : sample_categorical(p, rng));
}

PpoAgent::PpoAgent(std::size_t n_docs, const PpoConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      net_(n_docs * kFeedbackClasses, n_docs, cfg, seed),
      opt_(net_.parameters(), {.lr = cfg.lr}),
      update_rng_(derive_seed(seed, 0x50)),
      eval_(net_, ActMode::Greedy) {}

std::vector<EpisodeLog> PpoAgent::train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) {
  const std::size_t n_docs = task.corpus->n_docs();
  if (n_docs != net_.n_actions()) throw UsageError("ppo agent used on a corpus of a different size");
  std::vector<PpoStep> steps;
  std::vector<EpisodeLog> logs;
  for (std::size_t e = 0; e < n; ++e) {
    Episode env = Episode::reset(*task.corpus, task.population, task.episode, env_rng);
    while (!env.done()) {
      PpoStep s;
      s.obs = flat_observation(n_docs, env.log().steps);
      const auto p = net_.probabilities(s.obs);
      s.action = static_cast<int>(sample_categorical(p, act_rng));
      s.log_prob = std::log(p[static_cast<std::size_t>(s.action)]);
      s.value = net_.state_value(s.obs);
      s.reward = env.step(s.action).reward;
      steps.push_back(std::move(s));
    }
    if (!steps.empty()) steps.back().last = true;
    logs.push_back(env.log());
  }
  if (!steps.empty()) ppo_update(net_, opt_, steps, cfg_, update_rng_);
  return logs;
}

}  // namespace pathforge
