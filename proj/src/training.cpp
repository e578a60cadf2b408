#include "pathforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pathforge {

using ad::Var;

Task make_task(const Corpus& corpus, const PopulationConfig& pop, const EpisodeConfig& ep) {
  pop.validate();
  ep.validate();
  return {&corpus, make_bipartite_graph(corpus), pop, ep};
}

std::vector<Task> sequential_tasks(const std::vector<Corpus>& corpora) {
  std::vector<Task> tasks;
  for (const auto& c : corpora) {
    PopulationConfig pop;
    pop.prior_scenario = PriorScenario::None;
    EpisodeConfig ep;
    ep.horizon = static_cast<int>(c.n_docs());
    ep.weighted_reward = false;
    tasks.push_back(make_task(c, pop, ep));
  }
  return tasks;
}

Task grid_task(const Corpus& grid, PriorScenario scenario) {
  PopulationConfig pop;
  pop.prior_scenario = scenario;
  pop.pref_edge_prob = grid.grid ? grid.grid->pref_edge_prob : 0.3;
  EpisodeConfig ep;
  ep.horizon = 11;
  ep.discount = 0.0;
  ep.weighted_reward = true;
  return make_task(grid, pop, ep);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("discount must lie in [0,1]");
  if (entropy_coef < 0.0) throw ConfigError("entropy coefficient must be >= 0");
  if (batch_size == 0 || repeat_per_collect == 0) throw ConfigError("batch size and repeat per collect must be >= 1");
  if (steps_per_collect.has_value() == episodes_per_collect.has_value())
    throw ConfigError("exactly one of steps_per_collect / episodes_per_collect must be set");
  if ((steps_per_collect && *steps_per_collect == 0) || (episodes_per_collect && *episodes_per_collect == 0))
    throw ConfigError("collect budget must be positive");
}

TrainConfig TrainConfig::pretrain_defaults() { return {}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.lr = 5e-4;
  c.gamma = 0.0;
  c.batch_size = 16;
  c.repeat_per_collect = 15;
  c.steps_per_collect.reset();
  c.episodes_per_collect = 5;
  c.epochs = 10;
  c.eval_episodes = 20;
  return c;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

std::vector<double> standardize(std::span<const double> x) {
  std::vector<double> out(x.size(), 0.0);
  if (x.empty()) return out;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(x.size()));
  if (!(sd > 1e-12)) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / sd;
  return out;
}

std::vector<Trajectory> collect(Recommender& model, const std::vector<Task>& tasks, CollectBudget budget,
                                Rng& env_rng, Rng& act_rng) {
  if (tasks.empty()) throw UsageError("collect without tasks");
  if ((budget.steps == 0) == (budget.episodes == 0)) throw UsageError("collect needs exactly one positive budget");
  std::vector<Trajectory> out;
  std::size_t steps = 0;
  auto more = [&] { return budget.steps ? steps < budget.steps : out.size() < budget.episodes; };
  while (more()) {
    const Task& task = tasks[uniform_index(env_rng, tasks.size())];
    Episode env = Episode::reset(*task.corpus, task.population, task.episode, env_rng);
    Trajectory tr;
    ad::Tape tape;
    ForwardContext forward(tape, model);
    while (!env.done()) {
      if (budget.steps && steps >= budget.steps) {
        tr.truncated = true;
        break;
      }
      BipartiteState state = build_state(task.graph, env.log().steps);
      const auto& log_probs = forward(state).log_probs.value();
      std::vector<double> probs(log_probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(log_probs[i]);
      const int a = static_cast<int>(sample_categorical(probs, act_rng));
      const auto r = env.step(a);
      tr.steps.push_back({&task, std::move(state.feedback), a, r.reward, log_probs[a]});
      ++steps;
    }
    tr.log = env.log();
    out.push_back(std::move(tr));
  }
  return out;
}

double mean_complete_return(const std::vector<Trajectory>& trajectories, std::size_t* n_complete) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : trajectories) {
    if (t.truncated) continue;
    sum += t.log.total_return;
    ++n;
  }
  if (n_complete) *n_complete = n;
  return n ? sum / static_cast<double>(n) : 0.0;
}

namespace {

Var entropy(Var probs, Var log_probs) { return ad::scale(ad::sum(ad::hadamard(probs, log_probs)), -1.0); }

Var accumulate(Var total, Var term) { return total.valid() ? ad::add(total, term) : term; }

template <class F>
void minibatches(std::size_t n, std::size_t batch, F&& f) {
  for (std::size_t start = 0; start < n; start += batch) f(start, std::min(n, start + batch));
}

}  // namespace

UpdateStats reinforce_update(Recommender& model, ad::Adam& opt, const std::vector<Trajectory>& trajectories,
                             const TrainConfig& cfg, Rng& rng) {
  std::vector<const Transition*> items;
  std::vector<double> returns;
  for (const auto& tr : trajectories) {
    std::vector<double> rewards;
    for (const auto& s : tr.steps) {
      items.push_back(&s);
      rewards.push_back(s.reward);
    }
    const auto g = discounted_returns(rewards, cfg.gamma);
    returns.insert(returns.end(), g.begin(), g.end());
  }
  if (items.empty()) throw UsageError("reinforce_update without transitions");
  if (cfg.standardize_returns) returns = standardize(returns);

  UpdateStats stats;
  std::vector<std::size_t> order(items.size());
  for (std::size_t rep = 0; rep < cfg.repeat_per_collect; ++rep) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    minibatches(order.size(), cfg.batch_size, [&](std::size_t lo, std::size_t hi) {
      ad::Tape tape;
      ForwardContext forward(tape, model);
      Var total;
      double ent_sum = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        const Transition& t = *items[order[k]];
        const auto out = forward({t.task->graph, t.feedback});
        Var lp = ad::pick(out.log_probs, static_cast<std::size_t>(t.action), 0);
        Var ent = entropy(out.probs, out.log_probs);
        ent_sum += ent.value().item();
        total = accumulate(total, ad::add(ad::scale(lp, -returns[order[k]]), ad::scale(ent, -cfg.entropy_coef)));
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      Var loss = ad::scale(total, inv);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      stats.loss += loss.value().item();
      stats.entropy += ent_sum * inv;
      ++stats.updates;
    });
  }
  stats.loss /= static_cast<double>(stats.updates);
  stats.entropy /= static_cast<double>(stats.updates);
  return stats;
}

// ---------------------------------------------------------------------------

std::vector<LabeledState> oracle_dataset(const std::vector<Task>& tasks, Rng& rng, std::size_t episodes_per_task) {
  std::vector<LabeledState> data;
  for (const auto& task : tasks) {
    for (std::size_t e = 0; e < episodes_per_task; ++e) {
      Episode env = Episode::reset(*task.corpus, task.population, task.episode, rng);
      while (!env.done()) {
        const int label = oracle_act(env);
        data.push_back({&task, latest_feedback(task.graph->n_docs, env.log().steps), label});
        env.step(label);
      }
    }
  }
  return data;
}

double imitation_loss(Recommender& model, std::span<const LabeledState> batch) {
  ad::Tape tape;
  ForwardContext forward(tape, model);
  double sum = 0.0;
  for (const auto& s : batch)
    sum -= forward({s.task->graph, s.feedback}).log_probs.value()(static_cast<std::size_t>(s.label), 0);
  return sum / static_cast<double>(batch.size());
}

double imitation_update(Recommender& model, ad::Adam& opt, std::span<const LabeledState> batch) {
  ad::Tape tape;
  ForwardContext forward(tape, model);
  Var total;
  for (const auto& s : batch) {
    const auto out = forward({s.task->graph, s.feedback});
    total = accumulate(total, ad::pick(out.log_probs, static_cast<std::size_t>(s.label), 0));
  }
  Var loss = ad::scale(total, -1.0 / static_cast<double>(batch.size()));
  opt.zero_grad();
  tape.backward(loss);
  opt.step();
  return loss.value().item();
}

double agreement(Recommender& model, std::span<const LabeledState> data) {
  if (data.empty()) return 0.0;
  ad::Tape tape;
  ForwardContext forward(tape, model);
  std::size_t hits = 0;
  for (const auto& s : data) {
    const auto& p = forward({s.task->graph, s.feedback}).logits.value();
    if (argmax_lowest(p.data()) == static_cast<std::size_t>(s.label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

CurvePoint rollout_point(Recommender& model, const std::vector<Task>& tasks, std::string phase, std::size_t step,
                         Rng& env_rng, Rng& act_rng) {
  const auto trajs = collect(model, tasks, CollectBudget::of_episodes(2 * tasks.size()), env_rng, act_rng);
  std::size_t n = 0;
  const double m = mean_complete_return(trajs, &n);
  return {std::move(phase), step, m, n};
}

}  // namespace

ImitationResult train_imitation(Recommender& model, const std::vector<Task>& tasks, const ImitationConfig& cfg,
                                std::uint64_t seed) {
  ImitationResult res;
  Rng data_rng(derive_seed(seed, 0x1d));
  Rng shuffle_rng(derive_seed(seed, 0x1e));
  Rng env_rng(derive_seed(seed, 0x1f)), act_rng(derive_seed(seed, 0x20));
  const auto data = oracle_dataset(tasks, data_rng);
  ad::Adam opt(model.parameters(), {.lr = cfg.lr});
  std::vector<std::size_t> order(data.size());
  std::vector<LabeledState> batch;
  while (res.steps < cfg.max_steps) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    minibatches(order.size(), cfg.batch_size, [&](std::size_t lo, std::size_t hi) {
      if (res.steps >= cfg.max_steps) return;
      batch.clear();
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(data[order[k]]);
      imitation_update(model, opt, batch);
      ++res.steps;
    });
    res.train_agreement = agreement(model, data);
    res.curve.push_back(rollout_point(model, tasks, "imitation", res.steps, env_rng, act_rng));
    if (res.train_agreement >= cfg.target_agreement) break;
  }
  return res;
}

std::vector<CurvePoint> pretrain_rl(Recommender& model, const std::vector<Task>& tasks, const TrainConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  if (!cfg.steps_per_collect) throw ConfigError("pre-training uses a step budget per collect");
  ad::Adam opt(model.parameters(), {.lr = cfg.lr});
  Rng env_rng(derive_seed(seed, 0x21)), act_rng(derive_seed(seed, 0x22)), upd_rng(derive_seed(seed, 0x23));
  std::vector<CurvePoint> curve;
  std::size_t steps = 0;
  while (steps < cfg.total_steps) {
    const std::size_t budget = std::min(*cfg.steps_per_collect, cfg.total_steps - steps);
    const auto trajs = collect(model, tasks, CollectBudget::of_steps(budget), env_rng, act_rng);
    steps += budget;
    std::size_t n = 0;
    const double m = mean_complete_return(trajs, &n);
    curve.push_back({"rl", steps, m, n});
    reinforce_update(model, opt, trajs, cfg, upd_rng);
  }
  return curve;
}

PretrainResult pretrain(Recommender& model, const std::vector<Task>& tasks, const PretrainConfig& cfg,
                        std::uint64_t seed) {
  PretrainResult res;
  res.imitation = train_imitation(model, tasks, cfg.imitation, derive_seed(seed, 1));
  res.curve = res.imitation.curve;
  if (cfg.run_rl) {
    const auto rl = pretrain_rl(model, tasks, cfg.rl, derive_seed(seed, 2));
    res.curve.insert(res.curve.end(), rl.begin(), rl.end());
  }
  return res;
}

// ---------------------------------------------------------------------------

FeedbackHead::FeedbackHead(std::size_t hidden, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xfb));
  linear_ = ad::Linear("feedback_head", hidden, 3, rng);
}

std::vector<FeedbackExample> feedback_dataset(const std::vector<Task>& tasks, std::size_t random_episodes_per_task,
                                              Rng& rng) {
  std::vector<FeedbackExample> data;
  RandomPolicy random;
  OraclePolicy oracle;
  for (const auto& task : tasks) {
    for (std::size_t e = 0; e <= random_episodes_per_task; ++e) {
      Policy& policy = e < random_episodes_per_task ? static_cast<Policy&>(random) : oracle;
      Episode env = Episode::reset(*task.corpus, task.population, task.episode, rng);
      policy.begin_episode(*task.corpus, policy.privileged() ? &env : nullptr);
      while (!env.done()) {
        FeedbackExample ex{&task, latest_feedback(task.graph->n_docs, env.log().steps), {}};
        for (const auto& doc : task.corpus->docs)
          ex.targets.push_back(static_cast<std::size_t>(observe(*task.corpus, env.hidden_state(), doc)));
        data.push_back(std::move(ex));
        const int a = policy.act(env.log().steps, rng);
        env.step(a);
      }
    }
  }
  return data;
}

double feedback_accuracy(Recommender& model, FeedbackHead& head, std::span<const FeedbackExample> data) {
  ad::Tape tape;
  ForwardContext forward(tape, model);
  std::size_t hits = 0, total = 0;
  for (const auto& ex : data) {
    const auto& logits = head(tape, forward({ex.task->graph, ex.feedback}).doc_embeddings).value();
    for (std::size_t d = 0; d < ex.targets.size(); ++d) {
      if (argmax_lowest(logits.row(d)) == ex.targets[d]) ++hits;
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

FeedbackPredictionResult pretrain_feedback_prediction(Recommender& model, const std::vector<Task>& tasks,
                                                      const FeedbackPredictionConfig& cfg, std::uint64_t seed) {
  Rng train_rng(derive_seed(seed, 0x31)), heldout_rng(derive_seed(seed, 0x32)), shuffle_rng(derive_seed(seed, 0x33));
  const auto train = feedback_dataset(tasks, cfg.random_episodes_per_task, train_rng);
  const auto heldout = feedback_dataset(tasks, 2, heldout_rng);
  FeedbackHead head(model.config().hidden, seed);
  auto params = model.parameters();
  head.collect(params);
  ad::Adam opt(params, {.lr = cfg.lr});

  FeedbackPredictionResult res;
  std::vector<std::size_t> order(train.size());
  while (res.steps < cfg.steps) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    minibatches(order.size(), cfg.batch_size, [&](std::size_t lo, std::size_t hi) {
      if (res.steps >= cfg.steps) return;
      ad::Tape tape;
      ForwardContext forward(tape, model);
      Var total;
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& ex = train[order[k]];
        Var logits = head(tape, forward({ex.task->graph, ex.feedback}).doc_embeddings);
        total = accumulate(total, ad::mean(ad::pick_cols(ad::log_softmax(logits, 1), ex.targets)));
      }
      Var loss = ad::scale(total, -1.0 / static_cast<double>(hi - lo));
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      ++res.steps;
    });
  }
  res.train_accuracy = feedback_accuracy(model, head, train);
  res.heldout_accuracy = feedback_accuracy(model, head, heldout);
  return res;
}

// ---------------------------------------------------------------------------

GnnAgent::GnnAgent(Recommender& model, const TrainConfig& cfg, std::uint64_t seed)
    : model_(model),
      cfg_(cfg),
      opt_(model.parameters(), {.lr = cfg.lr}),
      update_rng_(derive_seed(seed, 0x41)),
      eval_(model, cfg.eval_mode) {
  cfg_.validate();
}

std::vector<EpisodeLog> GnnAgent::train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) {
  const std::vector<Task> tasks{task};
  const auto trajs = collect(model_, tasks, CollectBudget::of_episodes(n), env_rng, act_rng);
  last_ = reinforce_update(model_, opt_, trajs, cfg_, update_rng_);
  std::vector<EpisodeLog> logs;
  for (const auto& t : trajs) logs.push_back(t.log);
  return logs;
}

std::vector<EpisodeLog> CmabAgent::train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) {
  std::vector<EpisodeLog> logs;
  for (std::size_t i = 0; i < n; ++i) {
    Episode env = Episode::reset(*task.corpus, task.population, task.episode, env_rng);
    logs.push_back(run_episode(policy_, env, act_rng));
  }
  return logs;
}

std::vector<EpisodeLog> StaticAgent::train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) {
  std::vector<EpisodeLog> logs;
  for (std::size_t i = 0; i < n; ++i) {
    Episode env = Episode::reset(*task.corpus, task.population, task.episode, env_rng);
    logs.push_back(run_episode(*policy_, env, act_rng));
  }
  return logs;
}

double evaluate_policy(Policy& policy, const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng,
                       std::vector<EpisodeLog>* logs) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Episode env = Episode::reset(*task.corpus, task.population, task.episode, env_rng);
    const auto log = run_episode(policy, env, act_rng);
    sum += log.total_return;
    if (logs) logs->push_back(log);
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

FinetuneResult run_finetune(Agent& agent, const Task& task, const FinetuneProtocol& protocol, std::uint64_t seed) {
  FinetuneResult res;
  for (std::size_t epoch = 1; epoch <= protocol.epochs; ++epoch) {
    Rng env_rng(derive_seed(seed, 0x7472, epoch)), act_rng(derive_seed(seed, 0x6163, epoch));
    const auto logs = agent.train_epoch(task, protocol.episodes_per_collect, env_rng, act_rng);
    EpochPoint p;
    p.epoch = epoch;
    p.n_train = logs.size();
    for (const auto& l : logs) p.train_mean += l.total_return;
    if (p.n_train) p.train_mean /= static_cast<double>(p.n_train);

    Rng test_env(derive_seed(seed, 0x7465, epoch)), test_act(derive_seed(seed, 0x7461, epoch));
    agent.begin_evaluation();
    p.test_mean = evaluate_policy(agent.evaluation_policy(), task, protocol.eval_episodes, test_env, test_act,
                                  &res.test_logs);
    agent.end_evaluation();
    p.n_test = protocol.eval_episodes;
    res.curve.push_back(p);
  }
  return res;
}

}  // namespace pathforge
