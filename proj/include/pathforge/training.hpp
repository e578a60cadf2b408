#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pathforge/layers.hpp"
#include "pathforge/policy.hpp"
#include "pathforge/recommender.hpp"
#include "pathforge/student_env.hpp"

namespace pathforge {

/// One environment family: a corpus, its population and episode settings.
struct Task {
  const Corpus* corpus = nullptr;
  std::shared_ptr<const BipartiteGraph> graph;
  PopulationConfig population;
  EpisodeConfig episode;
};

Task make_task(const Corpus& corpus, const PopulationConfig& pop, const EpisodeConfig& ep);
Task make_task(Corpus&&, const PopulationConfig&, const EpisodeConfig&) = delete;  // tasks keep a pointer

/// Zero-prior tasks on chain corpora, horizon = number of documents,
/// unweighted reward, fixed horizon.
std::vector<Task> sequential_tasks(const std::vector<Corpus>& corpora);
std::vector<Task> sequential_tasks(std::vector<Corpus>&&) = delete;

/// Grid task of the fine-tuning protocol: horizon 11, weighted reward.
Task grid_task(const Corpus& grid, PriorScenario scenario);
Task grid_task(Corpus&&, PriorScenario) = delete;

struct TrainConfig {
  double lr = 1e-4;
  double gamma = 0.7;
  double entropy_coef = 0.01;
  std::size_t batch_size = 8;  // graphs per minibatch
  std::size_t repeat_per_collect = 15;
  std::optional<std::size_t> steps_per_collect = 1024;
  std::optional<std::size_t> episodes_per_collect;
  std::size_t total_steps = 25 * 1024;  // step-budget training
  std::size_t epochs = 10;              // episode-budget training
  std::size_t eval_episodes = 20;
  bool standardize_returns = false;  // batch mean/sd of the returns
  ActMode eval_mode = ActMode::Greedy;

  void validate() const;
  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
};

struct Transition {
  const Task* task = nullptr;
  std::vector<int> feedback;  // observation before acting
  int action = 0;
  double reward = 0.0;
  double log_prob = 0.0;
};

struct Trajectory {
  std::vector<Transition> steps;
  EpisodeLog log;
  bool truncated = false;  // cut by a step budget before the episode ended
};

/// G_t = r_t + gamma G_{t+1}.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);
/// (x - mean) / sd; all zeros when the values do not vary.
std::vector<double> standardize(std::span<const double> x);

struct CollectBudget {
  std::size_t steps = 0;
  std::size_t episodes = 0;
  static CollectBudget of_steps(std::size_t n) { return {n, 0}; }
  static CollectBudget of_episodes(std::size_t n) { return {0, n}; }
};

/// Rolls out the sampling policy. Students and tasks are drawn from
/// `env_rng`, actions from `act_rng`. A step budget is met exactly; the
/// episode running when it is reached is marked truncated.
std::vector<Trajectory> collect(Recommender& model, const std::vector<Task>& tasks, CollectBudget budget,
                                Rng& env_rng, Rng& act_rng);

/// Mean undiscounted return of the episodes that ran to completion.
double mean_complete_return(const std::vector<Trajectory>& trajectories, std::size_t* n_complete = nullptr);

struct UpdateStats {
  double loss = 0.0;
  double entropy = 0.0;
  std::size_t updates = 0;
};

/// REINFORCE with an entropy bonus: repeat_per_collect passes over shuffled
/// minibatches of batch_size transitions, one optimizer step each.
UpdateStats reinforce_update(Recommender& model, ad::Adam& opt, const std::vector<Trajectory>& trajectories,
                             const TrainConfig& cfg, Rng& rng);

// --- imitation -------------------------------------------------------------

struct LabeledState {
  const Task* task = nullptr;
  std::vector<int> feedback;
  int label = 0;
};

/// States visited by the oracle on zero-prior students, labelled with the
/// oracle's next document.
std::vector<LabeledState> oracle_dataset(const std::vector<Task>& tasks, Rng& rng, std::size_t episodes_per_task = 1);

/// Cross-entropy towards the oracle label over one minibatch (one optimizer step).
double imitation_update(Recommender& model, ad::Adam& opt, std::span<const LabeledState> batch);
double imitation_loss(Recommender& model, std::span<const LabeledState> batch);
/// Fraction of states where the greedy action equals the label.
double agreement(Recommender& model, std::span<const LabeledState> data);

struct ImitationConfig {
  double lr = 1e-3;
  std::size_t batch_size = 8;
  double target_agreement = 0.99;
  std::size_t max_steps = 25000;
};

struct CurvePoint {
  std::string phase;
  std::size_t step = 0;
  double mean_return = 0.0;
  std::size_t n_episodes = 0;
};

struct ImitationResult {
  std::size_t steps = 0;
  double train_agreement = 0.0;
  std::vector<CurvePoint> curve;
};

ImitationResult train_imitation(Recommender& model, const std::vector<Task>& tasks, const ImitationConfig& cfg,
                                std::uint64_t seed);

// --- pre-training ----------------------------------------------------------

struct PretrainConfig {
  ImitationConfig imitation;
  TrainConfig rl = TrainConfig::pretrain_defaults();
  bool run_rl = true;
};

struct PretrainResult {
  ImitationResult imitation;
  std::vector<CurvePoint> curve;  // imitation rows then one rl row per collect
};

PretrainResult pretrain(Recommender& model, const std::vector<Task>& tasks, const PretrainConfig& cfg,
                        std::uint64_t seed);

/// Stage-2 REINFORCE alone, starting from the model's current weights.
std::vector<CurvePoint> pretrain_rl(Recommender& model, const std::vector<Task>& tasks, const TrainConfig& cfg,
                                    std::uint64_t seed);

// --- feedback prediction ---------------------------------------------------

/// Linear map from document embeddings to 3 feedback logits. Kept outside the
/// recommender so that policy checkpoints stay architecture-identical.
class FeedbackHead {
 public:
  FeedbackHead(std::size_t hidden, std::uint64_t seed);
  ad::Var operator()(ad::Tape& tape, ad::Var doc_embeddings) { return linear_(tape, doc_embeddings); }
  void collect(ad::ParameterList& out) { linear_.collect(out); }

 private:
  ad::Linear linear_;
};

/// A state plus the feedback every document would receive in it.
struct FeedbackExample {
  const Task* task = nullptr;
  std::vector<int> feedback;
  std::vector<std::size_t> targets;  // Feedback value per document
};

/// States from rollouts of a uniform-random policy and of the oracle on
/// zero-prior students.
std::vector<FeedbackExample> feedback_dataset(const std::vector<Task>& tasks, std::size_t random_episodes_per_task,
                                              Rng& rng);

struct FeedbackPredictionConfig {
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t steps = 3000;
  std::size_t random_episodes_per_task = 8;
};

struct FeedbackPredictionResult {
  std::size_t steps = 0;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
};

double feedback_accuracy(Recommender& model, FeedbackHead& head, std::span<const FeedbackExample> data);

FeedbackPredictionResult pretrain_feedback_prediction(Recommender& model, const std::vector<Task>& tasks,
                                                      const FeedbackPredictionConfig& cfg, std::uint64_t seed);

// --- fine-tuning protocol ----------------------------------------------------

/// A learner plugged into the fine-tuning protocol.
class Agent {
 public:
  virtual ~Agent() = default;
  /// Runs `n` training sessions on `task` and learns from them.
  virtual std::vector<EpisodeLog> train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) = 0;
  /// Frozen policy used for the test sessions.
  virtual Policy& evaluation_policy() = 0;
  virtual void begin_evaluation() {}
  virtual void end_evaluation() {}
};

/// REINFORCE-trained graph recommender.
class GnnAgent : public Agent {
 public:
  GnnAgent(Recommender& model, const TrainConfig& cfg, std::uint64_t seed);
  std::vector<EpisodeLog> train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) override;
  Policy& evaluation_policy() override { return eval_; }
  const UpdateStats& last_update() const { return last_; }

 private:
  Recommender& model_;
  TrainConfig cfg_;
  ad::Adam opt_;
  Rng update_rng_;
  GnnPolicy eval_;
  UpdateStats last_;
};

/// Online bandit: learns during training sessions, frozen during tests.
class CmabAgent : public Agent {
 public:
  explicit CmabAgent(CmabConfig cfg = {}) : policy_(cfg) {}
  std::vector<EpisodeLog> train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) override;
  Policy& evaluation_policy() override { return policy_; }
  void begin_evaluation() override { policy_.set_learning(false); }
  void end_evaluation() override { policy_.set_learning(true); }

 private:
  CmabPolicy policy_;
};

/// Non-learning policy (random, oracle).
class StaticAgent : public Agent {
 public:
  explicit StaticAgent(std::unique_ptr<Policy> policy) : policy_(std::move(policy)) {}
  std::vector<EpisodeLog> train_epoch(const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng) override;
  Policy& evaluation_policy() override { return *policy_; }

 private:
  std::unique_ptr<Policy> policy_;
};

struct EpochPoint {
  std::size_t epoch = 0;  // 1-based
  double train_mean = 0.0;
  std::size_t n_train = 0;
  double test_mean = 0.0;
  std::size_t n_test = 0;
};

struct FinetuneProtocol {
  std::size_t epochs = 10;
  std::size_t episodes_per_collect = 5;
  std::size_t eval_episodes = 20;
};

struct FinetuneResult {
  std::vector<EpochPoint> curve;
  std::vector<EpisodeLog> test_logs;  // all test sessions, epoch-major

  double final_return() const { return curve.empty() ? 0.0 : curve.back().test_mean; }
};

/// Epoch loop: train on fresh students, then evaluate on fresh test students.
/// Test students depend only on (seed, epoch), never on the policy.
FinetuneResult run_finetune(Agent& agent, const Task& task, const FinetuneProtocol& protocol, std::uint64_t seed);

/// Mean return of `policy` over `n` students of `task`.
double evaluate_policy(Policy& policy, const Task& task, std::size_t n, Rng& env_rng, Rng& act_rng,
                       std::vector<EpisodeLog>* logs = nullptr);

}  // namespace pathforge
