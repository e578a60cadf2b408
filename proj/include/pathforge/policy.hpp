#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "pathforge/recommender.hpp"
#include "pathforge/student_env.hpp"

namespace pathforge {

/// Common act/observe interface used by the harness for every policy.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// Called before each session. `env` is only handed to privileged policies
  /// (the oracle); everything else sees the feedback history alone.
  virtual void begin_episode(const Corpus& corpus, const Episode* env) = 0;
  virtual int act(const std::vector<EpisodeStep>& history, Rng& rng) = 0;
  virtual void observe(int /*doc*/, Feedback /*fb*/, double /*reward*/) {}
  virtual bool privileged() const { return false; }
};

/// Runs `env` to completion with `policy`.
EpisodeLog run_episode(Policy& policy, Episode& env, Rng& rng);

// --- oracle ---------------------------------------------------------------

/// Learnable document with the largest immediate gain, lowest id on ties;
/// document 0 when nothing is learnable.
int oracle_act(const Episode& env);

class OraclePolicy : public Policy {
 public:
  std::string name() const override { return "oracle"; }
  bool privileged() const override { return true; }
  void begin_episode(const Corpus& corpus, const Episode* env) override;
  int act(const std::vector<EpisodeStep>& history, Rng& rng) override;

 private:
  const Episode* env_ = nullptr;
};

// --- random ---------------------------------------------------------------

int random_act(std::size_t n_docs, Rng& rng);

class RandomPolicy : public Policy {
 public:
  std::string name() const override { return "random"; }
  void begin_episode(const Corpus& corpus, const Episode*) override { n_docs_ = corpus.n_docs(); }
  int act(const std::vector<EpisodeStep>&, Rng& rng) override { return random_act(n_docs_, rng); }

 private:
  std::size_t n_docs_ = 0;
};

// --- contextual Thompson-sampling bandit -----------------------------------

inline constexpr std::size_t kCmabDim = 3;
using CmabContext = std::array<double, kCmabDim>;
using CmabMatrix = std::array<std::array<double, kCmabDim>, kCmabDim>;

/// (1, times recommended, times right-level) for `doc` in this session.
CmabContext cmab_context(const std::vector<EpisodeStep>& history, int doc);

/// Bayesian linear regression shared by all arms: prior N(0, I / prior_precision)
/// on the weights, Gaussian reward noise with variance `noise_var`.
struct CmabState {
  CmabMatrix precision{};  // B = prior_precision I + sum c c^T / noise_var
  CmabContext response{};  // f = sum r c / noise_var
  double noise_var = 1.0;
  std::size_t updates = 0;

  static CmabState prior(double prior_precision = 1.0, double noise_var = 1.0);
  CmabContext posterior_mean() const;  // B^-1 f
  CmabMatrix posterior_cov() const;    // B^-1
};

/// Cholesky factor L (lower) of a symmetric positive definite 3x3 matrix.
CmabMatrix cholesky(const CmabMatrix& a);
CmabContext solve_spd(const CmabMatrix& a, const CmabContext& b);

/// Samples theta from the posterior and returns argmax theta.c; exact ties are
/// broken uniformly at random.
int cmab_act(const CmabState& state, const std::vector<CmabContext>& contexts, Rng& rng);
void cmab_observe(CmabState& state, const CmabContext& context, double reward);

/// Shared: one regression for all arms. PerArm: an independent regression per
/// document over the same context features.
enum class CmabModel { Shared, PerArm };
std::string_view to_string(CmabModel m);
CmabModel cmab_model_from_string(std::string_view s);

struct CmabConfig {
  CmabModel model = CmabModel::PerArm;
  double prior_precision = 1.0;
  double noise_var = 1.0;
};

class CmabPolicy : public Policy {
 public:
  explicit CmabPolicy(CmabConfig cfg = {}) : cfg_(cfg) {}
  std::string name() const override { return "cmab"; }
  void begin_episode(const Corpus& corpus, const Episode*) override;
  int act(const std::vector<EpisodeStep>& history, Rng& rng) override;
  void observe(int doc, Feedback fb, double reward) override;

  /// When frozen, observe() no longer updates the posterior (evaluation).
  void set_learning(bool on) { learning_ = on; }
  const std::vector<CmabState>& states() const { return states_; }

 private:
  CmabConfig cfg_;
  std::vector<CmabState> states_;
  std::size_t n_docs_ = 0;
  int last_doc_ = 0;
  CmabContext last_context_{};
  bool learning_ = true;
};

// --- flat observation for the MLP baseline -----------------------------------

/// Concatenated one-hot latest feedback per document, length n_docs * 4.
std::vector<double> flat_observation(std::size_t n_docs, const std::vector<EpisodeStep>& history);

// --- graph recommender as a policy -------------------------------------------

class GnnPolicy : public Policy {
 public:
  GnnPolicy(Recommender& model, ActMode mode, std::string name = "gnn")
      : model_(model), mode_(mode), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  void begin_episode(const Corpus& corpus, const Episode*) override;
  int act(const std::vector<EpisodeStep>& history, Rng& rng) override;

 private:
  Recommender& model_;
  ActMode mode_;
  std::string name_;
  const Corpus* corpus_ = nullptr;
  std::shared_ptr<const BipartiteGraph> graph_;
};

}  // namespace pathforge
