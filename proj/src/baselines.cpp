#include <cmath>
#include <stdexcept>

#include "pathforge/policy.hpp"

namespace pathforge {

EpisodeLog run_episode(Policy& policy, Episode& env, Rng& rng) {
  policy.begin_episode(env.corpus(), policy.privileged() ? &env : nullptr);
  while (!env.done()) {
    const int doc = policy.act(env.log().steps, rng);
    const auto r = env.step(doc);
    policy.observe(doc, r.feedback, r.reward);
  }
  return env.log();
}

int oracle_act(const Episode& env) {
  int best = -1;
  double best_gain = 0.0;
  for (std::size_t d = 0; d < env.corpus().n_docs(); ++d) {
    const int doc = static_cast<int>(d);
    if (!env.learnable(doc)) continue;
    const double g = env.gain(doc);
    if (best < 0 || g > best_gain) {
      best = doc;
      best_gain = g;
    }
  }
  return best < 0 ? 0 : best;
}

void OraclePolicy::begin_episode(const Corpus&, const Episode* env) {
  if (!env) throw UsageError("the oracle needs access to the environment");
  env_ = env;
}

int OraclePolicy::act(const std::vector<EpisodeStep>&, Rng&) { return oracle_act(*env_); }

int random_act(std::size_t n_docs, Rng& rng) {
  if (n_docs == 0) throw UsageError("random_act over an empty corpus");
  return static_cast<int>(uniform_index(rng, n_docs));
}

// ---------------------------------------------------------------------------

CmabContext cmab_context(const std::vector<EpisodeStep>& history, int doc) {
  CmabContext c{1.0, 0.0, 0.0};
  for (const auto& s : history) {
    if (s.doc != doc) continue;
    c[1] += 1.0;
    if (s.feedback == Feedback::RightLevel) c[2] += 1.0;
  }
  return c;
}

CmabState CmabState::prior(double prior_precision, double noise_var) {
  if (!(prior_precision > 0.0) || !(noise_var > 0.0))
    throw ConfigError("bandit prior precision and noise variance must be positive");
  CmabState s;
  for (std::size_t i = 0; i < kCmabDim; ++i) s.precision[i][i] = prior_precision;
  s.noise_var = noise_var;
  return s;
}

CmabMatrix cholesky(const CmabMatrix& a) {
  CmabMatrix l{};
  for (std::size_t i = 0; i < kCmabDim; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      if (i == j) {
        if (!(s > 0.0)) throw std::domain_error("matrix is not positive definite");
        l[i][i] = std::sqrt(s);
      } else {
        l[i][j] = s / l[j][j];
      }
    }
  }
  return l;
}

namespace {

// Solves L y = b (forward) then L^T x = y (backward).
CmabContext forward_sub(const CmabMatrix& l, const CmabContext& b) {
  CmabContext y{};
  for (std::size_t i = 0; i < kCmabDim; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i][k] * y[k];
    y[i] = s / l[i][i];
  }
  return y;
}

CmabContext backward_sub(const CmabMatrix& l, const CmabContext& y) {
  CmabContext x{};
  for (std::size_t ii = kCmabDim; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < kCmabDim; ++k) s -= l[k][ii] * x[k];
    x[ii] = s / l[ii][ii];
  }
  return x;
}

double dot(const CmabContext& a, const CmabContext& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kCmabDim; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

CmabContext solve_spd(const CmabMatrix& a, const CmabContext& b) {
  const auto l = cholesky(a);
  return backward_sub(l, forward_sub(l, b));
}

CmabContext CmabState::posterior_mean() const { return solve_spd(precision, response); }

CmabMatrix CmabState::posterior_cov() const {
  CmabMatrix cov{};
  for (std::size_t j = 0; j < kCmabDim; ++j) {
    CmabContext e{};
    e[j] = 1.0;
    const auto col = solve_spd(precision, e);
    for (std::size_t i = 0; i < kCmabDim; ++i) cov[i][j] = col[i];
  }
  return cov;
}

namespace {

// theta = mean + L^-T z has covariance (L L^T)^-1 = B^-1.
CmabContext sample_theta(const CmabState& state, Rng& rng) {
  const auto l = cholesky(state.precision);
  std::normal_distribution<double> normal(0.0, 1.0);
  CmabContext z{};
  for (auto& v : z) v = normal(rng);
  const auto mean = backward_sub(l, forward_sub(l, state.response));
  const auto noise = backward_sub(l, z);
  CmabContext theta{};
  for (std::size_t i = 0; i < kCmabDim; ++i) theta[i] = mean[i] + noise[i];
  return theta;
}

int argmax_random_ties(const std::vector<double>& scores, Rng& rng) {
  std::vector<int> best;
  double best_score = 0.0;
  for (std::size_t a = 0; a < scores.size(); ++a) {
    if (best.empty() || scores[a] > best_score) {
      best = {static_cast<int>(a)};
      best_score = scores[a];
    } else if (scores[a] == best_score) {
      best.push_back(static_cast<int>(a));
    }
  }
  return best.size() == 1 ? best.front() : best[uniform_index(rng, best.size())];
}

}  // namespace

int cmab_act(const CmabState& state, const std::vector<CmabContext>& contexts, Rng& rng) {
  if (contexts.empty()) throw UsageError("cmab_act without arms");
  const auto theta = sample_theta(state, rng);
  std::vector<double> scores;
  for (const auto& c : contexts) scores.push_back(dot(theta, c));
  return argmax_random_ties(scores, rng);
}

void cmab_observe(CmabState& state, const CmabContext& c, double reward) {
  for (std::size_t i = 0; i < kCmabDim; ++i) {
    for (std::size_t j = 0; j < kCmabDim; ++j) state.precision[i][j] += c[i] * c[j] / state.noise_var;
    state.response[i] += reward * c[i] / state.noise_var;
  }
  ++state.updates;
}

std::string_view to_string(CmabModel m) { return m == CmabModel::Shared ? "shared" : "per_arm"; }

CmabModel cmab_model_from_string(std::string_view s) {
  if (s == "shared") return CmabModel::Shared;
  if (s == "per_arm") return CmabModel::PerArm;
  throw ConfigError("invalid bandit model '" + std::string(s) + "' (valid: shared, per_arm)");
}

void CmabPolicy::begin_episode(const Corpus& corpus, const Episode*) {
  if (states_.empty() || n_docs_ != corpus.n_docs()) {
    n_docs_ = corpus.n_docs();
    states_.assign(cfg_.model == CmabModel::Shared ? 1 : n_docs_, CmabState::prior(cfg_.prior_precision, cfg_.noise_var));
  }
}

int CmabPolicy::act(const std::vector<EpisodeStep>& history, Rng& rng) {
  std::vector<CmabContext> contexts(n_docs_);
  for (std::size_t d = 0; d < n_docs_; ++d) contexts[d] = cmab_context(history, static_cast<int>(d));
  int doc = 0;
  if (cfg_.model == CmabModel::Shared) {
    doc = cmab_act(states_.front(), contexts, rng);
  } else {
    std::vector<double> scores(n_docs_);
    for (std::size_t d = 0; d < n_docs_; ++d) scores[d] = dot(sample_theta(states_[d], rng), contexts[d]);
    doc = argmax_random_ties(scores, rng);
  }
  last_doc_ = doc;
  last_context_ = contexts[doc];
  return doc;
}

void CmabPolicy::observe(int, Feedback, double reward) {
  if (!learning_) return;
  cmab_observe(states_[cfg_.model == CmabModel::Shared ? 0 : last_doc_], last_context_, reward);
}

// ---------------------------------------------------------------------------

std::vector<double> flat_observation(std::size_t n_docs, const std::vector<EpisodeStep>& history) {
  const auto fb = latest_feedback(n_docs, history);
  std::vector<double> obs(n_docs * kFeedbackClasses, 0.0);
  for (std::size_t d = 0; d < n_docs; ++d) obs[d * kFeedbackClasses + static_cast<std::size_t>(fb[d])] = 1.0;
  return obs;
}

void GnnPolicy::begin_episode(const Corpus& corpus, const Episode*) {
  if (corpus_ != &corpus) {
    corpus_ = &corpus;
    graph_ = make_bipartite_graph(corpus);
  }
}

int GnnPolicy::act(const std::vector<EpisodeStep>& history, Rng& rng) {
  return model_.act(build_state(graph_, history), mode_, rng);
}

}  // namespace pathforge
