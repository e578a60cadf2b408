#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "pathforge/corpus.hpp"

namespace pathforge {

enum class Feedback : std::uint8_t { TooHard = 0, RightLevel = 1, TooEasy = 2 };

std::string_view to_string(Feedback f);
Feedback feedback_from_string(std::string_view s);

enum class PriorScenario { None, DecreasingExp, Uniform };

std::string_view to_string(PriorScenario s);
/// Accepts "none", "decexp" and "uniform".
PriorScenario scenario_from_string(std::string_view s);

struct PopulationConfig {
  PriorScenario prior_scenario = PriorScenario::None;
  double pref_edge_prob = 0.3;
  double decreasing_exp_param = 0.25;
  // Defaults to 0 for the None scenario and 0.5 otherwise.
  std::optional<double> background_known_prob;

  double background_probability() const;
  void validate() const;
};

struct EpisodeConfig {
  int horizon = 11;
  double discount = 0.0;
  bool weighted_reward = true;
  bool early_stop = false;  // stop when no document is learnable

  void validate() const;
};

/// Hidden POMDP state: knowledge vector plus the student's preference edges.
struct StudentState {
  std::vector<std::uint8_t> knowledge;
  std::vector<Edge> pref_edges;

  std::size_t known_count() const;
  bool operator==(const StudentState&) const = default;
};

/// Direct predecessors under E_prereq ∪ E_pref and the requirement set of
/// every document, precomputed for one student.
class StudentGraph {
 public:
  StudentGraph(const Corpus& corpus, const std::vector<Edge>& pref_edges);

  const std::vector<int>& predecessors(int kc) const { return preds_[kc]; }
  const std::vector<int>& requirements(int doc) const { return reqs_[doc]; }

 private:
  std::vector<std::vector<int>> preds_;
  std::vector<std::vector<int>> reqs_;
};

/// Vertical preference edges k[i][j] -> k[i+1][j]; empty for sequential corpora.
std::vector<Edge> sample_preferences(const Corpus& corpus, const PopulationConfig& cfg, Rng& rng);

std::vector<std::uint8_t> sample_prior_knowledge(const Corpus& corpus, const std::vector<Edge>& prefs,
                                                 const PopulationConfig& cfg, Rng& rng);

/// Direct predecessors of the taught KCs, minus the taught KCs themselves.
std::vector<int> doc_requirements(const Corpus& corpus, const Document& doc, const std::vector<Edge>& prefs);

/// True iff every KC of `kcs` is known (true for the empty set).
bool mastery(const StudentState& s, std::span<const int> kcs);

/// True iff every known KC has all its predecessors known.
bool is_closed(const Corpus& corpus, const StudentState& s);

Feedback observe(const Corpus& corpus, const StudentState& s, const Document& doc);
StudentState transition(const Corpus& corpus, const StudentState& s, const Document& doc);
double reward(const StudentState& before, const StudentState& after, const Corpus& corpus, bool weighted);

struct EpisodeStep {
  int doc = 0;
  Feedback feedback = Feedback::TooHard;
  double reward = 0.0;
};

struct EpisodeLog {
  std::vector<EpisodeStep> steps;
  double total_return = 0.0;  // undiscounted
};

struct StepResult {
  Feedback feedback;
  double reward;
  bool done;
};

/// One student session on one corpus. The hidden state is only reachable
/// through the environment-side accessors used by the oracle and by tests.
class Episode {
 public:
  /// Samples a student from the population (preferences, then prior knowledge).
  static Episode reset(const Corpus& corpus, const PopulationConfig& pop, const EpisodeConfig& ep, Rng& rng);

  Episode(const Corpus& corpus, StudentState initial, const EpisodeConfig& ep);

  StepResult step(int doc);

  bool done() const { return done_; }
  int t() const { return static_cast<int>(log_.steps.size()); }
  const EpisodeLog& log() const { return log_; }
  const Corpus& corpus() const { return *corpus_; }
  const EpisodeConfig& config() const { return cfg_; }

  // Environment-side access.
  const StudentState& hidden_state() const { return state_; }
  const StudentGraph& student_graph() const { return graph_; }
  bool learnable(int doc) const;
  double gain(int doc) const;  // reward the doc would yield right now
  bool any_learnable() const;

 private:
  const Corpus* corpus_;
  EpisodeConfig cfg_;
  StudentState state_;
  StudentGraph graph_;
  EpisodeLog log_;
  bool done_ = false;
};

}  // namespace pathforge
