#include "pathforge/student_env.hpp"

#include <algorithm>
#include <cmath>

namespace pathforge {

std::string_view to_string(Feedback f) {
  switch (f) {
    case Feedback::TooHard: return "too_hard";
    case Feedback::RightLevel: return "right_level";
    case Feedback::TooEasy: return "too_easy";
  }
  return "?";
}

Feedback feedback_from_string(std::string_view s) {
  if (s == "too_hard") return Feedback::TooHard;
  if (s == "right_level") return Feedback::RightLevel;
  if (s == "too_easy") return Feedback::TooEasy;
  throw ParseError("<feedback>", 0, "unknown feedback '" + std::string(s) + "'");
}

std::string_view to_string(PriorScenario s) {
  switch (s) {
    case PriorScenario::None: return "none";
    case PriorScenario::DecreasingExp: return "decexp";
    case PriorScenario::Uniform: return "uniform";
  }
  return "?";
}

PriorScenario scenario_from_string(std::string_view s) {
  if (s == "none") return PriorScenario::None;
  if (s == "decexp") return PriorScenario::DecreasingExp;
  if (s == "uniform") return PriorScenario::Uniform;
  throw ConfigError("invalid scenario '" + std::string(s) + "' (valid: none, decexp, uniform)");
}

double PopulationConfig::background_probability() const {
  if (background_known_prob) return *background_known_prob;
  return prior_scenario == PriorScenario::None ? 0.0 : 0.5;
}

void PopulationConfig::validate() const {
  auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in01(pref_edge_prob) || !in01(decreasing_exp_param) || !in01(background_probability()))
    throw ConfigError("population probabilities must lie in [0,1]");
  if (decreasing_exp_param == 0.0) throw ConfigError("decreasing-exponential parameter must be > 0");
}

void EpisodeConfig::validate() const {
  if (horizon < 1) throw ConfigError("episode horizon must be >= 1");
  if (!(discount >= 0.0 && discount <= 1.0)) throw ConfigError("discount must lie in [0,1]");
}

std::size_t StudentState::known_count() const {
  return static_cast<std::size_t>(std::count(knowledge.begin(), knowledge.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------

StudentGraph::StudentGraph(const Corpus& corpus, const std::vector<Edge>& pref_edges)
    : preds_(corpus.n_kcs()), reqs_(corpus.n_docs()) {
  auto add_edge = [&](Edge e) {
    auto& p = preds_[e.second];
    if (std::find(p.begin(), p.end(), e.first) == p.end()) p.push_back(e.first);
  };
  for (auto e : corpus.prereq_edges) add_edge(e);
  for (auto e : pref_edges) add_edge(e);
  for (auto& p : preds_) std::sort(p.begin(), p.end());

  for (std::size_t d = 0; d < corpus.n_docs(); ++d) {
    const auto& teaches = corpus.docs[d].teaches;
    auto& req = reqs_[d];
    for (int k : teaches)
      for (int pred : preds_[k])
        if (std::find(teaches.begin(), teaches.end(), pred) == teaches.end()) req.push_back(pred);
    std::sort(req.begin(), req.end());
    req.erase(std::unique(req.begin(), req.end()), req.end());
  }
}

std::vector<Edge> sample_preferences(const Corpus& corpus, const PopulationConfig& cfg, Rng& rng) {
  std::vector<Edge> prefs;
  if (corpus.kind == CorpusKind::Sequential || !corpus.grid) return prefs;
  const auto& g = *corpus.grid;
  for (int col = 0; col < g.columns; ++col)
    for (int row = 0; row < 2; ++row)
      if (bernoulli(rng, cfg.pref_edge_prob)) prefs.emplace_back(g.kc(row, col), g.kc(row + 1, col));
  return prefs;
}

std::vector<std::uint8_t> sample_prior_knowledge(const Corpus& corpus, const std::vector<Edge>& prefs,
                                                 const PopulationConfig& cfg, Rng& rng) {
  const std::size_t n_kc = corpus.n_kcs();
  std::vector<std::uint8_t> x(n_kc, 0);
  if (cfg.prior_scenario == PriorScenario::None) return x;

  const int background = corpus.grid ? corpus.grid->background : -1;
  if (background >= 0 && bernoulli(rng, cfg.background_probability())) x[background] = 1;

  const std::size_t max_known = n_kc - (background >= 0 ? 1 : 0);
  std::size_t target = 0;
  if (cfg.prior_scenario == PriorScenario::Uniform) {
    target = std::uniform_int_distribution<std::size_t>(0, max_known)(rng);
  } else {
    // Truncated geometric: P(n) ∝ p (1-p)^n on {0..max_known}.
    const double p = cfg.decreasing_exp_param;
    std::vector<double> w(max_known + 1);
    for (std::size_t n = 0; n <= max_known; ++n) w[n] = p * std::pow(1.0 - p, static_cast<double>(n));
    target = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
  }

  const StudentGraph graph(corpus, prefs);
  std::vector<int> candidates;
  for (std::size_t known = 0; known < target; ++known) {
    candidates.clear();
    for (std::size_t k = 0; k < n_kc; ++k) {
      if (x[k] || static_cast<int>(k) == background) continue;
      const auto& preds = graph.predecessors(static_cast<int>(k));
      if (std::all_of(preds.begin(), preds.end(), [&](int p) { return x[p] == 1; }))
        candidates.push_back(static_cast<int>(k));
    }
    if (candidates.empty()) break;
    x[candidates[uniform_index(rng, candidates.size())]] = 1;
  }
  return x;
}

std::vector<int> doc_requirements(const Corpus& corpus, const Document& doc, const std::vector<Edge>& prefs) {
  return StudentGraph(corpus, prefs).requirements(doc.id);
}

bool mastery(const StudentState& s, std::span<const int> kcs) {
  return std::all_of(kcs.begin(), kcs.end(), [&](int k) { return s.knowledge[k] == 1; });
}

bool is_closed(const Corpus& corpus, const StudentState& s) {
  const StudentGraph graph(corpus, s.pref_edges);
  for (std::size_t k = 0; k < corpus.n_kcs(); ++k) {
    if (!s.knowledge[k]) continue;
    for (int p : graph.predecessors(static_cast<int>(k)))
      if (!s.knowledge[p]) return false;
  }
  return true;
}

namespace {

Feedback observe_with(const StudentState& s, const Document& doc, std::span<const int> requirements) {
  const bool ready = mastery(s, requirements);
  const bool known = mastery(s, doc.teaches);
  if (!ready && known)
    throw std::logic_error("knowledge state violates prerequisite closure at document " + std::to_string(doc.id));
  if (!ready) return Feedback::TooHard;
  if (known) return Feedback::TooEasy;
  return Feedback::RightLevel;
}

}  // namespace

Feedback observe(const Corpus& corpus, const StudentState& s, const Document& doc) {
  const auto req = doc_requirements(corpus, doc, s.pref_edges);
  return observe_with(s, doc, req);
}

StudentState transition(const Corpus& corpus, const StudentState& s, const Document& doc) {
  StudentState next = s;
  if (observe(corpus, s, doc) == Feedback::RightLevel)
    for (int k : doc.teaches) next.knowledge[k] = 1;
  return next;
}

double reward(const StudentState& before, const StudentState& after, const Corpus& corpus, bool weighted) {
  double r = 0.0;
  for (std::size_t k = 0; k < before.knowledge.size(); ++k) {
    const int delta = static_cast<int>(after.knowledge[k]) - static_cast<int>(before.knowledge[k]);
    if (weighted)
      r += corpus.kcs[k].value * delta;
    else
      r += std::abs(delta);
  }
  return r;
}

// ---------------------------------------------------------------------------

Episode Episode::reset(const Corpus& corpus, const PopulationConfig& pop, const EpisodeConfig& ep, Rng& rng) {
  pop.validate();
  StudentState s;
  s.pref_edges = sample_preferences(corpus, pop, rng);
  s.knowledge = sample_prior_knowledge(corpus, s.pref_edges, pop, rng);
  return Episode(corpus, std::move(s), ep);
}

Episode::Episode(const Corpus& corpus, StudentState initial, const EpisodeConfig& ep)
    : corpus_(&corpus), cfg_(ep), state_(std::move(initial)), graph_(corpus, state_.pref_edges) {
  cfg_.validate();
  if (state_.knowledge.size() != corpus.n_kcs()) throw UsageError("initial knowledge vector has wrong length");
  if (cfg_.early_stop && !any_learnable()) done_ = true;
}

bool Episode::learnable(int doc) const {
  const auto& d = corpus_->docs[doc];
  return mastery(state_, graph_.requirements(doc)) && !mastery(state_, d.teaches);
}

double Episode::gain(int doc) const {
  if (!learnable(doc)) return 0.0;
  double g = 0.0;
  for (int k : corpus_->docs[doc].teaches)
    if (!state_.knowledge[k]) g += cfg_.weighted_reward ? corpus_->kcs[k].value : 1.0;
  return g;
}

bool Episode::any_learnable() const {
  for (std::size_t d = 0; d < corpus_->n_docs(); ++d)
    if (learnable(static_cast<int>(d))) return true;
  return false;
}

StepResult Episode::step(int doc) {
  if (done_) throw UsageError("step called on a finished episode");
  if (doc < 0 || static_cast<std::size_t>(doc) >= corpus_->n_docs())
    throw UsageError("invalid document id " + std::to_string(doc));
  const auto& d = corpus_->docs[doc];
  const Feedback fb = observe_with(state_, d, graph_.requirements(doc));
  double r = 0.0;
  if (fb == Feedback::RightLevel) {
    const StudentState before = state_;
    for (int k : d.teaches) state_.knowledge[k] = 1;
    r = reward(before, state_, *corpus_, cfg_.weighted_reward);
  }
  log_.steps.push_back({doc, fb, r});
  log_.total_return += r;
  done_ = t() >= cfg_.horizon || (cfg_.early_stop && !any_learnable());
  return {fb, r, done_};
}

}  // namespace pathforge
