#include "pathforge/recommender.hpp"

#include <algorithm>

namespace pathforge {

using ad::Matrix;
using ad::Var;

std::vector<int> latest_feedback(std::size_t n_docs, const std::vector<EpisodeStep>& history) {
  std::vector<int> fb(n_docs, 0);
  for (const auto& s : history) {
    if (s.doc < 0 || static_cast<std::size_t>(s.doc) >= n_docs)
      throw UsageError("history references invalid document " + std::to_string(s.doc));
    fb[s.doc] = feedback_class(s.feedback);
  }
  return fb;
}

std::shared_ptr<const BipartiteGraph> make_bipartite_graph(const Corpus& corpus) {
  auto g = std::make_shared<BipartiteGraph>();
  g->corpus = &corpus;
  g->n_docs = corpus.n_docs();
  g->n_keywords = corpus.n_keywords();
  const std::size_t dim = corpus.embedding_dim();
  if (g->n_docs == 0) throw CorpusError("corpus '" + corpus.name + "' has no documents");

  g->keyword_features = Matrix(g->n_keywords, dim);
  for (std::size_t w = 0; w < g->n_keywords; ++w) {
    if (corpus.embeddings[w].size() != dim) throw CorpusError("keyword '" + corpus.keywords[w] + "' has wrong dimension");
    std::copy(corpus.embeddings[w].begin(), corpus.embeddings[w].end(), g->keyword_features.row(w).begin());
  }

  g->doc_features = Matrix(g->n_docs, dim);
  std::vector<std::pair<std::size_t, std::size_t>> d2w, w2d;
  for (const auto& doc : corpus.docs) {
    if (doc.keywords.empty())
      throw CorpusError("document " + std::to_string(doc.id) + " of corpus '" + corpus.name + "' has no keywords");
    auto row = g->doc_features.row(doc.id);
    for (int w : doc.keywords) {
      g->edges.emplace_back(doc.id, w);
      d2w.emplace_back(doc.id, w);
      w2d.emplace_back(w, doc.id);
      const auto kw = g->keyword_features.row(w);
      for (std::size_t k = 0; k < dim; ++k) row[k] += kw[k];
    }
    for (auto& x : row) x /= static_cast<double>(doc.keywords.size());
  }
  g->doc_to_kw = ad::Adjacency::from_edges(g->n_docs, g->n_keywords, d2w);
  g->kw_to_doc = ad::Adjacency::from_edges(g->n_keywords, g->n_docs, w2d);
  return g;
}

Matrix BipartiteState::feedback_onehot() const {
  Matrix m(feedback.size(), kFeedbackClasses);
  for (std::size_t d = 0; d < feedback.size(); ++d) m(d, static_cast<std::size_t>(feedback[d])) = 1.0;
  return m;
}

BipartiteState build_state(std::shared_ptr<const BipartiteGraph> graph, const std::vector<EpisodeStep>& history) {
  const std::size_t n = graph->n_docs;
  return {std::move(graph), latest_feedback(n, history)};
}

BipartiteState build_state(const Corpus& corpus, const std::vector<EpisodeStep>& history) {
  return build_state(make_bipartite_graph(corpus), history);
}

void RecommenderConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0)
    throw ConfigError("hidden dimension " + std::to_string(hidden) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  if (embedding_dim == 0) throw ConfigError("embedding dimension must be positive");
}

std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;  // rounding left u above the total mass
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------

const ForwardContext::Prefix& ForwardContext::prefix(const BipartiteGraph& g) {
  auto it = prefixes_.find(&g);
  if (it != prefixes_.end()) return it->second;
  Recommender& m = model_;
  Var kw1 = m.input_(tape_, tape_.constant(g.keyword_features));
  Var doc1 = m.input_(tape_, tape_.constant(g.doc_features));
  Var kw2 = ad::elu(m.conv1_(tape_, doc1, kw1, g.doc_to_kw));
  Var doc2 = ad::elu(m.conv2_(tape_, kw2, doc1, g.kw_to_doc));
  Prefix p{doc1, kw2, doc2, m.conv3_.destination_terms(tape_, kw2)};
  return prefixes_.emplace(&g, p).first->second;
}

PolicyOutput ForwardContext::operator()(const BipartiteState& state) {
  const BipartiteGraph& g = *state.graph;
  if (state.feedback.size() != g.n_docs) throw UsageError("feedback vector does not match the graph");
  Recommender& m = model_;
  if (g.keyword_features.cols() != m.cfg_.embedding_dim)
    throw ad::ShapeError("corpus embeddings have dimension " + std::to_string(g.keyword_features.cols()) +
                         ", model expects " + std::to_string(m.cfg_.embedding_dim));
  const Prefix& p = prefix(g);

  // MLP of a one-hot row equals the matching row of MLP(I), so the feedback
  // embedding is a selection from a 4-row table.
  if (!feedback_table_.valid()) {
    Matrix eye(kFeedbackClasses, kFeedbackClasses);
    for (std::size_t i = 0; i < kFeedbackClasses; ++i) eye(i, i) = 1.0;
    feedback_table_ = m.feedback_mlp_(tape_, tape_.constant(std::move(eye)));
  }
  Var gate = ad::matmul(tape_.constant(state.feedback_onehot()), feedback_table_);
  Var doc3 = ad::hadamard(p.doc2, gate);
  Var kw3 = ad::elu(m.conv3_(tape_, doc3, p.kw3_terms, g.doc_to_kw));
  Var doc4 = ad::elu(m.conv4_(tape_, kw3, doc3, g.kw_to_doc));
  Var logits = m.head_(tape_, doc4);
  Var log_probs = ad::log_softmax(logits, 0);
  return {logits, log_probs, ad::exp(log_probs), doc4, kw3};
}

// ---------------------------------------------------------------------------

Recommender::Recommender(const RecommenderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, 0x6e6e));
  const std::size_t h = cfg_.hidden;
  input_ = ad::Linear("input", cfg_.embedding_dim, h, rng);
  conv1_ = ad::TransformerConv("conv1", h, cfg_.heads, rng, cfg_.attention);
  conv2_ = ad::TransformerConv("conv2", h, cfg_.heads, rng, cfg_.attention);
  conv3_ = ad::TransformerConv("conv3", h, cfg_.heads, rng, cfg_.attention);
  conv4_ = ad::TransformerConv("conv4", h, cfg_.heads, rng, cfg_.attention);
  feedback_mlp_ = ad::Mlp2("feedback_mlp", kFeedbackClasses, h, h, rng);
  head_ = ad::Linear("head", h, 1, rng);
}

ad::ParameterList Recommender::parameters() {
  ad::ParameterList out;
  input_.collect(out);
  conv1_.collect(out);
  conv2_.collect(out);
  conv3_.collect(out);
  conv4_.collect(out);
  feedback_mlp_.collect(out);
  head_.collect(out);
  return out;
}

std::size_t Recommender::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

std::vector<double> Recommender::probabilities(const BipartiteState& state) {
  ad::Tape tape;
  ForwardContext ctx(tape, *this);
  const auto& v = ctx(state).probs.value();
  return {v.data().begin(), v.data().end()};
}

int Recommender::act(const BipartiteState& state, ActMode mode, Rng& rng) {
  const auto probs = probabilities(state);
  return static_cast<int>(mode == ActMode::Greedy ? argmax_lowest(probs) : sample_categorical(probs, rng));
}

namespace {

Matrix config_tensor(const RecommenderConfig& c) {
  return Matrix(1, 4,
                {static_cast<double>(c.hidden), static_cast<double>(c.heads), static_cast<double>(c.embedding_dim),
                 c.attention == ad::AttentionKind::Additive ? 1.0 : 0.0});
}

}  // namespace

void Recommender::save(const std::filesystem::path& path) {
  auto tensors = ad::snapshot(parameters());
  tensors.push_back({"meta.config", config_tensor(cfg_)});
  ad::save_tensors(path, tensors);
}

void Recommender::load(const std::filesystem::path& path) {
  const auto tensors = ad::load_tensors(path);
  auto meta = std::find_if(tensors.begin(), tensors.end(), [](const auto& t) { return t.name == "meta.config"; });
  if (meta == tensors.end()) throw ad::CheckpointError(path.string() + ": missing model configuration");
  if (!(meta->value == config_tensor(cfg_)))
    throw ad::CheckpointError(path.string() + ": checkpoint was written for a different model configuration");
  ad::assign_parameters(tensors, parameters());
}

void Recommender::copy_from(Recommender& other) {
  if (!(other.cfg_ == cfg_)) throw UsageError("copy_from between differently configured recommenders");
  ad::assign_parameters(ad::snapshot(other.parameters()), parameters());
}

}  // namespace pathforge
