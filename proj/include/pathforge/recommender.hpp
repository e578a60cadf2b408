#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <vector>

#include "pathforge/corpus.hpp"
#include "pathforge/layers.hpp"
#include "pathforge/student_env.hpp"

namespace pathforge {

/// Feedback classes of the observation encoding: 0 = none, then one class per
/// Feedback value.
inline constexpr std::size_t kFeedbackClasses = 4;
inline int feedback_class(Feedback f) { return 1 + static_cast<int>(f); }

/// Latest feedback class per document; documents never recommended are 0.
std::vector<int> latest_feedback(std::size_t n_docs, const std::vector<EpisodeStep>& history);

/// Static document/keyword graph of a corpus: features and both edge
/// directions. Shared by every state built on the same corpus.
struct BipartiteGraph {
  const Corpus* corpus = nullptr;
  std::size_t n_docs = 0;
  std::size_t n_keywords = 0;
  std::vector<std::pair<int, int>> edges;  // (doc, keyword)
  ad::Matrix keyword_features;             // n_keywords x dim
  ad::Matrix doc_features;                 // n_docs x dim, mean of incident keywords
  ad::Adjacency doc_to_kw;                 // destinations are keywords
  ad::Adjacency kw_to_doc;                 // destinations are documents
};

std::shared_ptr<const BipartiteGraph> make_bipartite_graph(const Corpus& corpus);

struct BipartiteState {
  std::shared_ptr<const BipartiteGraph> graph;
  std::vector<int> feedback;  // class per document

  ad::Matrix feedback_onehot() const;  // n_docs x 4
};

BipartiteState build_state(std::shared_ptr<const BipartiteGraph> graph, const std::vector<EpisodeStep>& history);
BipartiteState build_state(const Corpus& corpus, const std::vector<EpisodeStep>& history);

struct RecommenderConfig {
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t embedding_dim = 100;
  ad::AttentionKind attention = ad::AttentionKind::DotProduct;

  void validate() const;
  bool operator==(const RecommenderConfig&) const = default;
};

enum class ActMode { Sample, Greedy };

/// Index drawn from a probability vector by inverse CDF.
std::size_t sample_categorical(std::span<const double> probs, Rng& rng);
/// Argmax with lowest-index tie-break.
std::size_t argmax_lowest(std::span<const double> values);

class Recommender;

/// Outputs of one forward pass. Column vectors have one row per document.
struct PolicyOutput {
  ad::Var logits;
  ad::Var log_probs;
  ad::Var probs;
  ad::Var doc_embeddings;  // last document layer, n_docs x hidden
  ad::Var keyword_latent;  // keyword layer after the feedback merge, n_keywords x hidden
};

/// Forward passes that share one tape. The feedback-independent part of the
/// network is evaluated once per graph and reused by every state on it.
class ForwardContext {
 public:
  ForwardContext(ad::Tape& tape, Recommender& model) : tape_(tape), model_(model) {}

  PolicyOutput operator()(const BipartiteState& state);
  ad::Tape& tape() { return tape_; }

 private:
  struct Prefix {
    ad::Var doc1;
    ad::Var kw2;
    ad::Var doc2;
    ad::TransformerConv::DestinationTerms kw3_terms;
  };
  const Prefix& prefix(const BipartiteGraph& g);

  ad::Tape& tape_;
  Recommender& model_;
  std::map<const BipartiteGraph*, Prefix> prefixes_;
  ad::Var feedback_table_;
};

/// Graph recommender: input projection, four transformer convolutions
/// alternating doc->kw / kw->doc with a feedback gate before the third, and a
/// linear scoring head followed by a softmax over documents.
class Recommender {
 public:
  explicit Recommender(const RecommenderConfig& cfg, std::uint64_t seed);
  Recommender(const Recommender&) = delete;
  Recommender& operator=(const Recommender&) = delete;

  const RecommenderConfig& config() const { return cfg_; }
  ad::ParameterList parameters();
  std::size_t parameter_count();

  /// Probabilities over documents (no gradient bookkeeping kept).
  std::vector<double> probabilities(const BipartiteState& state);
  int act(const BipartiteState& state, ActMode mode, Rng& rng);

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);
  void copy_from(Recommender& other);

 private:
  friend class ForwardContext;
  RecommenderConfig cfg_;
  ad::Linear input_;
  ad::TransformerConv conv1_;  // doc -> kw
  ad::TransformerConv conv2_;  // kw -> doc
  ad::TransformerConv conv3_;  // doc -> kw
  ad::TransformerConv conv4_;  // kw -> doc
  ad::Mlp2 feedback_mlp_;
  ad::Linear head_;
};

}  // namespace pathforge
