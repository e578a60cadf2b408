#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pathforge/common.hpp"

namespace pathforge {

struct KnowledgeComponent {
  int id = 0;
  std::string label;
  double value = 1.0;  // reward weight

  bool operator==(const KnowledgeComponent&) const = default;
};

struct Document {
  int id = 0;
  std::vector<int> teaches;   // KC ids, sorted
  std::vector<int> keywords;  // keyword ids into Corpus::keywords, sorted

  bool operator==(const Document&) const = default;
};

enum class CorpusKind { Sequential, Graph };

std::string_view to_string(CorpusKind kind);
CorpusKind corpus_kind_from_string(std::string_view s);

using Edge = std::pair<int, int>;

/// Position of the KCs of a grid corpus. Row 0 is the non-CS angle, row 1 the
/// major concept, row 2 the CS angle.
struct GridLayout {
  int columns = 0;
  int background = -1;  // -1 when the grid has no background KC
  double pref_edge_prob = 0.3;

  int kc(int row, int col) const { return row * columns + col; }
  int non_cs_doc(int col) const { return col; }
  int cs_doc(int col) const { return columns + col; }

  bool operator==(const GridLayout&) const = default;
};

/// Keyword token -> embedding vector. Unknown lookups throw.
class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim = 100) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  bool contains(const std::string& token) const { return vectors_.count(token) != 0; }

  void add(const std::string& token, std::vector<double> vec);
  const std::vector<double>& at(const std::string& token) const;

  const std::map<std::string, std::vector<double>>& vectors() const { return vectors_; }

  /// Unit-norm Gaussian vector seeded by the token's hash.
  static std::vector<double> synthetic_vector(std::string_view token, std::size_t dim);

  /// Store where every token gets its synthetic vector.
  static EmbeddingStore synthetic(const std::vector<std::string>& tokens, std::size_t dim);

 private:
  std::size_t dim_;
  std::map<std::string, std::vector<double>> vectors_;
};

/// Reads "token f1 f2 ... fdim" records. When `dim` is not given it is taken
/// from the first record.
EmbeddingStore load_embeddings(const std::filesystem::path& path, std::optional<std::size_t> dim = {});
void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& path);

struct Corpus {
  std::string name;
  CorpusKind kind = CorpusKind::Sequential;
  std::vector<KnowledgeComponent> kcs;
  std::vector<Document> docs;
  std::vector<Edge> prereq_edges;
  std::vector<std::string> keywords;            // keyword id -> token
  std::vector<std::vector<double>> embeddings;  // keyword id -> vector
  std::optional<GridLayout> grid;

  std::size_t n_kcs() const { return kcs.size(); }
  std::size_t n_docs() const { return docs.size(); }
  std::size_t n_keywords() const { return keywords.size(); }
  std::size_t embedding_dim() const { return embeddings.empty() ? 0 : embeddings.front().size(); }

  bool operator==(const Corpus&) const = default;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  bool mentions(std::string_view needle) const;
};

ValidationReport validate_corpus(const Corpus& corpus);

/// Kahn ordering of `n` nodes; empty optional when the edges contain a cycle.
std::optional<std::vector<int>> topological_order(std::size_t n, const std::vector<Edge>& edges);

/// Chain corpus: doc i teaches {k_i}, prerequisites k_0 -> k_1 -> ... -> k_{n-1}.
/// `keyword_assignment[i]` lists the keyword tokens of doc i.
Corpus build_sequential_corpus(std::size_t n_docs, const std::vector<std::vector<std::string>>& keyword_assignment,
                               const EmbeddingStore& store, std::string name = "sequential");

struct GridCorpusSpec {
  int columns = 11;
  int rows = 3;
  double pref_edge_prob = 0.3;
  bool background_kc = true;

  void validate() const;
};

/// 3-row grid corpus. `keyword_assignment` has 2*columns entries: the non-CS
/// documents of columns 0..columns-1 followed by the CS documents.
Corpus build_grid_corpus(const GridCorpusSpec& spec, const EmbeddingStore& store,
                         const std::vector<std::vector<std::string>>& keyword_assignment, std::string name = "grid");

Corpus load_corpus(const std::filesystem::path& path, const EmbeddingStore& store);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

std::string corpus_to_json_string(const Corpus& corpus);
Corpus corpus_from_json_string(std::string_view text, const EmbeddingStore& store, const std::string& origin = "<memory>");

}  // namespace pathforge
