#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pathforge/corpus.hpp"

namespace pathforge {

/// Parameters of the synthetic stand-in world: a shared keyword vocabulary
/// with embeddings, a collection of chain courses and one grid course.
///
/// Every keyword has a depth in [0,1] and belongs to the "general" or the
/// "technical" family. Its embedding mixes a token-specific Gaussian part, a
/// smooth function of depth and a family direction, so that documents of
/// similar level and angle have similar features.
struct SyntheticWorldConfig {
  std::uint64_t seed = 2024;
  std::size_t dim = 100;
  std::size_t general_keywords = 300;
  std::size_t technical_keywords = 200;
  std::size_t sequential_corpora = 14;
  std::size_t min_docs = 6;
  std::size_t max_docs = 18;
  std::size_t min_keywords_per_doc = 3;
  std::size_t max_keywords_per_doc = 8;
  double token_weight = 0.6;
  double depth_weight = 0.6;
  double family_weight = 0.3;
  GridCorpusSpec grid;
};

struct SyntheticKeyword {
  std::string token;
  double depth = 0.0;
  bool technical = false;
};

struct SyntheticWorld {
  EmbeddingStore store;
  std::vector<SyntheticKeyword> vocabulary;
  std::vector<Corpus> sequential;
  Corpus grid;
};

SyntheticWorld generate_world(const SyntheticWorldConfig& cfg = {});

/// Layout under `dir`: embeddings.txt, sequential/<name>.json, grid.json.
/// Only keywords used by some corpus are written to embeddings.txt.
void write_world(const SyntheticWorld& world, const std::filesystem::path& dir);

struct LoadedWorld {
  EmbeddingStore store;
  std::vector<Corpus> sequential;
  Corpus grid;
};

LoadedWorld load_world(const std::filesystem::path& dir);

/// Data root: $PATHFORGE_DATA_DIR when set, otherwise `fallback`.
std::filesystem::path data_root(const std::filesystem::path& fallback);

}  // namespace pathforge
