#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pathforge/corpus.hpp"

namespace fixtures {

using namespace pathforge;

inline std::filesystem::path source_dir() { return PATHFORGE_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }

/// Removes itself on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::mt19937_64 salt(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("pathforge-test-" + std::to_string(salt()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline EmbeddingStore store_for(const std::vector<std::vector<std::string>>& assignment, std::size_t dim = 8) {
  std::vector<std::string> tokens;
  for (const auto& doc : assignment) tokens.insert(tokens.end(), doc.begin(), doc.end());
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return EmbeddingStore::synthetic(tokens, dim);
}

/// Chain where doc i carries keywords w<i> and w<i+1>.
inline std::vector<std::vector<std::string>> chain_keywords(std::size_t n) {
  std::vector<std::vector<std::string>> kw;
  for (std::size_t i = 0; i < n; ++i) kw.push_back({"w" + std::to_string(i), "w" + std::to_string(i + 1)});
  return kw;
}

inline Corpus chain(std::size_t n, std::size_t dim = 8) {
  const auto kw = chain_keywords(n);
  return build_sequential_corpus(n, kw, store_for(kw, dim), "chain" + std::to_string(n));
}

inline std::vector<std::vector<std::string>> grid_keywords(int columns) {
  std::vector<std::vector<std::string>> kw;
  for (int c = 0; c < columns; ++c) kw.push_back({"g" + std::to_string(c), "g" + std::to_string(c + 1), "m" + std::to_string(c)});
  for (int c = 0; c < columns; ++c) kw.push_back({"t" + std::to_string(c), "t" + std::to_string(c + 1), "m" + std::to_string(c)});
  return kw;
}

inline Corpus grid(const GridCorpusSpec& spec = {}, std::size_t dim = 8) {
  const auto kw = grid_keywords(spec.columns);
  return build_grid_corpus(spec, store_for(kw, dim), kw);
}

}  // namespace fixtures
