#include "pathforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pathforge {

using nlohmann::json;

std::string_view to_string(CorpusKind kind) { return kind == CorpusKind::Sequential ? "sequential" : "graph"; }

CorpusKind corpus_kind_from_string(std::string_view s) {
  if (s == "sequential") return CorpusKind::Sequential;
  if (s == "graph") return CorpusKind::Graph;
  throw CorpusError("unknown corpus kind '" + std::string(s) + "' (expected sequential or graph)");
}

// ---------------------------------------------------------------------------
// EmbeddingStore

void EmbeddingStore::add(const std::string& token, std::vector<double> vec) {
  if (vec.size() != dim_) {
    throw CorpusError("embedding for '" + token + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                      std::to_string(dim_));
  }
  if (!vectors_.emplace(token, std::move(vec)).second) throw CorpusError("duplicate embedding token '" + token + "'");
}

const std::vector<double>& EmbeddingStore::at(const std::string& token) const {
  auto it = vectors_.find(token);
  if (it == vectors_.end()) throw CorpusError("unknown keyword '" + token + "': no embedding in store");
  return it->second;
}

std::vector<double> EmbeddingStore::synthetic_vector(std::string_view token, std::size_t dim) {
  Rng rng(fnv1a64(token));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    norm2 += x * x;
  }
  const double inv = norm2 > 0 ? 1.0 / std::sqrt(norm2) : 0.0;
  for (auto& x : v) x *= inv;
  return v;
}

EmbeddingStore EmbeddingStore::synthetic(const std::vector<std::string>& tokens, std::size_t dim) {
  EmbeddingStore store(dim);
  for (const auto& t : tokens) {
    if (!store.contains(t)) store.add(t, synthetic_vector(t, dim));
  }
  return store;
}

EmbeddingStore load_embeddings(const std::filesystem::path& path, std::optional<std::size_t> dim) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open embedding file");
  std::optional<EmbeddingStore> store;
  if (dim) store.emplace(*dim);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;  // blank line
    std::vector<double> vec;
    std::string field;
    while (ss >> field) {
      char* end = nullptr;
      const double x = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') throw ParseError(path.string(), lineno, "not a number: '" + field + "'");
      vec.push_back(x);
    }
    if (!store) {
      if (vec.empty()) throw ParseError(path.string(), lineno, "record '" + token + "' has no values");
      store.emplace(vec.size());
    }
    if (vec.size() != store->dim()) {
      throw ParseError(path.string(), lineno,
                       "dimension mismatch: " + std::to_string(vec.size()) + " values, expected " +
                           std::to_string(store->dim()));
    }
    if (store->contains(token)) throw ParseError(path.string(), lineno, "duplicate token '" + token + "'");
    store->add(token, std::move(vec));
  }
  if (!store) store.emplace(dim.value_or(100));
  return std::move(*store);
}

void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write embedding file " + path.string());
  char buf[64];
  for (const auto& [token, vec] : store.vectors()) {
    out << token;
    for (double x : vec) {
      std::snprintf(buf, sizeof buf, " %.17g", x);
      out << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::mentions(std::string_view needle) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const std::string& v) { return v.find(needle) != std::string::npos; });
}

std::optional<std::vector<int>> topological_order(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<std::vector<int>> out(n);
  std::vector<int> indeg(n, 0);
  for (auto [a, b] : edges) {
    out[a].push_back(b);
    ++indeg[b];
  }
  std::vector<int> order;
  std::vector<int> ready;
  for (std::size_t i = n; i-- > 0;)
    if (indeg[i] == 0) ready.push_back(static_cast<int>(i));
  while (!ready.empty()) {
    const int v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (int w : out[v])
      if (--indeg[w] == 0) ready.push_back(w);
  }
  if (order.size() != n) return std::nullopt;
  return order;
}

ValidationReport validate_corpus(const Corpus& c) {
  ValidationReport r;
  auto add = [&](std::string msg) { r.violations.push_back(std::move(msg)); };
  const int n_kc = static_cast<int>(c.kcs.size());
  const int n_kw = static_cast<int>(c.keywords.size());

  for (int i = 0; i < n_kc; ++i) {
    if (c.kcs[i].id != i) add("kc ids not dense: position " + std::to_string(i) + " has id " + std::to_string(c.kcs[i].id));
    if (!(c.kcs[i].value >= 0.0)) add("kc " + std::to_string(i) + " has negative value");
  }
  bool edges_in_range = true;
  for (auto [a, b] : c.prereq_edges) {
    if (a < 0 || a >= n_kc || b < 0 || b >= n_kc) {
      add("orphan kc id in prerequisite edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
      edges_in_range = false;
    } else if (a == b) {
      add("cycle: self-loop on kc " + std::to_string(a));
    }
  }
  if (edges_in_range && !topological_order(c.kcs.size(), c.prereq_edges)) add("cycle in prerequisite graph");

  for (std::size_t i = 0; i < c.docs.size(); ++i) {
    const auto& d = c.docs[i];
    const std::string tag = "doc " + std::to_string(i);
    if (d.id != static_cast<int>(i)) add(tag + " has id " + std::to_string(d.id));
    if (d.teaches.empty()) add(tag + " has empty teaches set");
    if (d.keywords.empty()) add(tag + " has no keywords");
    for (int k : d.teaches)
      if (k < 0 || k >= n_kc) add(tag + " references orphan kc id " + std::to_string(k));
    for (int w : d.keywords)
      if (w < 0 || w >= n_kw) add(tag + " references missing keyword id " + std::to_string(w));
  }

  if (c.embeddings.size() != c.keywords.size()) {
    add("missing embedding: " + std::to_string(c.keywords.size()) + " keywords but " +
        std::to_string(c.embeddings.size()) + " embeddings");
  } else {
    const std::size_t dim = c.embedding_dim();
    for (std::size_t w = 0; w < c.embeddings.size(); ++w) {
      if (c.embeddings[w].empty() || c.embeddings[w].size() != dim)
        add("missing embedding for keyword '" + c.keywords[w] + "'");
    }
  }

  if (c.kind == CorpusKind::Sequential) {
    if (c.docs.size() != c.kcs.size()) add("sequential corpus must have one document per kc");
    std::set<Edge> expected;
    for (int i = 0; i + 1 < n_kc; ++i) expected.emplace(i, i + 1);
    if (std::set<Edge>(c.prereq_edges.begin(), c.prereq_edges.end()) != expected ||
        c.prereq_edges.size() != expected.size())
      add("sequential corpus prerequisites are not a single chain");
    for (std::size_t i = 0; i < c.docs.size(); ++i) {
      if (c.docs[i].teaches != std::vector<int>{static_cast<int>(i)})
        add("sequential doc " + std::to_string(i) + " must teach exactly kc " + std::to_string(i));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Builders

namespace {

// Registers tokens in first-appearance order and resolves their embeddings.
struct KeywordTable {
  const EmbeddingStore& store;
  Corpus& corpus;
  std::map<std::string, int> ids;

  int id(const std::string& token) {
    auto [it, inserted] = ids.emplace(token, static_cast<int>(corpus.keywords.size()));
    if (inserted) {
      corpus.keywords.push_back(token);
      corpus.embeddings.push_back(store.at(token));
    }
    return it->second;
  }

  std::vector<int> ids_of(const std::vector<std::string>& tokens) {
    std::vector<int> out;
    for (const auto& t : tokens) out.push_back(id(t));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

}  // namespace

Corpus build_sequential_corpus(std::size_t n_docs, const std::vector<std::vector<std::string>>& keyword_assignment,
                               const EmbeddingStore& store, std::string name) {
  if (n_docs < 1) throw CorpusError("sequential corpus needs at least one document");
  if (keyword_assignment.size() != n_docs) {
    throw CorpusError("keyword assignment has " + std::to_string(keyword_assignment.size()) + " entries for " +
                      std::to_string(n_docs) + " documents");
  }
  Corpus c;
  c.name = std::move(name);
  c.kind = CorpusKind::Sequential;
  KeywordTable table{store, c, {}};
  for (std::size_t i = 0; i < n_docs; ++i) {
    const int id = static_cast<int>(i);
    c.kcs.push_back({id, "k" + std::to_string(i + 1), 1.0});
    if (keyword_assignment[i].empty()) throw CorpusError("document " + std::to_string(i) + " has no keywords");
    c.docs.push_back({id, {id}, table.ids_of(keyword_assignment[i])});
    if (i > 0) c.prereq_edges.emplace_back(id - 1, id);
  }
  return c;
}

void GridCorpusSpec::validate() const {
  if (columns < 1) throw CorpusError("grid corpus needs at least one column");
  if (rows != 3) throw CorpusError("grid corpus must have exactly 3 rows, got " + std::to_string(rows));
  if (!(pref_edge_prob >= 0.0 && pref_edge_prob <= 1.0))
    throw CorpusError("pref_edge_prob must lie in [0,1]");
}

Corpus build_grid_corpus(const GridCorpusSpec& spec, const EmbeddingStore& store,
                         const std::vector<std::vector<std::string>>& keyword_assignment, std::string name) {
  spec.validate();
  const int cols = spec.columns;
  if (keyword_assignment.size() != static_cast<std::size_t>(2 * cols)) {
    throw CorpusError("grid keyword assignment needs " + std::to_string(2 * cols) + " entries, got " +
                      std::to_string(keyword_assignment.size()));
  }
  Corpus c;
  c.name = std::move(name);
  c.kind = CorpusKind::Graph;
  GridLayout layout;
  layout.columns = cols;
  layout.pref_edge_prob = spec.pref_edge_prob;

  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < cols; ++col)
      c.kcs.push_back({layout.kc(row, col), "k" + std::to_string(row + 1) + "_" + std::to_string(col + 1),
                       static_cast<double>(row + 1)});
  if (spec.background_kc) {
    layout.background = 3 * cols;
    c.kcs.push_back({layout.background, "background", 0.0});
  }

  for (int row = 1; row <= 2; ++row)
    for (int col = 0; col + 1 < cols; ++col) c.prereq_edges.emplace_back(layout.kc(row, col), layout.kc(row, col + 1));
  if (spec.background_kc)
    for (int col = 0; col < cols; ++col) c.prereq_edges.emplace_back(layout.background, layout.kc(2, col));

  KeywordTable table{store, c, {}};
  for (int d = 0; d < 2 * cols; ++d) {
    if (keyword_assignment[d].empty()) throw CorpusError("document " + std::to_string(d) + " has no keywords");
    const int col = d % cols;
    const int angle_row = d < cols ? 0 : 2;
    std::vector<int> teaches{layout.kc(angle_row, col), layout.kc(1, col)};
    std::sort(teaches.begin(), teaches.end());
    c.docs.push_back({d, std::move(teaches), table.ids_of(keyword_assignment[d])});
  }
  c.grid = layout;
  return c;
}

// ---------------------------------------------------------------------------
// Serialization

std::string corpus_to_json_string(const Corpus& c) {
  json j;
  j["name"] = c.name;
  j["kind"] = std::string(to_string(c.kind));
  j["kcs"] = json::array();
  for (const auto& k : c.kcs) j["kcs"].push_back({{"id", k.id}, {"label", k.label}, {"value", k.value}});
  j["docs"] = json::array();
  for (const auto& d : c.docs) j["docs"].push_back({{"id", d.id}, {"teaches", d.teaches}, {"keywords", d.keywords}});
  j["prereq_edges"] = json::array();
  for (auto [a, b] : c.prereq_edges) j["prereq_edges"].push_back({a, b});
  j["keywords"] = c.keywords;
  if (c.grid) {
    j["grid"] = {{"columns", c.grid->columns},
                 {"background", c.grid->background},
                 {"pref_edge_prob", c.grid->pref_edge_prob}};
  }
  return j.dump(1);
}

Corpus corpus_from_json_string(std::string_view text, const EmbeddingStore& store, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin, 0, e.what());
  }
  Corpus c;
  try {
    c.name = j.value("name", std::string("corpus"));
    c.kind = corpus_kind_from_string(j.at("kind").get<std::string>());
    for (const auto& k : j.at("kcs")) {
      c.kcs.push_back({k.at("id").get<int>(), k.value("label", std::string()), k.value("value", 1.0)});
    }
    for (const auto& d : j.at("docs")) {
      Document doc{d.at("id").get<int>(), d.at("teaches").get<std::vector<int>>(),
                   d.at("keywords").get<std::vector<int>>()};
      std::sort(doc.teaches.begin(), doc.teaches.end());
      std::sort(doc.keywords.begin(), doc.keywords.end());
      c.docs.push_back(std::move(doc));
    }
    for (const auto& e : j.at("prereq_edges")) c.prereq_edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    c.keywords = j.at("keywords").get<std::vector<std::string>>();
    if (j.contains("grid")) {
      GridLayout g;
      g.columns = j["grid"].at("columns").get<int>();
      g.background = j["grid"].value("background", -1);
      g.pref_edge_prob = j["grid"].value("pref_edge_prob", 0.3);
      c.grid = g;
    }
  } catch (const json::exception& e) {
    throw ParseError(origin, 0, std::string("malformed corpus: ") + e.what());
  }
  for (const auto& token : c.keywords) c.embeddings.push_back(store.at(token));
  auto report = validate_corpus(c);
  if (!report.ok()) throw CorpusError(origin + ": invalid corpus: " + report.violations.front());
  return c;
}

Corpus load_corpus(const std::filesystem::path& path, const EmbeddingStore& store) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open corpus file");
  std::stringstream ss;
  ss << in.rdbuf();
  return corpus_from_json_string(ss.str(), store, path.string());
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file " + path.string());
  out << corpus_to_json_string(corpus) << '\n';
}

}  // namespace pathforge
