#include "pathforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <set>

namespace pathforge {

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

void normalize(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (auto& x : v) x /= norm;
}

std::string token_name(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%03zu", prefix, i);
  return buf;
}

class WorldBuilder {
 public:
  WorldBuilder(const SyntheticWorldConfig& cfg) : cfg_(cfg), rng_(derive_seed(cfg.seed, 1)) {}

  SyntheticWorld build() {
    SyntheticWorld w{EmbeddingStore(cfg_.dim), {}, {}, {}};
    make_vocabulary(w);
    for (std::size_t i = 0; i < cfg_.sequential_corpora; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "seq_%02zu", i + 1);
      w.sequential.push_back(make_sequential(w, name));
    }
    w.grid = make_grid(w);
    return w;
  }

 private:
  void make_vocabulary(SyntheticWorld& w) {
    Rng dir_rng(derive_seed(cfg_.seed, 2));
    std::vector<std::vector<double>> u;
    for (int k = 0; k < 4; ++k) u.push_back(random_unit(dir_rng, cfg_.dim));

    auto add_family = [&](char prefix, std::size_t n, bool technical) {
      for (std::size_t i = 0; i < n; ++i) {
        SyntheticKeyword kw{token_name(prefix, i), (static_cast<double>(i) + uniform01(rng_)) / static_cast<double>(n),
                            technical};
        const double t = kw.depth;
        std::vector<double> curve(cfg_.dim);
        const double a = 2.0 * t - 1.0, b = std::cos(std::numbers::pi * t), c = std::sin(2.0 * std::numbers::pi * t);
        for (std::size_t d = 0; d < cfg_.dim; ++d) curve[d] = a * u[0][d] + b * u[1][d] + 0.5 * c * u[2][d];
        normalize(curve);
        const auto token_part = EmbeddingStore::synthetic_vector(kw.token, cfg_.dim);
        std::vector<double> v(cfg_.dim);
        const double sign = technical ? 1.0 : -1.0;
        for (std::size_t d = 0; d < cfg_.dim; ++d)
          v[d] = cfg_.token_weight * token_part[d] + cfg_.depth_weight * curve[d] + cfg_.family_weight * sign * u[3][d];
        normalize(v);
        w.store.add(kw.token, std::move(v));
        (technical ? technical_ : general_).push_back(w.vocabulary.size());
        w.vocabulary.push_back(std::move(kw));
      }
    };
    add_family('g', cfg_.general_keywords, false);
    add_family('t', cfg_.technical_keywords, true);
  }

  // Random keyword of the family among the `pool` closest in depth to `depth`,
  // skipping those already in `taken`.
  std::size_t near_keyword(const SyntheticWorld& w, bool technical, double depth, const std::set<std::size_t>& taken,
                           std::size_t pool = 8) {
    std::vector<std::size_t> fam = technical ? technical_ : general_;
    std::erase_if(fam, [&](std::size_t i) { return taken.count(i) != 0; });
    if (fam.empty()) throw CorpusError("synthetic vocabulary exhausted");
    std::stable_sort(fam.begin(), fam.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(w.vocabulary[a].depth - depth) < std::abs(w.vocabulary[b].depth - depth);
    });
    return fam[uniform_index(rng_, std::min(pool, fam.size()))];
  }

  std::size_t draw_count(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  // Makes sure `doc` shares a keyword with `prev`.
  void link(std::set<std::size_t>& doc, const std::set<std::size_t>& prev) {
    for (auto k : doc)
      if (prev.count(k)) return;
    std::vector<std::size_t> options(prev.begin(), prev.end());
    const auto pick = options[uniform_index(rng_, options.size())];
    if (doc.size() >= cfg_.max_keywords_per_doc) {
      auto it = doc.begin();
      std::advance(it, static_cast<long>(uniform_index(rng_, doc.size())));
      doc.erase(it);
    }
    doc.insert(pick);
  }

  std::vector<std::vector<std::string>> tokens(const SyntheticWorld& w, const std::vector<std::set<std::size_t>>& docs) {
    std::vector<std::vector<std::string>> out;
    for (const auto& d : docs) {
      out.emplace_back();
      for (auto k : d) out.back().push_back(w.vocabulary[k].token);
    }
    return out;
  }

  Corpus make_sequential(const SyntheticWorld& w, const std::string& name) {
    const std::size_t n = draw_count(cfg_.min_docs, cfg_.max_docs);
    const double start = 0.35 * uniform01(rng_);
    const double end = 0.65 + 0.35 * uniform01(rng_);
    const double tech_share = 0.8 * uniform01(rng_);
    std::vector<std::set<std::size_t>> docs;
    for (std::size_t i = 0; i < n; ++i) {
      const double depth = start + (end - start) * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      const std::size_t k = draw_count(cfg_.min_keywords_per_doc, cfg_.max_keywords_per_doc);
      std::set<std::size_t> doc;
      while (doc.size() < k) doc.insert(near_keyword(w, bernoulli(rng_, tech_share), depth, doc));
      if (i > 0) link(doc, docs.back());
      docs.push_back(std::move(doc));
    }
    return build_sequential_corpus(n, tokens(w, docs), w.store, name);
  }

  Corpus make_grid(const SyntheticWorld& w) {
    const int cols = cfg_.grid.columns;
    std::vector<std::set<std::size_t>> non_cs, cs;
    for (int c = 0; c < cols; ++c) {
      const double depth = cols == 1 ? 0.5 : 0.1 + 0.8 * c / static_cast<double>(cols - 1);
      std::set<std::size_t> a;
      const std::size_t ka = draw_count(3, 6);
      while (a.size() < ka) a.insert(near_keyword(w, false, depth, a));
      if (c > 0) link(a, non_cs.back());

      std::set<std::size_t> b;
      const std::size_t kb = draw_count(3, 6);
      while (b.size() < kb) b.insert(near_keyword(w, true, depth, b));
      std::vector<std::size_t> shared(a.begin(), a.end());
      std::shuffle(shared.begin(), shared.end(), rng_);
      const std::size_t n_shared = draw_count(1, 2);
      for (std::size_t i = 0; i < n_shared && i < shared.size(); ++i) b.insert(shared[i]);
      if (c > 0) link(b, cs.back());

      non_cs.push_back(std::move(a));
      cs.push_back(std::move(b));
    }
    std::vector<std::set<std::size_t>> all = non_cs;
    all.insert(all.end(), cs.begin(), cs.end());
    return build_grid_corpus(cfg_.grid, w.store, tokens(w, all), "grid");
  }

  const SyntheticWorldConfig& cfg_;
  Rng rng_;
  std::vector<std::size_t> general_;
  std::vector<std::size_t> technical_;
};

}  // namespace

SyntheticWorld generate_world(const SyntheticWorldConfig& cfg) {
  if (cfg.min_docs < 1 || cfg.min_docs > cfg.max_docs) throw ConfigError("invalid synthetic document-count range");
  if (cfg.min_keywords_per_doc < 1 || cfg.min_keywords_per_doc > cfg.max_keywords_per_doc)
    throw ConfigError("invalid synthetic keyword-count range");
  return WorldBuilder(cfg).build();
}

void write_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "sequential");
  std::set<std::string> used;
  auto collect = [&](const Corpus& c) { used.insert(c.keywords.begin(), c.keywords.end()); };
  for (const auto& c : world.sequential) collect(c);
  collect(world.grid);
  EmbeddingStore subset(world.store.dim());
  for (const auto& t : used) subset.add(t, world.store.at(t));
  save_embeddings(subset, dir / "embeddings.txt");
  for (const auto& c : world.sequential) save_corpus(c, dir / "sequential" / (c.name + ".json"));
  save_corpus(world.grid, dir / "grid.json");
}

LoadedWorld load_world(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "embeddings.txt"))
    throw ConfigError("no embeddings.txt under data directory " + dir.string());
  LoadedWorld w{load_embeddings(dir / "embeddings.txt"), {}, {}};
  std::vector<fs::path> files;
  if (fs::is_directory(dir / "sequential"))
    for (const auto& e : fs::directory_iterator(dir / "sequential"))
      if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) w.sequential.push_back(load_corpus(f, w.store));
  w.grid = load_corpus(dir / "grid.json", w.store);
  return w;
}

std::filesystem::path data_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("PATHFORGE_DATA_DIR"); env && *env) return env;
  return fallback;
}

}  // namespace pathforge
