#include "pathforge/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "pathforge/stats.hpp"

namespace pathforge {

namespace fs = std::filesystem;

namespace {

constexpr PolicyKind kAllPolicies[] = {PolicyKind::Gnn,    PolicyKind::GnnScratch, PolicyKind::Cmab,
                                       PolicyKind::PpoMlp, PolicyKind::Random,     PolicyKind::Oracle};

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << content;
  if (!out) throw ConfigError("write failed: " + p.string());
}

std::string hex64(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

std::string file_digest(const fs::path& p) { return hex64(fnv1a64(read_file(p))); }

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string_view to_string(ActMode m) { return m == ActMode::Greedy ? "greedy" : "sample"; }

ActMode act_mode_from_string(std::string_view s) {
  if (s == "greedy") return ActMode::Greedy;
  if (s == "sample") return ActMode::Sample;
  throw ConfigError("unknown action mode '" + std::string(s) + "' (expected greedy or sample)");
}

Json model_json(const RecommenderConfig& m) {
  return {{"hidden", m.hidden},
          {"heads", m.heads},
          {"embedding_dim", m.embedding_dim},
          {"attention", m.attention == ad::AttentionKind::Additive ? "additive" : "dot"}};
}

RecommenderConfig model_from_json(const Json& j) {
  RecommenderConfig m;
  read_opt(j, "hidden", m.hidden);
  read_opt(j, "heads", m.heads);
  read_opt(j, "embedding_dim", m.embedding_dim);
  std::string att = "dot";
  read_opt(j, "attention", att);
  if (att == "dot") m.attention = ad::AttentionKind::DotProduct;
  else if (att == "additive") m.attention = ad::AttentionKind::Additive;
  else throw ConfigError("unknown attention kind '" + att + "' (expected dot or additive)");
  m.validate();
  return m;
}

Json train_json(const TrainConfig& c) {
  Json j{{"lr", c.lr},
         {"gamma", c.gamma},
         {"entropy_coef", c.entropy_coef},
         {"batch_size", c.batch_size},
         {"repeat_per_collect", c.repeat_per_collect},
         {"total_steps", c.total_steps},
         {"epochs", c.epochs},
         {"eval_episodes", c.eval_episodes},
         {"standardize_returns", c.standardize_returns},
         {"eval_mode", to_string(c.eval_mode)}};
  j["steps_per_collect"] = c.steps_per_collect ? Json(*c.steps_per_collect) : Json(nullptr);
  j["episodes_per_collect"] = c.episodes_per_collect ? Json(*c.episodes_per_collect) : Json(nullptr);
  return j;
}

TrainConfig train_from_json(const Json& j, TrainConfig c) {
  read_opt(j, "lr", c.lr);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "entropy_coef", c.entropy_coef);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "repeat_per_collect", c.repeat_per_collect);
  read_opt(j, "total_steps", c.total_steps);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "eval_episodes", c.eval_episodes);
  read_opt(j, "standardize_returns", c.standardize_returns);
  if (j.contains("eval_mode")) c.eval_mode = act_mode_from_string(j.at("eval_mode").get<std::string>());
  if (j.contains("steps_per_collect") || j.contains("episodes_per_collect")) {
    c.steps_per_collect.reset();
    c.episodes_per_collect.reset();
    if (j.contains("steps_per_collect") && !j.at("steps_per_collect").is_null())
      c.steps_per_collect = j.at("steps_per_collect").get<std::size_t>();
    if (j.contains("episodes_per_collect") && !j.at("episodes_per_collect").is_null())
      c.episodes_per_collect = j.at("episodes_per_collect").get<std::size_t>();
  }
  c.validate();
  return c;
}

Json ppo_json(const PpoConfig& c) {
  return {{"lr", c.lr},
          {"hidden", c.hidden},
          {"batch_size", c.batch_size},
          {"repeat_per_collect", c.repeat_per_collect},
          {"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip", c.clip},
          {"value_coef", c.value_coef},
          {"entropy_coef", c.entropy_coef},
          {"normalize_advantages", c.normalize_advantages}};
}

PpoConfig ppo_from_json(const Json& j) {
  PpoConfig c;
  read_opt(j, "lr", c.lr);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "repeat_per_collect", c.repeat_per_collect);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "gae_lambda", c.gae_lambda);
  read_opt(j, "clip", c.clip);
  read_opt(j, "value_coef", c.value_coef);
  read_opt(j, "entropy_coef", c.entropy_coef);
  read_opt(j, "normalize_advantages", c.normalize_advantages);
  c.validate();
  return c;
}

bool needs_checkpoint(PolicyKind p) { return p == PolicyKind::Gnn; }

int scenario_rank(const std::string& s) {
  if (s == "none") return 0;
  if (s == "decexp") return 1;
  if (s == "uniform") return 2;
  return 3;
}

int policy_rank(const std::string& p) {
  for (std::size_t i = 0; i < std::size(kAllPolicies); ++i)
    if (p == to_string(kAllPolicies[i])) return static_cast<int>(i);
  return static_cast<int>(std::size(kAllPolicies));
}

bool group_less(const std::pair<std::string, std::string>& a, const std::pair<std::string, std::string>& b) {
  const auto ka = std::make_tuple(scenario_rank(a.first), a.first, policy_rank(a.second), a.second);
  const auto kb = std::make_tuple(scenario_rank(b.first), b.first, policy_rank(b.second), b.second);
  return ka < kb;
}

}  // namespace

std::string_view to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::Gnn: return "gnn";
    case PolicyKind::GnnScratch: return "gnn-scratch";
    case PolicyKind::Cmab: return "cmab";
    case PolicyKind::PpoMlp: return "ppo-mlp";
    case PolicyKind::Random: return "random";
    case PolicyKind::Oracle: return "oracle";
  }
  return "?";
}

std::string valid_policy_names() {
  std::string out;
  for (auto p : kAllPolicies) out += (out.empty() ? "" : ", ") + std::string(to_string(p));
  return out;
}

PolicyKind policy_from_string(std::string_view s) {
  for (auto p : kAllPolicies)
    if (s == to_string(p)) return p;
  throw ConfigError("unknown policy '" + std::string(s) + "'; valid policies: " + valid_policy_names());
}

PriorScenario parse_scenario(std::string_view s) {
  try {
    return scenario_from_string(s);
  } catch (const std::exception&) {
    throw ConfigError("unknown scenario '" + std::string(s) + "'; valid scenarios: none, decexp, uniform");
  }
}

std::vector<std::uint64_t> parse_seeds(std::string_view s) {
  auto num = [&](std::string_view t) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
      throw ConfigError("invalid seed '" + std::string(t) + "' in '" + std::string(s) + "'");
    return v;
  };
  std::vector<std::uint64_t> out;
  if (const auto dots = s.find(".."); dots != std::string_view::npos) {
    const auto a = num(s.substr(0, dots)), b = num(s.substr(dots + 2));
    if (b < a) throw ConfigError("empty seed range '" + std::string(s) + "'");
    for (auto v = a; v <= b; ++v) out.push_back(v);
    return out;
  }
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    out.push_back(num(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (!fs::exists(data_dir / "grid.json")) throw ConfigError("no grid.json under data directory " + data_dir.string());
  if (!fs::exists(data_dir / "embeddings.txt"))
    throw ConfigError("no embeddings.txt under data directory " + data_dir.string());
  if (needs_checkpoint(policy) && !checkpoint)
    throw ConfigError("policy " + std::string(to_string(policy)) + " needs --checkpoint");
  if (checkpoint && !fs::exists(*checkpoint)) throw ConfigError("missing checkpoint " + checkpoint->string());
  if (seeds.empty()) throw ConfigError("no seeds given");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  model.validate();
  train.validate();
  ppo.validate();
  if (protocol.epochs == 0 || protocol.episodes_per_collect == 0 || protocol.eval_episodes == 0)
    throw ConfigError("protocol epochs, episodes per collect and eval episodes must be >= 1");
}

Json to_json(const ExperimentConfig& cfg) {
  Json j{{"data_dir", cfg.data_dir.string()},
         {"scenario", to_string(cfg.scenario)},
         {"policy", to_string(cfg.policy)},
         {"label", cfg.label},
         {"model", model_json(cfg.model)},
         {"train", train_json(cfg.train)},
         {"protocol",
          {{"epochs", cfg.protocol.epochs},
           {"episodes_per_collect", cfg.protocol.episodes_per_collect},
           {"eval_episodes", cfg.protocol.eval_episodes}}},
         {"cmab",
          {{"model", to_string(cfg.cmab.model)},
           {"prior_precision", cfg.cmab.prior_precision},
           {"noise_var", cfg.cmab.noise_var}}},
         {"ppo", ppo_json(cfg.ppo)},
         {"seeds", cfg.seeds},
         {"out_dir", cfg.out_dir.string()}};
  j["checkpoint"] = cfg.checkpoint ? Json(cfg.checkpoint->string()) : Json(nullptr);
  return j;
}

ExperimentConfig experiment_from_json(const Json& j, const fs::path& base) {
  ExperimentConfig c;
  if (j.contains("data_dir")) c.data_dir = resolve(j.at("data_dir").get<std::string>(), base);
  if (j.contains("scenario")) c.scenario = parse_scenario(j.at("scenario").get<std::string>());
  if (j.contains("policy")) c.policy = policy_from_string(j.at("policy").get<std::string>());
  read_opt(j, "label", c.label);
  if (j.contains("checkpoint") && !j.at("checkpoint").is_null())
    c.checkpoint = resolve(j.at("checkpoint").get<std::string>(), base);
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"), TrainConfig::finetune_defaults());
  if (j.contains("protocol")) {
    const auto& p = j.at("protocol");
    read_opt(p, "epochs", c.protocol.epochs);
    read_opt(p, "episodes_per_collect", c.protocol.episodes_per_collect);
    read_opt(p, "eval_episodes", c.protocol.eval_episodes);
  }
  if (j.contains("cmab")) {
    const auto& m = j.at("cmab");
    if (m.contains("model")) c.cmab.model = cmab_model_from_string(m.at("model").get<std::string>());
    read_opt(m, "prior_precision", c.cmab.prior_precision);
    read_opt(m, "noise_var", c.cmab.noise_var);
  }
  if (j.contains("ppo")) c.ppo = ppo_from_json(j.at("ppo"));
  read_opt(j, "seeds", c.seeds);
  if (j.contains("out_dir")) c.out_dir = resolve(j.at("out_dir").get<std::string>(), base);
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_from_json(j, path.parent_path());
}

std::string config_hash(const ExperimentConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("seeds");
  j.erase("out_dir");
  j["data_dir"] = file_digest(cfg.data_dir / "grid.json") + ":" + file_digest(cfg.data_dir / "embeddings.txt");
  j["checkpoint"] = cfg.checkpoint ? Json(file_digest(*cfg.checkpoint)) : Json(nullptr);
  return hex64(fnv1a64(j.dump()));
}

Json to_json(const RunRecord& r) {
  Json curve = Json::array();
  for (const auto& p : r.curve)
    curve.push_back({{"epoch", p.epoch},
                     {"train_mean", p.train_mean},
                     {"n_train", p.n_train},
                     {"test_mean", p.test_mean},
                     {"n_test", p.n_test}});
  return {{"config_hash", r.config_hash}, {"seed", r.seed},         {"policy", r.policy},
          {"scenario", r.scenario},       {"started", r.started},   {"finished", r.finished},
          {"curve", curve},               {"final_return", r.final_return}, {"config", r.config}};
}

RunRecord record_from_json(const Json& j) {
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.policy = j.at("policy").get<std::string>();
  r.scenario = j.at("scenario").get<std::string>();
  read_opt(j, "started", r.started);
  read_opt(j, "finished", r.finished);
  for (const auto& p : j.at("curve"))
    r.curve.push_back({p.at("epoch").get<std::size_t>(), p.at("train_mean").get<double>(),
                       p.at("n_train").get<std::size_t>(), p.at("test_mean").get<double>(),
                       p.at("n_test").get<std::size_t>()});
  r.final_return = j.at("final_return").get<double>();
  if (j.contains("config")) r.config = j.at("config");
  return r;
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("number formatting failed");
  return std::string(buf, p);
}

std::string curve_csv(const std::string& run_id, std::uint64_t seed, const std::vector<EpochPoint>& curve) {
  std::string out = std::string(kCurveHeader) + "\n";
  for (const auto& p : curve) {
    const auto prefix = run_id + "," + std::to_string(seed) + "," + std::to_string(p.epoch) + ",";
    out += prefix + "train," + format_double(p.train_mean) + "," + std::to_string(p.n_train) + "\n";
    out += prefix + "test," + format_double(p.test_mean) + "," + std::to_string(p.n_test) + "\n";
  }
  return out;
}

std::string episode_csv(const std::string& run_id, std::uint64_t seed, const std::vector<EpisodeLog>& logs) {
  std::string out = std::string(kEpisodeHeader) + "\n";
  for (std::size_t e = 0; e < logs.size(); ++e)
    for (std::size_t s = 0; s < logs[e].steps.size(); ++s) {
      const auto& st = logs[e].steps[s];
      out += run_id + "," + std::to_string(seed) + "," + std::to_string(e) + "," + std::to_string(s) + "," +
             std::to_string(st.doc) + "," + std::string(to_string(st.feedback)) + "," + format_double(st.reward) +
             "\n";
    }
  return out;
}

UnitResult run_unit(const ExperimentConfig& cfg, const Corpus& grid, std::uint64_t seed) {
  const Task task = grid_task(grid, cfg.scenario);
  UnitResult res;
  switch (cfg.policy) {
    case PolicyKind::Gnn:
    case PolicyKind::GnnScratch: {
      res.model = std::make_unique<Recommender>(cfg.model, derive_seed(seed, 0x696e6974));
      if (cfg.policy == PolicyKind::Gnn) {
        if (!cfg.checkpoint) throw ConfigError("policy gnn needs a checkpoint");
        res.model->load(*cfg.checkpoint);
      }
      GnnAgent agent(*res.model, cfg.train, derive_seed(seed, 0x6167));
      res.finetune = run_finetune(agent, task, cfg.protocol, seed);
      break;
    }
    case PolicyKind::Cmab: {
      CmabAgent agent(cfg.cmab);
      res.finetune = run_finetune(agent, task, cfg.protocol, seed);
      break;
    }
    case PolicyKind::PpoMlp: {
      res.ppo = std::make_unique<PpoAgent>(grid.n_docs(), cfg.ppo, derive_seed(seed, 0x70706f));
      res.finetune = run_finetune(*res.ppo, task, cfg.protocol, seed);
      break;
    }
    case PolicyKind::Random: {
      StaticAgent agent(std::make_unique<RandomPolicy>());
      res.finetune = run_finetune(agent, task, cfg.protocol, seed);
      break;
    }
    case PolicyKind::Oracle: {
      StaticAgent agent(std::make_unique<OraclePolicy>());
      res.finetune = run_finetune(agent, task, cfg.protocol, seed);
      break;
    }
  }
  return res;
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, bool force, std::size_t parallel, std::ostream* log) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  const auto store = load_embeddings(cfg.data_dir / "embeddings.txt");
  const Corpus grid = load_corpus(cfg.data_dir / "grid.json", store);
  const Json cfg_json = to_json(cfg);

  ExperimentOutcome out;
  out.records.resize(cfg.seeds.size());
  std::vector<char> skipped(cfg.seeds.size(), 0);
  std::mutex log_mu;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mu);
    *log << msg << std::endl;
  };

  auto work = [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const fs::path dir = cfg.out_dir / hash / std::to_string(seed);
    const fs::path record_path = dir / "record.json";
    if (!force && fs::exists(record_path)) {
      out.records[i] = record_from_json(Json::parse(read_file(record_path)));
      skipped[i] = 1;
      say("skip " + cfg.display_name() + "/" + std::string(to_string(cfg.scenario)) + " seed " +
          std::to_string(seed) + ": record exists (use --force to rerun)");
      return;
    }
    RunRecord r;
    r.config_hash = hash;
    r.seed = seed;
    r.policy = cfg.display_name();
    r.scenario = std::string(to_string(cfg.scenario));
    r.started = utc_now();
    r.config = cfg_json;
    UnitResult unit = run_unit(cfg, grid, seed);
    r.curve = unit.finetune.curve;
    r.final_return = unit.finetune.final_return();
    r.finished = utc_now();

    fs::create_directories(dir);
    write_file(dir / "curve.csv", curve_csv(hash, seed, r.curve));
    write_file(dir / "episodes.csv", episode_csv(hash, seed, unit.finetune.test_logs));
    if (unit.model) unit.model->save(dir / "checkpoint.bin");
    if (unit.ppo) ad::save_tensors(dir / "checkpoint.bin", ad::snapshot(unit.ppo->network().parameters()));
    write_file(record_path, to_json(r).dump(2) + "\n");  // written last: marks the unit complete
    out.records[i] = std::move(r);
    say("done " + cfg.display_name() + "/" + std::string(to_string(cfg.scenario)) + " seed " + std::to_string(seed) +
        " final " + format_double(out.records[i].final_return));
  };

  const std::size_t n_threads = std::clamp<std::size_t>(parallel, 1, cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex fail_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cfg.seeds.size();) {
      try {
        work(i);
      } catch (...) {
        std::lock_guard lock(fail_mu);
        if (!failure) failure = std::current_exception();
        next = cfg.seeds.size();
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  out.skipped = static_cast<std::size_t>(std::count(skipped.begin(), skipped.end(), 1));
  return out;
}

std::vector<RunRecord> load_records(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<RunRecord> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "record.json") {
      try {
        out.push_back(record_from_json(Json::parse(read_file(e.path()))));
      } catch (const Json::exception& ex) {
        throw ConfigError(e.path().string() + ": " + ex.what());
      }
    }
  if (out.empty()) throw ConfigError("no run records under " + dir.string());
  std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.config_hash, a.seed) < std::tie(b.config_hash, b.seed);
  });
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, const Json* reference) {
  std::map<std::pair<std::string, std::string>, std::vector<double>, decltype(&group_less)> groups(&group_less);
  for (const auto& r : records) groups[{r.scenario, r.policy}].push_back(r.final_return);
  std::vector<SummaryRow> rows;
  for (const auto& [key, v] : groups) {
    SummaryRow row{key.first, key.second, v.size(), sample_mean(v), sample_sd(v), {}, {}};
    if (reference)
      for (const auto& ref : *reference)
        if (ref.at("scenario") == row.scenario && ref.at("policy") == row.policy) {
          row.reference_mean = ref.at("mean").get<double>();
          row.reference_sd = ref.at("sd").get<double>();
        }
    rows.push_back(std::move(row));
  }
  return rows;
}

Json to_json(const std::vector<SummaryRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    Json j{{"scenario", r.scenario}, {"policy", r.policy}, {"n", r.n}, {"mean", r.mean}, {"sd", r.sd}};
    j["reference_mean"] = r.reference_mean ? Json(*r.reference_mean) : Json(nullptr);
    j["reference_sd"] = r.reference_sd ? Json(*r.reference_sd) : Json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream ss;
  ss << std::left << std::setw(10) << "scenario" << std::setw(16) << "policy" << std::right << std::setw(4) << "n"
     << std::setw(18) << "final (sd)" << std::setw(18) << "reference (sd)" << "\n";
  ss << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    std::ostringstream cell, ref;
    cell << std::fixed << std::setprecision(2) << r.mean << " (" << r.sd << ")";
    if (r.reference_mean) ref << std::fixed << std::setprecision(2) << *r.reference_mean << " (" << *r.reference_sd << ")";
    else ref << "-";
    ss << std::left << std::setw(10) << r.scenario << std::setw(16) << r.policy << std::right << std::setw(4) << r.n
       << std::setw(18) << cell.str() << std::setw(18) << ref.str() << "\n";
  }
  return ss.str();
}

std::vector<CurveBand> bootstrap_curves(const std::vector<RunRecord>& records, std::uint64_t seed,
                                        std::size_t resamples, double level) {
  std::map<std::pair<std::string, std::string>, std::map<std::size_t, std::vector<double>>, decltype(&group_less)>
      groups(&group_less);
  for (const auto& r : records)
    for (const auto& p : r.curve) groups[{r.scenario, r.policy}][p.epoch].push_back(p.test_mean);
  std::vector<CurveBand> out;
  for (const auto& [key, epochs] : groups)
    for (const auto& [epoch, v] : epochs) {
      Rng rng(derive_seed(seed, fnv1a64(key.first + "/" + key.second), epoch));
      const auto ci = bootstrap_ci(v, rng, resamples, level);
      out.push_back({key.first, key.second, epoch, ci.mean, ci.lo, ci.hi, v.size()});
    }
  return out;
}

std::string bands_csv(const std::vector<CurveBand>& bands) {
  std::string out = std::string(kBandHeader) + "\n";
  for (const auto& b : bands)
    out += b.scenario + "," + b.policy + "," + std::to_string(b.epoch) + "," + format_double(b.mean) + "," +
           format_double(b.lo) + "," + format_double(b.hi) + "," + std::to_string(b.n_seeds) + "\n";
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(PretrainVariant v) {
  switch (v) {
    case PretrainVariant::Full: return "full";
    case PretrainVariant::ImitationOnly: return "imitation";
    case PretrainVariant::FeedbackPrediction: return "feedback";
  }
  return "?";
}

PretrainVariant pretrain_variant_from_string(std::string_view s) {
  if (s == "full") return PretrainVariant::Full;
  if (s == "imitation") return PretrainVariant::ImitationOnly;
  if (s == "feedback") return PretrainVariant::FeedbackPrediction;
  throw ConfigError("unknown pre-training variant '" + std::string(s) + "'; valid: full, imitation, feedback");
}

Json to_json(const PretrainJob& job) {
  const auto& im = job.pretrain.imitation;
  return {{"data_dir", job.data_dir.string()},
          {"variant", to_string(job.variant)},
          {"model", model_json(job.model)},
          {"imitation",
           {{"lr", im.lr},
            {"batch_size", im.batch_size},
            {"target_agreement", im.target_agreement},
            {"max_steps", im.max_steps}}},
          {"rl", train_json(job.pretrain.rl)},
          {"run_rl", job.pretrain.run_rl},
          {"feedback",
           {{"lr", job.feedback.lr},
            {"batch_size", job.feedback.batch_size},
            {"steps", job.feedback.steps},
            {"random_episodes_per_task", job.feedback.random_episodes_per_task}}},
          {"seed", job.seed}};
}

PretrainJob pretrain_job_from_json(const Json& j, const fs::path& base) {
  PretrainJob job;
  if (j.contains("data_dir")) job.data_dir = resolve(j.at("data_dir").get<std::string>(), base);
  if (j.contains("variant")) job.variant = pretrain_variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("model")) job.model = model_from_json(j.at("model"));
  if (j.contains("imitation")) {
    auto& im = job.pretrain.imitation;
    const auto& m = j.at("imitation");
    read_opt(m, "lr", im.lr);
    read_opt(m, "batch_size", im.batch_size);
    read_opt(m, "target_agreement", im.target_agreement);
    read_opt(m, "max_steps", im.max_steps);
  }
  if (j.contains("rl")) job.pretrain.rl = train_from_json(j.at("rl"), TrainConfig::pretrain_defaults());
  read_opt(j, "run_rl", job.pretrain.run_rl);
  if (j.contains("feedback")) {
    const auto& f = j.at("feedback");
    read_opt(f, "lr", job.feedback.lr);
    read_opt(f, "batch_size", job.feedback.batch_size);
    read_opt(f, "steps", job.feedback.steps);
    read_opt(f, "random_episodes_per_task", job.feedback.random_episodes_per_task);
  }
  read_opt(j, "seed", job.seed);
  return job;
}

double heldout_agreement(Recommender& model, const std::vector<Task>& tasks, std::uint64_t seed,
                         std::size_t episodes_per_task) {
  Rng rng(derive_seed(seed, 0x686f6c64));
  const auto data = oracle_dataset(tasks, rng, episodes_per_task);
  return agreement(model, data);
}

PretrainOutput run_pretrain(const PretrainJob& job, Recommender& model, std::ostream* log) {
  const auto world = load_world(job.data_dir);
  if (world.sequential.empty()) throw ConfigError("no sequential corpora under " + job.data_dir.string());
  const auto tasks = sequential_tasks(world.sequential);
  PretrainOutput out;
  switch (job.variant) {
    case PretrainVariant::Full:
    case PretrainVariant::ImitationOnly: {
      PretrainConfig cfg = job.pretrain;
      cfg.run_rl = job.variant == PretrainVariant::Full && cfg.run_rl;
      const auto res = pretrain(model, tasks, cfg, job.seed);
      out.curve = res.curve;
      out.imitation_steps = res.imitation.steps;
      out.train_agreement = res.imitation.train_agreement;
      break;
    }
    case PretrainVariant::FeedbackPrediction:
      out.feedback = pretrain_feedback_prediction(model, tasks, job.feedback, job.seed);
      break;
  }
  out.heldout_agreement = heldout_agreement(model, tasks, job.seed);
  if (log) {
    *log << "pretrain " << to_string(job.variant) << ": " << tasks.size() << " corpora";
    if (out.imitation_steps) *log << ", imitation steps " << out.imitation_steps << " (train agreement "
                                  << format_double(out.train_agreement) << ")";
    if (out.feedback) *log << ", feedback accuracy " << format_double(out.feedback->heldout_accuracy);
    *log << ", held-out oracle agreement " << format_double(out.heldout_agreement) << std::endl;
  }
  return out;
}

std::string pretrain_csv(const std::string& run_id, const std::vector<CurvePoint>& curve) {
  std::string out = std::string(kPretrainHeader) + "\n";
  for (const auto& p : curve)
    out += run_id + "," + p.phase + "," + std::to_string(p.step) + "," + format_double(p.mean_return) + "," +
           std::to_string(p.n_episodes) + "\n";
  return out;
}

std::vector<double> smooth(const std::vector<double>& x, std::size_t window) {
  if (window == 0) throw UsageError("smoothing window must be >= 1");
  std::vector<double> out(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i];
    if (i >= window) acc -= x[i - window];
    out[i] = acc / static_cast<double>(std::min(window, i + 1));
  }
  return out;
}

}  // namespace pathforge
