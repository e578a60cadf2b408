#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "pathforge/harness.hpp"
#include "pathforge/stats.hpp"

using namespace pathforge;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

ExperimentConfig random_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.data_dir = fixtures::data_dir();
  cfg.scenario = PriorScenario::Uniform;
  cfg.policy = PolicyKind::Random;
  cfg.seeds = {0, 1, 2};
  cfg.out_dir = out;
  return cfg;
}

RunRecord record(const std::string& scenario, const std::string& policy, std::uint64_t seed, double final,
                 std::vector<double> curve = {}) {
  RunRecord r;
  r.scenario = scenario;
  r.policy = policy;
  r.seed = seed;
  r.final_return = final;
  for (std::size_t e = 0; e < curve.size(); ++e) r.curve.push_back({e + 1, 0.0, 5, curve[e], 20});
  return r;
}

}  // namespace

TEST(Seeds, ParsesRangesListsAndSingles) {
  EXPECT_EQ(parse_seeds("0..3"), (std::vector<std::uint64_t>{0, 1, 2, 3}));
  EXPECT_EQ(parse_seeds("7,2,9"), (std::vector<std::uint64_t>{7, 2, 9}));
  EXPECT_EQ(parse_seeds("42"), (std::vector<std::uint64_t>{42}));
  EXPECT_EQ(parse_seeds("5..5"), (std::vector<std::uint64_t>{5}));
  for (const char* bad : {"", "3..1", "a", "1,,2", "1..", "-1", "1.5"}) EXPECT_THROW(parse_seeds(bad), ConfigError) << bad;
}

TEST(Policies, NamesRoundTripAndUnknownListsValid) {
  for (auto p : {PolicyKind::Gnn, PolicyKind::GnnScratch, PolicyKind::Cmab, PolicyKind::PpoMlp, PolicyKind::Random,
                 PolicyKind::Oracle})
    EXPECT_EQ(policy_from_string(to_string(p)), p);
  try {
    policy_from_string("dqn");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dqn"), std::string::npos);
    for (const char* name : {"gnn", "gnn-scratch", "cmab", "ppo-mlp", "random", "oracle"})
      EXPECT_NE(msg.find(name), std::string::npos) << name;
  }
  EXPECT_THROW(parse_scenario("often"), ConfigError);
}

TEST(ExperimentConfig, JsonRoundTrip) {
  fixtures::TempDir dir;
  auto cfg = random_config(dir.path);
  cfg.train.lr = 2e-4;
  cfg.ppo.hidden = 128;
  cfg.cmab.model = CmabModel::Shared;
  cfg.label = "rnd";
  const auto back = experiment_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(ExperimentConfig, HashIgnoresKeyOrderSeedsAndOutput) {
  fixtures::TempDir dir;
  const auto cfg = random_config(dir.path);
  const Json j = to_json(cfg);
  // Rebuild the object with keys inserted in reverse order.
  Json reversed = Json::object();
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) reversed[*it] = j.at(*it);
  EXPECT_EQ(config_hash(experiment_from_json(reversed)), config_hash(cfg));

  auto other = cfg;
  other.seeds = {9};
  other.out_dir = dir.path / "elsewhere";
  EXPECT_EQ(config_hash(other), config_hash(cfg));
  other.protocol.epochs = 3;
  EXPECT_NE(config_hash(other), config_hash(cfg));
  EXPECT_EQ(config_hash(cfg).size(), 16u);
}

TEST(ExperimentConfig, HashFollowsCheckpointContentNotPath) {
  fixtures::TempDir dir;
  RecommenderConfig m;
  m.hidden = 16;
  m.heads = 2;
  Recommender a(m, 1), b(m, 2);
  a.save(dir.path / "a.bin");
  fs::copy_file(dir.path / "a.bin", dir.path / "a_copy.bin");
  b.save(dir.path / "b.bin");
  auto cfg = random_config(dir.path);
  cfg.policy = PolicyKind::Gnn;
  cfg.model = m;
  cfg.checkpoint = dir.path / "a.bin";
  const auto h = config_hash(cfg);
  cfg.checkpoint = dir.path / "a_copy.bin";
  EXPECT_EQ(config_hash(cfg), h);
  cfg.checkpoint = dir.path / "b.bin";
  EXPECT_NE(config_hash(cfg), h);
}

TEST(ExperimentConfig, ValidationErrors) {
  fixtures::TempDir dir;
  auto cfg = random_config(dir.path);
  EXPECT_NO_THROW(cfg.validate());
  cfg.policy = PolicyKind::Gnn;
  EXPECT_THROW(cfg.validate(), ConfigError);  // no checkpoint
  cfg = random_config(dir.path);
  cfg.seeds = {1, 1};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = random_config(dir.path);
  cfg.data_dir = dir.path / "nothing";
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = random_config(dir.path);
  cfg.checkpoint = dir.path / "missing.bin";
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RunExperiment, WritesGoldenSchemaAndSkipsCompletedUnits) {
  fixtures::TempDir dir;
  const auto cfg = random_config(dir.path);
  const auto first = run_experiment(cfg, false, 1, nullptr);
  ASSERT_EQ(first.records.size(), 3u);
  EXPECT_EQ(first.skipped, 0u);
  const auto unit = dir.path / config_hash(cfg) / "1";
  for (const char* f : {"curve.csv", "episodes.csv", "record.json"}) EXPECT_TRUE(fs::exists(unit / f)) << f;
  EXPECT_FALSE(fs::exists(unit / "checkpoint.bin"));

  const auto curve = lines_of(slurp(unit / "curve.csv"));
  ASSERT_EQ(curve.size(), 21u);
  EXPECT_EQ(curve[0], "run_id,seed,epoch,split,mean_return,n_episodes");
  EXPECT_EQ(curve[1].substr(0, 17 + 10), config_hash(cfg) + ",1,1,train,");
  EXPECT_EQ(curve[2].substr(0, 26), config_hash(cfg) + ",1,1,test,");
  const auto eps = lines_of(slurp(unit / "episodes.csv"));
  ASSERT_EQ(eps.size(), 1u + 200u * 11u);
  EXPECT_EQ(eps[0], "run_id,seed,episode,step,doc_id,feedback,reward");

  const auto rec = record_from_json(Json::parse(slurp(unit / "record.json")));
  EXPECT_EQ(rec.seed, 1u);
  EXPECT_EQ(rec.policy, "random");
  EXPECT_EQ(rec.scenario, "uniform");
  EXPECT_EQ(rec.curve.size(), 10u);
  EXPECT_EQ(rec.final_return, rec.curve.back().test_mean);
  EXPECT_EQ(rec.final_return, first.records[1].final_return);

  std::ostringstream log;
  const auto again = run_experiment(cfg, false, 1, &log);
  EXPECT_EQ(again.skipped, 3u);
  EXPECT_NE(log.str().find("skip"), std::string::npos);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(again.records[i].final_return, first.records[i].final_return);

  const auto forced = run_experiment(cfg, true, 1, nullptr);
  EXPECT_EQ(forced.skipped, 0u);
  EXPECT_EQ(forced.records[2].final_return, first.records[2].final_return);
}

TEST(RunExperiment, SeedsAreIsolated) {
  fixtures::TempDir a, b, c;
  auto cfg = random_config(a.path);
  cfg.policy = PolicyKind::Cmab;
  const auto all = run_experiment(cfg, false, 1, nullptr);
  cfg.out_dir = b.path;
  cfg.seeds = {2};
  const auto alone = run_experiment(cfg, false, 1, nullptr);
  EXPECT_EQ(alone.records[0].final_return, all.records[2].final_return);
  cfg.out_dir = c.path;
  cfg.seeds = {0, 1, 2};
  const auto parallel = run_experiment(cfg, false, 3, nullptr);
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_EQ(parallel.records[i].curve.size(), all.records[i].curve.size());
    for (std::size_t e = 0; e < all.records[i].curve.size(); ++e)
      EXPECT_EQ(parallel.records[i].curve[e].test_mean, all.records[i].curve[e].test_mean);
  }
}

TEST(RunExperiment, LoadRecordsFindsEveryUnit) {
  fixtures::TempDir dir;
  auto cfg = random_config(dir.path);
  cfg.seeds = {0, 1};
  run_experiment(cfg, false, 1, nullptr);
  cfg.policy = PolicyKind::Oracle;
  run_experiment(cfg, false, 1, nullptr);
  EXPECT_EQ(load_records(dir.path).size(), 4u);
  fixtures::TempDir empty;
  EXPECT_THROW(load_records(empty.path), ConfigError);
}

TEST(Summary, ExactMeansAndOrder) {
  const std::vector<RunRecord> recs{record("uniform", "cmab", 0, 4.0), record("none", "random", 0, 1.0),
                                    record("none", "random", 1, 3.0), record("uniform", "cmab", 1, 6.0),
                                    record("none", "gnn", 0, 20.0),   record("decexp", "gnn", 0, 10.0)};
  const Json ref = Json::parse(R"([{"scenario":"none","policy":"gnn","mean":24.81,"sd":2.63}])");
  const auto rows = summarize(recs, &ref);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].scenario, "none");
  EXPECT_EQ(rows[0].policy, "gnn");
  EXPECT_EQ(*rows[0].reference_mean, 24.81);
  EXPECT_EQ(rows[1].policy, "random");
  EXPECT_EQ(rows[1].mean, 2.0);
  EXPECT_NEAR(rows[1].sd, std::sqrt(2.0), 1e-12);
  EXPECT_EQ(rows[2].scenario, "decexp");
  EXPECT_EQ(rows[3].scenario, "uniform");
  EXPECT_EQ(rows[3].mean, 5.0);
  EXPECT_FALSE(rows[3].reference_mean.has_value());
  const auto j = to_json(rows);
  EXPECT_EQ(j.size(), 4u);
  EXPECT_TRUE(j[1]["reference_mean"].is_null());
  EXPECT_NE(summary_table(rows).find("uniform"), std::string::npos);
}

TEST(Summary, BootstrapBandsPerEpoch) {
  const std::vector<RunRecord> recs{record("none", "gnn", 0, 3.0, {1.0, 3.0}), record("none", "gnn", 1, 5.0, {3.0, 5.0}),
                                    record("none", "gnn", 2, 4.0, {2.0, 4.0})};
  const auto bands = bootstrap_curves(recs, 7, 2000);
  ASSERT_EQ(bands.size(), 2u);
  EXPECT_EQ(bands[0].epoch, 1u);
  EXPECT_EQ(bands[0].n_seeds, 3u);
  EXPECT_DOUBLE_EQ(bands[0].mean, 2.0);
  EXPECT_DOUBLE_EQ(bands[1].mean, 4.0);
  EXPECT_LE(bands[1].lo, 4.0);
  EXPECT_GE(bands[1].hi, 4.0);
  EXPECT_EQ(bands_csv(bands).substr(0, bands_csv(bands).find('\n')), "scenario,policy,epoch,mean,ci_lo,ci_hi,n_seeds");
  const auto again = bootstrap_curves(recs, 7, 2000);
  EXPECT_EQ(again[1].lo, bands[1].lo);
}

TEST(Summary, SmoothIsTrailingMean) {
  EXPECT_EQ(smooth({1, 2, 3, 4, 5}, 2), (std::vector<double>{1, 1.5, 2.5, 3.5, 4.5}));
  EXPECT_EQ(smooth({4, 8}, 5), (std::vector<double>{4, 6}));
  EXPECT_THROW(smooth({1}, 0), UsageError);
}

TEST(Csv, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 24.81, 1e-300, 55.0}) EXPECT_EQ(std::stod(format_double(v)), v);
  EXPECT_EQ(format_double(2.0), "2");
}

TEST(Pretrain, JobJsonRoundTrip) {
  PretrainJob job;
  job.data_dir = "/tmp/x";
  job.variant = PretrainVariant::FeedbackPrediction;
  job.model.hidden = 64;
  job.pretrain.rl.total_steps = 2048;
  job.seed = 5;
  const auto back = pretrain_job_from_json(to_json(job));
  EXPECT_EQ(to_json(back), to_json(job));
  EXPECT_EQ(pretrain_variant_from_string("imitation"), PretrainVariant::ImitationOnly);
  EXPECT_THROW(pretrain_variant_from_string("everything"), ConfigError);
}

TEST(Pretrain, CsvSchema) {
  const std::vector<CurvePoint> curve{{"imitation", 10, 4.5, 28}, {"rl", 1024, 9.0, 80}};
  const auto lines = lines_of(pretrain_csv("full-0", curve));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "run_id,phase,step,mean_return,n_episodes");
  EXPECT_EQ(lines[1], "full-0,imitation,10,4.5,28");
  EXPECT_EQ(lines[2], "full-0,rl,1024,9,80");
}
