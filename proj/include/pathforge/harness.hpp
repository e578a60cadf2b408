#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathforge/policy.hpp"
#include "pathforge/ppo.hpp"
#include "pathforge/recommender.hpp"
#include "pathforge/student_env.hpp"
#include "pathforge/synthetic.hpp"
#include "pathforge/training.hpp"

namespace pathforge {

using Json = nlohmann::json;

enum class PolicyKind { Gnn, GnnScratch, Cmab, PpoMlp, Random, Oracle };

std::string_view to_string(PolicyKind p);
/// Throws ConfigError listing the valid names.
PolicyKind policy_from_string(std::string_view s);
std::string valid_policy_names();
/// Throws ConfigError listing the valid names.
PriorScenario parse_scenario(std::string_view s);

/// Parses "a..b" (inclusive), "a,b,c" or a single integer.
std::vector<std::uint64_t> parse_seeds(std::string_view s);

// --- fine-tuning experiments ------------------------------------------------

struct ExperimentConfig {
  std::filesystem::path data_dir;  // embeddings.txt + grid.json
  PriorScenario scenario = PriorScenario::None;
  PolicyKind policy = PolicyKind::Gnn;
  std::string label;  // name used in summaries; defaults to the policy name
  std::optional<std::filesystem::path> checkpoint;
  RecommenderConfig model;
  TrainConfig train = TrainConfig::finetune_defaults();
  FinetuneProtocol protocol;
  CmabConfig cmab;
  PpoConfig ppo;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir = "runs";

  /// Referenced files exist, seeds distinct, checkpoint given iff the policy
  /// needs one.
  void validate() const;
  std::string display_name() const { return label.empty() ? std::string(to_string(policy)) : label; }
};

Json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; relative paths resolve against `base`.
ExperimentConfig experiment_from_json(const Json& j, const std::filesystem::path& base = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical JSON of the config without
/// seeds and output directory. The checkpoint and data files enter through
/// their contents, not their paths.
std::string config_hash(const ExperimentConfig& cfg);

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string policy;  // display name
  std::string scenario;
  std::string started;
  std::string finished;
  std::vector<EpochPoint> curve;
  double final_return = 0.0;
  Json config;
};

Json to_json(const RunRecord& r);
RunRecord record_from_json(const Json& j);

inline constexpr const char* kCurveHeader = "run_id,seed,epoch,split,mean_return,n_episodes";
inline constexpr const char* kEpisodeHeader = "run_id,seed,episode,step,doc_id,feedback,reward";
inline constexpr const char* kPretrainHeader = "run_id,phase,step,mean_return,n_episodes";
inline constexpr const char* kBandHeader = "scenario,policy,epoch,mean,ci_lo,ci_hi,n_seeds";

/// Shortest round-trip decimal form.
std::string format_double(double v);

std::string curve_csv(const std::string& run_id, std::uint64_t seed, const std::vector<EpochPoint>& curve);
std::string episode_csv(const std::string& run_id, std::uint64_t seed, const std::vector<EpisodeLog>& logs);

/// Fine-tunes / evaluates one (config, seed) unit in memory.
struct UnitResult {
  FinetuneResult finetune;
  std::unique_ptr<Recommender> model;  // graph policies only
  std::unique_ptr<PpoAgent> ppo;       // ppo-mlp only
};
UnitResult run_unit(const ExperimentConfig& cfg, const Corpus& grid, std::uint64_t seed);

struct ExperimentOutcome {
  std::vector<RunRecord> records;  // in seed order
  std::size_t skipped = 0;         // units already on disk
};

/// Runs every seed, writing runs/<hash>/<seed>/{curve.csv, episodes.csv,
/// record.json[, checkpoint.bin]}. Existing records are reused unless `force`.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, bool force, std::size_t parallel, std::ostream* log);

/// Every record.json below `dir`; throws ConfigError when there is none.
std::vector<RunRecord> load_records(const std::filesystem::path& dir);

// --- summaries ---------------------------------------------------------------

struct SummaryRow {
  std::string scenario;
  std::string policy;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  std::optional<double> reference_mean;
  std::optional<double> reference_sd;
};

/// Final-return mean and sd per (scenario, policy), scenarios in
/// none/decexp/uniform order. `reference` is the rows array of a reference
/// table, matched on scenario and policy.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, const Json* reference = nullptr);
Json to_json(const std::vector<SummaryRow>& rows);
std::string summary_table(const std::vector<SummaryRow>& rows);

struct CurveBand {
  std::string scenario;
  std::string policy;
  std::size_t epoch = 0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n_seeds = 0;
};

/// Per-epoch test means across seeds with bootstrap-t intervals.
std::vector<CurveBand> bootstrap_curves(const std::vector<RunRecord>& records, std::uint64_t seed,
                                        std::size_t resamples = 10000, double level = 0.95);
std::string bands_csv(const std::vector<CurveBand>& bands);

// --- pre-training -------------------------------------------------------------

enum class PretrainVariant { Full, ImitationOnly, FeedbackPrediction };
std::string_view to_string(PretrainVariant v);
PretrainVariant pretrain_variant_from_string(std::string_view s);

struct PretrainJob {
  std::filesystem::path data_dir;
  PretrainVariant variant = PretrainVariant::Full;
  RecommenderConfig model;
  PretrainConfig pretrain;
  FeedbackPredictionConfig feedback;
  std::uint64_t seed = 0;
};

Json to_json(const PretrainJob& job);
PretrainJob pretrain_job_from_json(const Json& j, const std::filesystem::path& base = {});

struct PretrainOutput {
  std::vector<CurvePoint> curve;
  std::size_t imitation_steps = 0;
  double train_agreement = 0.0;
  double heldout_agreement = 0.0;  // fresh oracle rollouts
  std::optional<FeedbackPredictionResult> feedback;
};

PretrainOutput run_pretrain(const PretrainJob& job, Recommender& model, std::ostream* log);
std::string pretrain_csv(const std::string& run_id, const std::vector<CurvePoint>& curve);

/// Oracle agreement of the greedy policy on fresh zero-prior rollouts.
double heldout_agreement(Recommender& model, const std::vector<Task>& tasks, std::uint64_t seed,
                         std::size_t episodes_per_task = 2);

/// Trailing moving average with the given window (shorter at the start).
std::vector<double> smooth(const std::vector<double>& x, std::size_t window);

}  // namespace pathforge
