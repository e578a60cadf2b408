#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pathforge/harness.hpp"
#include "pathforge/stats.hpp"
#include "pathforge/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pathforge;

namespace {

struct RunFlags {
  std::string config;
  std::string data;
  std::string seeds = "0..9";
  std::string scenario;
  std::string policy;
  std::string checkpoint;
  std::string label;
  std::string out;
  bool force = false;
  std::size_t parallel = 1;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, const std::string& policies) {
  cmd->add_option("--config", f.config, "experiment JSON; flags below override it");
  cmd->add_option("--data", f.data, "data directory (default: $PATHFORGE_DATA_DIR or ./data)");
  cmd->add_option("--seeds", f.seeds, "a..b, a,b,c or a single seed")->capture_default_str();
  cmd->add_option("--scenario", f.scenario, "none, decexp or uniform");
  cmd->add_option("--policy", f.policy, policies);
  cmd->add_option("--checkpoint", f.checkpoint, "pre-trained recommender");
  cmd->add_option("--label", f.label, "name used in summaries");
  cmd->add_option("--out", f.out, "runs directory (default: runs)");
  cmd->add_flag("--force", f.force, "rerun units that already have a record");
  cmd->add_option("--parallel", f.parallel, "concurrent runs")->capture_default_str();
}

ExperimentConfig build_config(const RunFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_experiment(f.config);
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (cfg.data_dir.empty()) cfg.data_dir = data_root("data");
  if (!f.scenario.empty()) cfg.scenario = parse_scenario(f.scenario);
  if (!f.policy.empty()) cfg.policy = policy_from_string(f.policy);
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  if (!f.label.empty()) cfg.label = f.label;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (cfg.seeds.empty() || !f.seeds.empty()) cfg.seeds = parse_seeds(f.seeds);
  return cfg;
}

int run(const RunFlags& f, bool baseline) {
  const auto cfg = build_config(f);
  const bool graph = cfg.policy == PolicyKind::Gnn || cfg.policy == PolicyKind::GnnScratch;
  if (baseline == graph)
    throw ConfigError(std::string("policy ") + std::string(to_string(cfg.policy)) +
                      (baseline ? " is not a baseline; use finetune" : " is a baseline; use baseline"));
  const auto outcome = run_experiment(cfg, f.force, f.parallel, &std::cerr);
  std::vector<double> finals;
  for (const auto& r : outcome.records) finals.push_back(r.final_return);
  std::cout << cfg.display_name() << "/" << to_string(cfg.scenario) << " hash " << config_hash(cfg) << ": "
            << finals.size() << " seeds (" << outcome.skipped << " reused), final return mean "
            << format_double(sample_mean(finals)) << " sd " << format_double(sample_sd(finals)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pre-training and fine-tuning of graph recommenders for learning paths"};
  app.require_subcommand(1);

  std::string gen_out = "data";
  std::uint64_t gen_seed = SyntheticWorldConfig{}.seed;
  auto* gen = app.add_subcommand("generate", "write the synthetic corpora and embeddings");
  gen->add_option("--out", gen_out)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();

  std::string pre_config, pre_data, pre_variant = "full", pre_out = "pretrain";
  std::uint64_t pre_seed = 0;
  std::optional<std::size_t> pre_hidden, pre_rl_steps, pre_max_imitation;
  auto* pre = app.add_subcommand("pretrain", "pre-train a recommender on the sequential corpora");
  pre->add_option("--config", pre_config, "pre-training JSON; flags below override it");
  pre->add_option("--data", pre_data, "data directory (default: $PATHFORGE_DATA_DIR or ./data)");
  pre->add_option("--variant", pre_variant, "full, imitation or feedback")->capture_default_str();
  pre->add_option("--seed", pre_seed)->capture_default_str();
  pre->add_option("--hidden", pre_hidden, "hidden width");
  pre->add_option("--rl-steps", pre_rl_steps, "environment steps of the REINFORCE stage");
  pre->add_option("--max-imitation-steps", pre_max_imitation, "cap on supervised steps");
  pre->add_option("--out", pre_out, "output directory")->capture_default_str();

  RunFlags ft_flags, bl_flags;
  auto* ft = app.add_subcommand("finetune", "fine-tune a graph recommender on the grid corpus");
  add_run_flags(ft, ft_flags, "gnn or gnn-scratch");
  auto* bl = app.add_subcommand("baseline", "run a baseline policy on the grid corpus");
  add_run_flags(bl, bl_flags, "cmab, ppo-mlp, random or oracle");

  std::string sum_dir = "runs", sum_ref, sum_json;
  auto* sum = app.add_subcommand("summarize", "final-return table per scenario and policy");
  sum->add_option("dir", sum_dir, "runs directory")->capture_default_str();
  sum->add_option("--reference", sum_ref, "reference table JSON");
  sum->add_option("--json", sum_json, "also write the table as JSON");

  std::string bs_dir = "runs", bs_out;
  std::size_t bs_resamples = 10000;
  std::uint64_t bs_seed = 0;
  double bs_level = 0.95;
  auto* bs = app.add_subcommand("bootstrap", "per-epoch means with bootstrap-t intervals");
  bs->add_option("dir", bs_dir, "runs directory")->capture_default_str();
  bs->add_option("--out", bs_out, "CSV path (default: stdout)");
  bs->add_option("--resamples", bs_resamples)->capture_default_str();
  bs->add_option("--level", bs_level)->capture_default_str();
  bs->add_option("--seed", bs_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      SyntheticWorldConfig cfg;
      cfg.seed = gen_seed;
      const auto world = generate_world(cfg);
      write_world(world, gen_out);
      std::cout << "wrote " << world.sequential.size() << " sequential corpora and grid (" << world.grid.n_docs()
                << " documents) to " << gen_out << "\n";
    } else if (*pre) {
      PretrainJob job;
      fs::path base;
      if (!pre_config.empty()) {
        std::ifstream in(pre_config);
        if (!in) throw ConfigError("cannot read " + pre_config);
        job = pretrain_job_from_json(Json::parse(in), fs::path(pre_config).parent_path());
      }
      if (!pre_data.empty()) job.data_dir = pre_data;
      if (job.data_dir.empty()) job.data_dir = data_root("data");
      if (pre->count("--variant") || pre_config.empty()) job.variant = pretrain_variant_from_string(pre_variant);
      if (pre->count("--seed") || pre_config.empty()) job.seed = pre_seed;
      if (pre_hidden) job.model.hidden = *pre_hidden;
      if (pre_rl_steps) job.pretrain.rl.total_steps = *pre_rl_steps;
      if (pre_max_imitation) job.pretrain.imitation.max_steps = *pre_max_imitation;
      job.model.validate();
      job.pretrain.rl.validate();

      Recommender model(job.model, derive_seed(job.seed, 0x696e6974));
      const auto res = run_pretrain(job, model, &std::cerr);
      fs::create_directories(pre_out);
      model.save(fs::path(pre_out) / "checkpoint.bin");
      const std::string run_id = std::string(to_string(job.variant)) + "-" + std::to_string(job.seed);
      std::ofstream(fs::path(pre_out) / "pretrain_curve.csv") << pretrain_csv(run_id, res.curve);
      Json meta{{"job", to_json(job)},
                {"imitation_steps", res.imitation_steps},
                {"train_agreement", res.train_agreement},
                {"heldout_agreement", res.heldout_agreement}};
      if (res.feedback)
        meta["feedback"] = {{"steps", res.feedback->steps},
                            {"train_accuracy", res.feedback->train_accuracy},
                            {"heldout_accuracy", res.feedback->heldout_accuracy}};
      std::ofstream(fs::path(pre_out) / "pretrain.json") << meta.dump(2) << "\n";
      std::cout << "checkpoint " << (fs::path(pre_out) / "checkpoint.bin").string() << "\n";
    } else if (*ft) {
      return run(ft_flags, false);
    } else if (*bl) {
      return run(bl_flags, true);
    } else if (*sum) {
      const auto records = load_records(sum_dir);
      Json ref;
      if (!sum_ref.empty()) {
        std::ifstream in(sum_ref);
        if (!in) throw ConfigError("cannot read " + sum_ref);
        ref = Json::parse(in).at("rows");
      }
      const auto rows = summarize(records, sum_ref.empty() ? nullptr : &ref);
      std::cout << summary_table(rows);
      if (!sum_json.empty()) std::ofstream(sum_json) << to_json(rows).dump(2) << "\n";
    } else if (*bs) {
      const auto bands = bootstrap_curves(load_records(bs_dir), bs_seed, bs_resamples, bs_level);
      if (bs_out.empty()) std::cout << bands_csv(bands);
      else std::ofstream(bs_out) << bands_csv(bands);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
