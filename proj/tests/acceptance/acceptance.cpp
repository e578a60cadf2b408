// Acceptance run: one PASS/FAIL line per primary criterion.
//
// Pre-training outputs and fine-tuning units are cached under --cache and
// reused when their job description is unchanged, so a rerun only pays for
// what changed.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "../support/env_oracle.hpp"
#include "pathforge/harness.hpp"
#include "pathforge/policy.hpp"
#include "pathforge/stats.hpp"
#include "pathforge/synthetic.hpp"

using namespace pathforge;
namespace fs = std::filesystem;

namespace {

struct Options {
  fs::path data = fs::path(PATHFORGE_SOURCE_DIR) / "data";
  fs::path cache = PATHFORGE_ACCEPTANCE_CACHE;
  std::size_t seeds = 10;
  std::size_t parallel = 1;
  std::vector<std::string> only;
};

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- environment and model checks ------------------------------------------

Verdict environment_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t cases = 0, bad = 0;
  std::string first;
  for (const auto& c : env_oracle::small_cases())
    for (bool weighted : {false, true}) {
      const auto d = env_oracle::check_all(c.corpus, c.prefs, weighted);
      ++cases;
      bad += d.size();
      if (!d.empty() && first.empty()) first = c.name + ": " + d[0].what;
    }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 1.0, std::to_string(cases) + " corpus/reward cases, " + std::to_string(bad) +
                                      " discrepancies" + (first.empty() ? "" : " (" + first + ")") + ", " +
                                      fmt(secs, 3) + " s"};
}

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  // 3 documents over 4 keywords.
  const std::vector<std::vector<std::string>> kw{{"k0", "k1"}, {"k1", "k2"}, {"k2", "k3", "k0"}};
  const auto corpus = build_sequential_corpus(3, kw, EmbeddingStore::synthetic({"k0", "k1", "k2", "k3"}, 6), "fd");
  RecommenderConfig cfg;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.embedding_dim = 6;
  Recommender model(cfg, 3);
  const auto state = build_state(corpus, {{0, Feedback::RightLevel, 1.0}, {2, Feedback::TooHard, 0.0}});
  const std::vector<double> w{0.7, -1.3, 0.4};
  auto loss_value = [&](bool backward) {
    ad::Tape tape;
    ForwardContext fwd(tape, model);
    const auto out = fwd(state);
    ad::Var loss = ad::sum(ad::hadamard(out.log_probs, tape.constant(ad::Matrix(3, 1, w))));
    if (backward) tape.backward(loss);
    return loss.value().item();
  };
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  loss_value(true);
  double worst = 0.0;
  std::string worst_name, zero_names;
  const double h = 1e-6;
  for (auto* p : params) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss_value(false);
      p->value[i] = keep - h;
      const double down = loss_value(false);
      p->value[i] = keep;
      const double num = (up - down) / (2 * h);
      diff += (p->grad[i] - num) * (p->grad[i] - num);
      na += p->grad[i] * p->grad[i];
      nn += num * num;
    }
    // Both gradients at rounding level: a zero gradient (the head bias, by
    // softmax shift invariance); a ratio of two rounding errors means nothing.
    if (std::sqrt(na) < 1e-10 && std::sqrt(nn) < 1e-10) {
      zero_names += " " + p->name;
      continue;
    }
    const double rel = std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn));
    if (rel > worst) worst = rel, worst_name = p->name;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << params.size() << " parameter tensors, max relative error " << worst << " (" << worst_name << "), "
    << (zero_names.empty() ? "" : "zero gradient on" + zero_names + ", ") << fmt(secs, 2) << " s";
  return {worst < 1e-4 && secs < 10.0, d.str()};
}

Verdict oracle_on_chains(const LoadedWorld& world) {
  std::size_t checked = 0, wrong = 0;
  auto check = [&](const Corpus& c) {
    const std::vector<Corpus> one{c};
    const auto tasks = sequential_tasks(one);
    OraclePolicy oracle;
    Rng env(1), act(2);
    const double r = evaluate_policy(oracle, tasks[0], 1, env, act);
    ++checked;
    if (r != static_cast<double>(c.n_docs())) ++wrong;
  };
  std::vector<Corpus> synthetic;
  for (std::size_t n = 1; n <= 30; ++n) {
    std::vector<std::vector<std::string>> kw;
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < n; ++i) kw.push_back({"c" + std::to_string(i)}), tokens.push_back(kw.back()[0]);
    synthetic.push_back(build_sequential_corpus(n, kw, EmbeddingStore::synthetic(tokens, 4)));
  }
  for (const auto& c : synthetic) check(c);
  for (const auto& c : world.sequential) check(c);
  return {wrong == 0, std::to_string(checked) + " chains (lengths 1-30 and the " +
                          std::to_string(world.sequential.size()) + " training corpora), " + std::to_string(wrong) +
                          " below n"};
}

Verdict bootstrap_coverage() {
  Rng rng(derive_seed(2024, 0xb007));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t covered = 0;
  const std::size_t trials = 1000;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> x(30);
    for (auto& v : x) v = normal(rng);
    const auto ci = bootstrap_ci(x, rng, 10000, 0.95);
    covered += (ci.lo <= 0.0 && 0.0 <= ci.hi) ? 1 : 0;
  }
  const double cov = static_cast<double>(covered) / trials;
  return {cov >= 0.93 && cov <= 0.97, "coverage " + fmt(100 * cov, 1) + "% over 1000 trials (10000 resamples, n=30)"};
}

// --- pre-training (cached) ---------------------------------------------------

struct PretrainArtifact {
  fs::path checkpoint;
  Json meta;
  std::vector<CurvePoint> curve;
};

std::vector<CurvePoint> read_pretrain_csv(const fs::path& p) {
  std::vector<CurvePoint> out;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string run, phase, step, mean, n;
    std::getline(ss, run, ',');
    std::getline(ss, phase, ',');
    std::getline(ss, step, ',');
    std::getline(ss, mean, ',');
    std::getline(ss, n, ',');
    out.push_back({phase, std::stoul(step), std::stod(mean), std::stoul(n)});
  }
  return out;
}

PretrainArtifact pretrained(const Options& opt, PretrainVariant variant) {
  PretrainJob job;
  job.data_dir = opt.data;
  job.variant = variant;
  job.seed = 0;
  const fs::path dir = opt.cache / "pretrain" / std::string(to_string(variant));
  Json job_json = to_json(job);
  job_json.erase("data_dir");
  const std::string key = job_json.dump();
  PretrainArtifact a{dir / "checkpoint.bin", {}, {}};
  if (fs::exists(dir / "pretrain.json") && fs::exists(a.checkpoint)) {
    a.meta = Json::parse(slurp(dir / "pretrain.json"));
    if (a.meta.value("key", "") == key) {
      a.curve = read_pretrain_csv(dir / "pretrain_curve.csv");
      std::cerr << "reusing pre-training '" << to_string(variant) << "' from " << dir << "\n";
      return a;
    }
  }
  std::cerr << "pre-training '" << to_string(variant) << "' (cached in " << dir << ")\n";
  const auto t0 = std::chrono::steady_clock::now();
  Recommender model(job.model, derive_seed(job.seed, 0x696e6974));
  const auto res = run_pretrain(job, model, &std::cerr);
  fs::create_directories(dir);
  model.save(a.checkpoint);
  std::ofstream(dir / "pretrain_curve.csv") << pretrain_csv(std::string(to_string(variant)), res.curve);
  a.meta = {{"key", key},
            {"imitation_steps", res.imitation_steps},
            {"train_agreement", res.train_agreement},
            {"heldout_agreement", res.heldout_agreement},
            {"seconds", seconds_since(t0)}};
  if (res.feedback) a.meta["feedback_heldout_accuracy"] = res.feedback->heldout_accuracy;
  std::ofstream(dir / "pretrain.json") << a.meta.dump(2) << "\n";
  a.curve = res.curve;
  return a;
}

Verdict imitation_criterion(const PretrainArtifact& stage1) {
  const double agree = stage1.meta.at("heldout_agreement").get<double>();
  const std::size_t steps = stage1.meta.at("imitation_steps").get<std::size_t>();
  return {agree >= 0.95 && steps <= 25000, "held-out agreement " + fmt(100 * agree, 1) + "% after " +
                                               std::to_string(steps) + " supervised steps (train " +
                                               fmt(100 * stage1.meta.at("train_agreement").get<double>(), 1) + "%)"};
}

Verdict pretraining_curve(const PretrainArtifact& full) {
  std::vector<double> ys;
  std::vector<std::size_t> steps;
  for (const auto& p : full.curve)
    if (p.phase == "rl") ys.push_back(p.mean_return), steps.push_back(p.step);
  if (ys.size() < 2) return {false, "no reinforcement-learning rows in the pre-training curve"};
  const auto s = smooth(ys, 3);
  const double first = s.front(), last = s.back();
  const double ratio = last / first;
  return {ratio >= 1.5, "smoothed mean return " + fmt(first) + " at step " + std::to_string(steps.front()) + ", " +
                            fmt(last) + " at step " + std::to_string(steps.back()) + " (ratio " + fmt(ratio, 3) +
                            ", raw max " + fmt(*std::max_element(ys.begin(), ys.end())) + ")"};
}

// --- fine-tuning experiments ------------------------------------------------

struct Arm {
  std::vector<RunRecord> records;
  std::vector<double> finals() const {
    std::vector<double> f;
    for (const auto& r : records) f.push_back(r.final_return);
    return f;
  }
  double epoch_mean(std::size_t e) const {
    std::vector<double> v;
    for (const auto& r : records) v.push_back(r.curve.at(e).test_mean);
    return sample_mean(v);
  }
};

class Experiments {
 public:
  explicit Experiments(const Options& opt) : opt_(opt) {
    for (std::size_t s = 0; s < opt.seeds; ++s) seeds_.push_back(s);
  }

  /// Runs (or reuses) every seed of one arm.
  const Arm& run(PolicyKind policy, PriorScenario sc, const std::optional<fs::path>& checkpoint = {},
                 const std::string& label = {}) {
    const std::string key = (label.empty() ? std::string(to_string(policy)) : label) + "/" + std::string(to_string(sc));
    if (auto it = arms_.find(key); it != arms_.end()) return it->second;
    ExperimentConfig cfg;
    cfg.data_dir = opt_.data;
    cfg.scenario = sc;
    cfg.policy = policy;
    cfg.checkpoint = checkpoint;
    cfg.label = label;
    cfg.seeds = seeds_;
    cfg.out_dir = opt_.cache / "runs";
    const auto t0 = std::chrono::steady_clock::now();
    auto outcome = run_experiment(cfg, false, opt_.parallel, &std::cerr);
    if (outcome.skipped < outcome.records.size())
      std::cerr << cfg.display_name() << "/" << to_string(sc) << ": " << fmt(seconds_since(t0), 1) << " s\n";
    all_.insert(all_.end(), outcome.records.begin(), outcome.records.end());
    return arms_[key] = Arm{std::move(outcome.records)};
  }

  void write_outputs() const {
    if (all_.empty()) return;
    const auto rows = summarize(all_, nullptr);
    std::ofstream(opt_.cache / "summary.json") << to_json(rows).dump(2) << "\n";
    std::ofstream(opt_.cache / "bands.csv") << bands_csv(bootstrap_curves(all_, 0));
    std::cerr << summary_table(rows);
  }

 private:
  const Options& opt_;
  std::vector<std::uint64_t> seeds_;
  std::vector<RunRecord> all_;
  std::map<std::string, Arm> arms_;
};

const std::vector<PriorScenario> kScenarios{PriorScenario::None, PriorScenario::DecreasingExp,
                                            PriorScenario::Uniform};

Verdict transfer(Experiments& ex, const PretrainArtifact& full) {
  bool ok = true;
  std::string detail;
  for (auto sc : kScenarios) {
    const std::string s(to_string(sc));
    const auto& pre = ex.run(PolicyKind::Gnn, sc, full.checkpoint);
    const auto& scr = ex.run(PolicyKind::GnnScratch, sc);
    const auto a = pre.finals(), b = scr.finals();
    Rng r1(derive_seed(0, 0xc1, static_cast<std::uint64_t>(sc))), r2(derive_seed(0, 0xc2, static_cast<std::uint64_t>(sc)));
    const auto ca = bootstrap_ci(a, r1), cb = bootstrap_ci(b, r2);
    const auto t = paired_t_test(a, b);
    const bool separated = ca.lo > cb.hi;
    const bool ordered = sample_mean(a) > sample_mean(b) && (separated || t.p_value < 0.05);
    ok = ok && ordered;
    detail += s + " " + fmt(sample_mean(a)) + " [" + fmt(ca.lo) + "," + fmt(ca.hi) + "] vs " + fmt(sample_mean(b)) +
              " [" + fmt(cb.lo) + "," + fmt(cb.hi) + "] p=" + fmt(t.p_value, 4) + (ordered ? "" : " (not ordered)") +
              "; ";
  }
  const double none = sample_mean(ex.run(PolicyKind::Gnn, PriorScenario::None, full.checkpoint).finals());
  const bool in_range = none >= 15.0 && none <= 33.0;
  detail += "pretrained/none " + fmt(none) + (in_range ? " in" : " outside") + " [15,33]";
  return {ok && in_range, detail};
}

Verdict baseline_ordering(Experiments& ex) {
  std::vector<double> m;
  for (auto sc : kScenarios) {
    m.push_back(sample_mean(ex.run(PolicyKind::Cmab, sc).finals()));
    ex.run(PolicyKind::Random, sc);
  }
  const double rnd = sample_mean(ex.run(PolicyKind::Random, PriorScenario::None).finals());
  const bool ok = m[0] > m[1] && m[1] > m[2] && m[0] > rnd;
  return {ok, "cmab " + fmt(m[0]) + " -> " + fmt(m[1]) + " -> " + fmt(m[2]) + ", random/none " + fmt(rnd)};
}

Verdict variance(Experiments& ex, const PretrainArtifact& full) {
  const auto a = ex.run(PolicyKind::Gnn, PriorScenario::None, full.checkpoint).finals();
  const auto b = ex.run(PolicyKind::GnnScratch, PriorScenario::None).finals();
  const double sa = sample_sd(a), sb = sample_sd(b);
  return {a.size() >= 10 && sa < sb, "sd pretrained " + fmt(sa) + " vs scratch " + fmt(sb) + " over " +
                                         std::to_string(a.size()) + " seeds"};
}

Verdict variants(Experiments& ex, const PretrainArtifact& full, const PretrainArtifact& imitation,
                 const PretrainArtifact& feedback) {
  const auto im = ex.run(PolicyKind::Gnn, PriorScenario::None, imitation.checkpoint, "gnn-imitation");
  const auto fb = ex.run(PolicyKind::Gnn, PriorScenario::None, feedback.checkpoint, "gnn-feedback");
  const double full1 = ex.run(PolicyKind::Gnn, PriorScenario::None, full.checkpoint).epoch_mean(0), im1 = im.epoch_mean(0), fb1 = fb.epoch_mean(0);
  return {im1 < full1 && fb1 < full1, "epoch-1 mean: full " + fmt(full1) + ", imitation-only " + fmt(im1) +
                                          ", feedback-prediction " + fmt(fb1) + " (final " +
                                          fmt(sample_mean(im.finals())) + " / " + fmt(sample_mean(fb.finals())) + ")"};
}

Verdict determinism(const Options& opt, const PretrainArtifact& full) {
  std::vector<std::string> checked;
  bool ok = true;
  for (auto policy : {PolicyKind::Gnn, PolicyKind::GnnScratch, PolicyKind::Cmab, PolicyKind::PpoMlp,
                      PolicyKind::Random}) {
    std::string csv[2];
    for (int rep = 0; rep < 2; ++rep) {
      ExperimentConfig cfg;
      cfg.data_dir = opt.data;
      cfg.scenario = PriorScenario::Uniform;
      cfg.policy = policy;
      if (policy == PolicyKind::Gnn) cfg.checkpoint = full.checkpoint;
      cfg.seeds = {7};
      cfg.protocol.epochs = 2;
      cfg.out_dir = opt.cache / "determinism" / std::to_string(rep);
      run_experiment(cfg, true, 1, nullptr);
      csv[rep] = slurp(cfg.out_dir / config_hash(cfg) / "7" / "curve.csv");
    }
    const bool same = !csv[0].empty() && csv[0] == csv[1];
    ok = ok && same;
    checked.push_back(std::string(to_string(policy)) + (same ? "" : " (differs)"));
  }
  // A short pre-training run as well.
  std::string pre[2];
  for (int rep = 0; rep < 2; ++rep) {
    PretrainJob job;
    job.data_dir = opt.data;
    job.model.hidden = 16;
    job.model.heads = 2;
    job.pretrain.imitation.max_steps = 100;
    job.pretrain.rl.total_steps = 2048;
    job.seed = 3;
    Recommender model(job.model, derive_seed(job.seed, 0x696e6974));
    pre[rep] = pretrain_csv("det", run_pretrain(job, model, nullptr).curve);
  }
  const bool same = pre[0] == pre[1];
  ok = ok && same;
  checked.push_back(std::string("pretrain") + (same ? "" : " (differs)"));
  std::string detail = "identical curve CSVs on rerun for";
  for (const auto& c : checked) detail += " " + c;
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"acceptance criteria"};
  app.add_option("--data", opt.data)->capture_default_str();
  app.add_option("--cache", opt.cache, "pre-training and run cache")->capture_default_str();
  app.add_option("--seeds", opt.seeds, "seeds per experiment arm")->capture_default_str();
  app.add_option("--parallel", opt.parallel)->capture_default_str();
  app.add_option("--only", opt.only, "criterion ids to run");
  CLI11_PARSE(app, argc, argv);

  const auto world = load_world(opt.data);
  fs::create_directories(opt.cache);

  std::size_t failed = 0, ran = 0;
  auto wanted = [&](const std::string& id) {
    return opt.only.empty() || std::find(opt.only.begin(), opt.only.end(), id) != opt.only.end();
  };
  auto report = [&](const std::string& id, const std::function<Verdict()>& f) {
    if (!wanted(id)) return;
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    ++ran;
    failed += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS " : "FAIL ") << id << ": " << v.detail << std::endl;
  };

  report("environment-exactness", environment_exactness);
  report("gradient-correctness", gradient_correctness);
  report("oracle-chains", [&] { return oracle_on_chains(world); });
  report("bootstrap-coverage", bootstrap_coverage);

  auto need = [&](std::initializer_list<const char*> ids) {
    for (const char* id : ids)
      if (wanted(id)) return true;
    return false;
  };
  std::optional<PretrainArtifact> full, imitation, feedback;
  if (need({"imitation-pretraining", "variants"})) imitation = pretrained(opt, PretrainVariant::ImitationOnly);
  if (need({"pretraining-curve", "transfer", "variance", "variants", "determinism"}))
    full = pretrained(opt, PretrainVariant::Full);
  if (need({"variants"})) feedback = pretrained(opt, PretrainVariant::FeedbackPrediction);

  report("imitation-pretraining", [&] { return imitation_criterion(*imitation); });
  report("pretraining-curve", [&] { return pretraining_curve(*full); });

  Experiments ex(opt);
  report("transfer", [&] { return transfer(ex, *full); });
  report("baseline-ordering", [&] { return baseline_ordering(ex); });
  report("variance", [&] { return variance(ex, *full); });
  report("variants", [&] { return variants(ex, *full, *imitation, *feedback); });
  report("determinism", [&] { return determinism(opt, *full); });
  ex.write_outputs();

  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
