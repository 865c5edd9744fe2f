// Command-line surface for the preference-optimization lab: synthetic data
// generation, preference curation, pretraining, preference training,
// win-rate evaluation, and gradient/cancellation diagnostics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ncpo/checkpoint.hpp"
#include "ncpo/config.hpp"
#include "ncpo/gradcheck.hpp"
#include "ncpo/io.hpp"
#include "ncpo/objectives.hpp"
#include "ncpo/pref_graph.hpp"
#include "ncpo/reporting.hpp"
#include "ncpo/train_eval.hpp"

namespace {

using namespace ncpo;

ToyTask task_from(const RunConfig& c) {
  return make_toy_task(c.task_conditions, c.task_data_dim, c.task_spread, c.task_sharpen,
                       c.task_mode_radius);
}

VarianceSchedule sched_from(const RunConfig& c) {
  return build_schedule(c.sched_timesteps, c.sched_beta_start, c.sched_beta_end);
}

Arch arch_from(const RunConfig& c) {
  Arch a;
  a.data_dim = c.task_data_dim;
  a.hidden = c.arch_hidden;
  a.embed_dim = c.arch_embed_dim;
  a.conditions = c.task_conditions;
  a.time_features = c.arch_time_features;
  a.cond_features = c.arch_cond_features;
  a.validate();
  return a;
}

TrainConfig train_config_from(const RunConfig& c) {
  TrainConfig tc;
  tc.steps = c.train_steps;
  tc.batch_size = c.train_batch;
  tc.learning_rate = c.train_lr;
  tc.beta1 = c.adam_beta1;
  tc.beta2 = c.adam_beta2;
  tc.epsilon = c.adam_eps;
  tc.eval_every = c.train_eval_every;
  tc.objective = c.objective;
  tc.eval_reward_prompts = c.eval_reward_prompts;
  tc.eval_winrate_prompts = c.eval_winrate_prompts;
  tc.eval_sample_steps = c.eval_sample_steps;
  tc.threads = c.threads;
  tc.real_clock = c.real_clock;
  return tc;
}

void check_output_path(const std::string& path) {
  namespace fs = std::filesystem;
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw std::runtime_error("output directory '" + parent.string() + "' does not exist");
  }
}

std::vector<PreferenceRecord> read_records_file(const std::string& path, bool skip_malformed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records file '" + path + "'");
  ReadResult res;
  try {
    res = read_records_jsonl(in, !skip_malformed);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (!res.issues.empty()) {
    std::cerr << path << ": skipped " << res.issues.size() << " malformed line(s), first at line "
              << res.issues.front().line << ": " << res.issues.front().message << "\n";
  }
  return std::move(res.records);
}

// Flags shared by every subcommand; file values lose to explicit flags.
struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string clock;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* clock_opt = nullptr;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (TOML-style subset)")
        ->check(CLI::ExistingFile);
    seed_opt = sub->add_option("--seed", seed, "master seed; every stream derives from it");
    threads_opt =
        sub->add_option("--threads", threads, "worker cap for evaluation fan-out (default 1)");
    clock_opt = sub->add_option("--clock", clock, "metrics wall clock: real|none")
                    ->check(CLI::IsMember({"real", "none"}));
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (threads_opt->count()) cfg.threads = threads;
    if (clock_opt->count()) cfg.real_clock = (clock == "real");
    require(cfg.threads >= 1, "threads must be >= 1");
    return cfg;
  }
};

void cmd_gen_data(const Common& common, const std::string& out_path) {
  RunConfig cfg = common.resolve();
  check_output_path(out_path);
  ToyTask task = task_from(cfg);
  ToyCorpus corpus = make_toy_preferences(task, cfg.data_prompts, cfg.data_samples_per_prompt,
                                          cfg.data_flip_prob, derive_seed(cfg.seed, "gen-data"));
  atomic_write_file(out_path, [&](std::ostream& out) { write_records_jsonl(out, corpus.records); });
  std::cout << "gen-data: " << corpus.records.size() << " records across " << cfg.data_prompts
            << " prompts (" << corpus.items.size() << " items) -> " << out_path << "\n";
}

void cmd_curate(const Common& common, const std::string& in_path, const std::string& mode,
                const std::string& out_path, std::string report_path, std::string summary_path,
                bool skip_malformed) {
  common.resolve();  // validates config + flags even though curation is seedless
  check_output_path(out_path);
  if (report_path.empty()) report_path = out_path + ".report.json";
  check_output_path(report_path);
  if (!summary_path.empty()) check_output_path(summary_path);

  std::vector<PreferenceRecord> records = read_records_file(in_path, skip_malformed);
  auto [kept, report] = filter_dataset(records);

  std::vector<PreferenceRecord> out_records;
  if (mode == "filter") {
    out_records = std::move(kept);
  } else {
    out_records = build_scheme(build_graph(records), parse_scheme(mode));
  }
  atomic_write_file(out_path, [&](std::ostream& out) { write_records_jsonl(out, out_records); });
  atomic_write_file(report_path, [&](std::ostream& out) { write_report_json(out, report); });
  if (!summary_path.empty()) {
    atomic_write_file(summary_path, [&](std::ostream& out) { write_report_csv(out, report); });
  }
  std::cout << "curate: " << report.record_count << " records in, " << out_records.size()
            << " out (mode " << mode << "); " << report.prompt_count << " prompts, "
            << report.contradiction_count << " contradictory items before, "
            << report.contradiction_count_after << " after filtering -> " << out_path << "\n";
}

void cmd_pretrain(const Common& common, const std::string& out_path) {
  RunConfig cfg = common.resolve();
  check_output_path(out_path);
  ToyTask task = task_from(cfg);
  VarianceSchedule sched = sched_from(cfg);
  PretrainConfig pc;
  pc.steps = cfg.pretrain_steps;
  pc.batch_size = cfg.pretrain_batch;
  pc.learning_rate = cfg.pretrain_lr;
  pc.beta1 = cfg.adam_beta1;
  pc.beta2 = cfg.adam_beta2;
  pc.epsilon = cfg.adam_eps;
  PretrainResult res = pretrain(task, arch_from(cfg), sched, pc, derive_seed(cfg.seed, "pretrain"));
  save_checkpoint(out_path, make_checkpoint(res.model, sched));
  std::cout << "pretrain: probe loss " << format_double(res.initial_loss) << " -> "
            << format_double(res.final_loss) << " over " << pc.steps << " steps -> " << out_path
            << "\n";
  if (!(res.final_loss < 0.5 * res.initial_loss)) {
    std::cerr << "pretrain: warning: final probe loss did not reach half of the initial value\n";
  }
}

void cmd_train(const Common& common, const std::string& ck_path, const std::string& data_path,
               const std::string& objective_name, int steps_override,
               const std::string& out_path, std::string metrics_path,
               const std::string& svg_path, bool skip_malformed) {
  RunConfig cfg = common.resolve();
  if (!objective_name.empty()) cfg.objective.kind = parse_objective(objective_name);
  if (steps_override >= 0) cfg.train_steps = steps_override;
  check_output_path(out_path);
  if (metrics_path.empty()) metrics_path = out_path + ".metrics.csv";
  check_output_path(metrics_path);
  if (!svg_path.empty()) check_output_path(svg_path);

  Checkpoint ck = load_checkpoint(ck_path);
  VarianceSchedule sched = ck.schedule();
  DenoiserModel base = ck.model();
  ToyTask task = task_from(cfg);
  if (ck.arch.data_dim != task.data_dim || ck.arch.conditions < task.conditions) {
    throw std::runtime_error("checkpoint arch does not fit the configured task");
  }

  std::vector<PreferenceRecord> records = read_records_file(data_path, skip_malformed);
  ToyCorpus corpus = make_toy_preferences(task, cfg.data_prompts, cfg.data_samples_per_prompt,
                                          cfg.data_flip_prob, derive_seed(cfg.seed, "gen-data"));
  std::vector<PairPrompt> pairs = make_train_pairs(corpus, records);
  require(!pairs.empty(), "no usable training pairs in " + data_path);

  TrainConfig tc = train_config_from(cfg);
  TrainResult result = train_preference(sched, base, pairs, task, tc, derive_seed(cfg.seed, "train"));

  save_checkpoint(out_path, make_checkpoint(result.model, sched));
  atomic_write_file(metrics_path,
                    [&](std::ostream& out) { write_metrics_csv(out, result.metrics); });
  if (!svg_path.empty() && !result.metrics.empty()) {
    CurveSeries series;
    series.label = to_string(tc.objective.kind);
    for (const MetricRecord& m : result.metrics) {
      double x = tc.real_clock ? m.wall_clock_seconds : static_cast<double>(m.step);
      series.points.push_back({x, m.mean_reward});
    }
    std::string x_label = tc.real_clock ? "wall clock (s)" : "step";
    atomic_write_file(svg_path, [&](std::ostream& out) {
      write_curves_svg(out, {series}, x_label, "mean reward", "reward curve");
    });
  }
  std::cout << "train: objective " << to_string(tc.objective.kind) << ", " << tc.steps
            << " steps on " << pairs.size() << " pairs -> " << out_path << "\n";
  if (!result.metrics.empty()) {
    const MetricRecord& last = result.metrics.back();
    std::cout << "train: final loss " << format_double(last.loss) << ", mean reward "
              << format_double(last.mean_reward) << ", win rate vs start "
              << format_double(last.win_rate) << "\n";
  }
}

void cmd_eval(const Common& common, const std::vector<std::string>& ck_paths,
              const std::string& out_path, int prompts_override, int steps_override) {
  RunConfig cfg = common.resolve();
  if (prompts_override > 0) cfg.eval_prompts = prompts_override;
  if (steps_override > 0) cfg.eval_sample_steps = steps_override;
  check_output_path(out_path);
  require(!ck_paths.empty(), "eval: need at least one checkpoint");

  std::vector<Checkpoint> cks;
  std::vector<DenoiserModel> models;
  std::vector<std::string> names;
  cks.reserve(ck_paths.size());
  models.reserve(ck_paths.size());
  for (const std::string& p : ck_paths) {
    cks.push_back(load_checkpoint(p));
    models.push_back(cks.back().model());
    std::string stem = std::filesystem::path(p).stem().string();
    for (const std::string& seen : names) {
      if (seen == stem) {
        stem += "_" + std::to_string(names.size() + 1);
        break;
      }
    }
    names.push_back(stem);
  }
  for (const Checkpoint& ck : cks) {
    if (ck.timesteps != cks.front().timesteps || ck.betas != cks.front().betas) {
      throw std::runtime_error("schedule mismatch between checkpoints");
    }
    if (ck.arch.data_dim != cks.front().arch.data_dim) {
      throw std::runtime_error("arch mismatch between checkpoints");
    }
  }
  VarianceSchedule sched = cks.front().schedule();
  ToyTask task = task_from(cfg);
  require(task.data_dim == cks.front().arch.data_dim, "checkpoint arch does not fit the task");

  std::size_t n = models.size();
  std::vector<Vec> matrix(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      matrix[i][j] = win_rate(model_sampler(models[i], sched, cfg.eval_sample_steps),
                              model_sampler(models[j], sched, cfg.eval_sample_steps), task,
                              cfg.eval_prompts, derive_seed(cfg.seed, "eval"), cfg.threads);
    }
  }
  atomic_write_file(out_path,
                    [&](std::ostream& out) { write_winrate_matrix_csv(out, names, matrix); });
  std::ostringstream shown;
  write_winrate_matrix_csv(shown, names, matrix);
  std::cout << shown.str();
  std::cout << "eval: " << cfg.eval_prompts << " prompts per pairing -> " << out_path << "\n";
}

// Returns true when every objective's analytic gradient matches finite
// differences within tolerance.
bool cmd_diag(const Common& common, const std::string& out_path, int coords, double tolerance) {
  RunConfig cfg = common.resolve();
  if (!out_path.empty()) check_output_path(out_path);
  ToyTask task = task_from(cfg);
  VarianceSchedule sched = sched_from(cfg);
  std::uint64_t seed = derive_seed(cfg.seed, "diag");

  DenoiserModel model = DenoiserModel::init(arch_from(cfg), derive_seed(seed, "model"));
  DenoiserModel ref = DenoiserModel::init(arch_from(cfg), derive_seed(seed, "ref"));
  FrozenEncoder fenc(ref);

  Rng prng(derive_seed(seed, "prompts"));
  std::vector<PairPrompt> prompts;
  for (int i = 0; i < 8; ++i) {
    Condition c{prng.uniform_int(0, task.conditions - 1)};
    PairPrompt p;
    p.c = c;
    p.x_w = sample_task_point(task, c, prng);
    p.x_l = sample_task_point(task, c, prng);
    prompts.push_back(std::move(p));
  }

  std::ostringstream rep;
  bool ok = true;
  const ObjectiveKind kinds[] = {ObjectiveKind::SFT,     ObjectiveKind::DPO,
                                 ObjectiveKind::CPO,     ObjectiveKind::NCP_SFT,
                                 ObjectiveKind::NCP_DPO, ObjectiveKind::NCP_CPO};
  rep << "gradient check: " << coords << " coordinates per objective, tolerance "
      << format_double(tolerance) << "\n";
  for (std::size_t k = 0; k < 6; ++k) {
    ObjectiveConfig ocfg = cfg.objective;
    ocfg.kind = kinds[k];
    PairBatch batch = make_pair_batch(sched, prompts, ocfg, derive_seed(seed, "batch", k));
    LossReport lr = evaluate_objective(sched, model, ref, fenc, batch, ocfg);
    auto loss_of = [&](const Vec& p) {
      DenoiserModel probe = model.clone_trainable();
      probe.load_params(p);
      return evaluate_objective(sched, probe, ref, fenc, batch, ocfg).loss;
    };
    GradCheckResult res =
        check_gradient(loss_of, model.params(), lr.grad, coords, derive_seed(seed, "coords", k));
    bool pass = res.max_rel_err < tolerance;
    ok = ok && pass;
    char line[160];
    std::snprintf(line, sizeof(line), "  %-8s max_rel_err %.3e at coord %d  %s\n",
                  to_string(kinds[k]), res.max_rel_err, res.worst_coord,
                  pass ? "PASS" : "FAIL");
    rep << line;
  }

  rep << "pairwise ranking coefficient cancellation (chain x3 > x2 > x1, coefficient on the middle item):\n";
  struct ChainCase {
    double r1, r2, r3, beta;
  };
  const ChainCase cases[] = {{0, 1, 0, 1.0}, {1, 1, 1, 1.0}, {0, 1, 2, 1.0}, {2, 0, 1, 1.0},
                             {0, 1, 0, 2.5}};
  for (const ChainCase& cc : cases) {
    std::map<std::string, double> r{{"x1", cc.r1}, {"x2", cc.r2}, {"x3", cc.r3}};
    double v = cancellation_diagnostic(r, {"x1", "x2", "x3"}, cc.beta);
    char line[160];
    std::snprintf(line, sizeof(line),
                  "  r=(%g, %g, %g) beta=%g -> net coefficient %+.6f\n", cc.r1, cc.r2, cc.r3,
                  cc.beta, v);
    rep << line;
  }
  std::map<std::string, double> r01{{"w", 1.0}, {"l", 0.0}};
  auto coeffs = bt_pair_gradient(r01, {"w", "l"}, 1.0);
  rep << "single pair r(w)=1, r(l)=0, beta=1 -> winner " << format_double(coeffs["w"])
      << ", loser " << format_double(coeffs["l"]) << "\n";
  rep << (ok ? "diag: all gradient checks passed\n" : "diag: gradient check FAILURES above\n");

  std::cout << rep.str();
  if (!out_path.empty()) {
    atomic_write_file(out_path, [&](std::ostream& out) { out << rep.str(); });
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale preference-optimization lab for a conditional diffusion model"};
  app.require_subcommand(1);
  int exit_code = 0;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic preference corpus (JSONL)");
  Common gen_common;
  gen_common.attach(gen);
  std::string gen_out;
  gen->add_option("--out", gen_out, "output records path")->required();
  gen->callback([&] { cmd_gen_data(gen_common, gen_out); });

  // curate
  auto* cur = app.add_subcommand("curate", "filter contradictions / build reduced pair schemes");
  Common cur_common;
  cur_common.attach(cur);
  std::string cur_in, cur_mode = "filter", cur_out, cur_report, cur_summary;
  bool cur_skip = false;
  cur->add_option("--in", cur_in, "input records (JSONL)")->required();
  cur->add_option("--mode", cur_mode, "filter | xy | xy-xz | xy-yz (default filter)")
      ->check(CLI::IsMember({"filter", "xy", "xy-xz", "xy-yz"}));
  cur->add_option("--out", cur_out, "output records path")->required();
  cur->add_option("--report", cur_report, "curation report JSON (default <out>.report.json)");
  cur->add_option("--summary", cur_summary, "one-line CSV summary path");
  cur->add_flag("--skip-malformed", cur_skip, "skip bad lines instead of failing");
  cur->callback([&] {
    cmd_curate(cur_common, cur_in, cur_mode, cur_out, cur_report, cur_summary, cur_skip);
  });

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the base denoiser on the toy task");
  Common pre_common;
  pre_common.attach(pre);
  std::string pre_out;
  pre->add_option("--out", pre_out, "output checkpoint path")->required();
  pre->callback([&] { cmd_pretrain(pre_common, pre_out); });

  // train
  auto* tr = app.add_subcommand("train", "preference-optimize a pretrained checkpoint");
  Common tr_common;
  tr_common.attach(tr);
  std::string tr_ck, tr_data, tr_obj, tr_out, tr_metrics, tr_svg;
  int tr_steps = -1;
  bool tr_skip = false;
  tr->add_option("--checkpoint", tr_ck, "pretrained checkpoint")->required();
  tr->add_option("--data", tr_data, "preference records (JSONL)")->required();
  tr->add_option("--objective", tr_obj, "sft | dpo | cpo | ncp-sft | ncp-dpo | ncp-cpo")
      ->check(CLI::IsMember({"sft", "dpo", "cpo", "ncp-sft", "ncp-dpo", "ncp-cpo"}));
  tr->add_option("--steps", tr_steps, "override training step count");
  tr->add_option("--out", tr_out, "output checkpoint path")->required();
  tr->add_option("--metrics", tr_metrics, "metrics CSV path (default <out>.metrics.csv)");
  tr->add_option("--svg", tr_svg, "also write a reward-curve SVG");
  tr->add_flag("--skip-malformed", tr_skip, "skip bad data lines instead of failing");
  tr->callback([&] {
    cmd_train(tr_common, tr_ck, tr_data, tr_obj, tr_steps, tr_out, tr_metrics, tr_svg, tr_skip);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "pairwise win-rate matrix across checkpoints");
  Common ev_common;
  ev_common.attach(ev);
  std::vector<std::string> ev_cks;
  std::string ev_out;
  int ev_prompts = 0, ev_steps = 0;
  ev->add_option("--checkpoints", ev_cks, "checkpoints to compare")->required()->expected(-1);
  ev->add_option("--out", ev_out, "output matrix CSV path")->required();
  ev->add_option("--prompts", ev_prompts, "prompts per pairing (default from config)");
  ev->add_option("--sample-steps", ev_steps, "sampling steps (default from config)");
  ev->callback([&] { cmd_eval(ev_common, ev_cks, ev_out, ev_prompts, ev_steps); });

  // diag
  auto* dg = app.add_subcommand("diag", "finite-difference gradient suite + cancellation report");
  Common dg_common;
  dg_common.attach(dg);
  std::string dg_out;
  int dg_coords = 64;
  double dg_tol = 1e-4;
  dg->add_option("--out", dg_out, "also write the report to this path");
  dg->add_option("--coords", dg_coords, "coordinates per objective (default 64)");
  dg->add_option("--tolerance", dg_tol, "relative-error tolerance (default 1e-4)");
  dg->callback([&] {
    if (!cmd_diag(dg_common, dg_out, dg_coords, dg_tol)) exit_code = 1;
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
