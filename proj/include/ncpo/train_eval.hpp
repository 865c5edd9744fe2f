#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ncpo/denoiser.hpp"
#include "ncpo/math.hpp"
#include "ncpo/objectives.hpp"
#include "ncpo/pref_graph.hpp"
#include "ncpo/rng.hpp"
#include "ncpo/schedule.hpp"

namespace ncpo {

// ---- synthetic task ----

// Conditional point-generation task: condition c wants samples near its mode.
// The latent reward is the negative squared distance to that mode, so win/loss
// judgments and win rates have an unambiguous ground truth.
struct ToyTask {
  int conditions = 4;
  int data_dim = 2;
  std::vector<Vec> modes;  // one per condition
  double spread = 0.5;     // data noise around the mode
  double sharpen = 2.0;    // how much sloppier late candidates get (>= 1)

  void validate() const {
    require(conditions > 0 && data_dim > 0, "ToyTask: sizes must be positive");
    require(static_cast<int>(modes.size()) == conditions, "ToyTask: one mode per condition");
    for (const Vec& m : modes) {
      require(static_cast<int>(m.size()) == data_dim, "ToyTask: mode dimension mismatch");
    }
    require(spread > 0, "ToyTask: spread must be positive");
    require(sharpen >= 1.0, "ToyTask: sharpen must be >= 1");
    for (std::size_t i = 0; i < modes.size(); ++i) {
      for (std::size_t j = i + 1; j < modes.size(); ++j) {
        require(squared_distance(modes[i], modes[j]) > 0, "ToyTask: modes must be distinct");
      }
    }
  }
};

// Modes evenly spaced on a circle in the first two coordinates; the default
// radius puts four of them at the corners (+-2, +-2).
inline ToyTask make_toy_task(int conditions, int data_dim, double spread, double sharpen,
                             double mode_radius = 2.8284271247461903) {
  require(data_dim >= 2, "make_toy_task: need at least two dimensions");
  require(mode_radius > 0, "make_toy_task: mode radius must be positive");
  ToyTask task;
  task.conditions = conditions;
  task.data_dim = data_dim;
  task.spread = spread;
  task.sharpen = sharpen;
  const double kPi = 3.14159265358979323846;
  for (int k = 0; k < conditions; ++k) {
    double angle = 2.0 * kPi * k / conditions + kPi / 4.0;
    Vec m(data_dim, 0.0);
    m[0] = mode_radius * std::cos(angle);
    m[1] = mode_radius * std::sin(angle);
    task.modes.push_back(std::move(m));
  }
  task.validate();
  return task;
}

inline double synth_reward(const ToyTask& task, Condition c, const Vec& x) {
  require(c.id >= 0 && c.id < task.conditions, "synth_reward: condition out of range");
  return -squared_distance(x, task.modes[c.id]);
}

inline Vec sample_task_point(const ToyTask& task, Condition c, Rng& rng) {
  Vec x = task.modes[c.id];
  for (double& v : x) v += task.spread * rng.normal();
  return x;
}

// ---- synthetic preference corpus ----

struct ToyCorpusItem {
  Condition c;
  Vec x;
};

// Records plus the point each item id stands for. The records alone match the
// line-delimited exchange format; the item map is what training joins against,
// and it is reproducible from (task, counts, seed) alone.
struct ToyCorpus {
  std::vector<PreferenceRecord> records;
  std::map<std::string, ToyCorpusItem> items;
  std::map<std::string, Condition> prompt_conditions;
};

inline ToyCorpus make_toy_preferences(const ToyTask& task, int n_prompts,
                                      int samples_per_prompt, double flip_prob,
                                      std::uint64_t seed) {
  task.validate();
  require(n_prompts > 0, "make_toy_preferences: need at least one prompt");
  require(samples_per_prompt >= 2, "make_toy_preferences: need at least two samples per prompt");
  require(flip_prob >= 0.0 && flip_prob <= 1.0, "make_toy_preferences: flip_prob in [0,1]");
  Rng rng(seed);
  ToyCorpus corpus;
  std::int64_t ts = 0;
  int k = samples_per_prompt;
  for (int p = 0; p < n_prompts; ++p) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "p%06d", p);
    std::string prompt_id(buf);
    Condition c{rng.uniform_int(0, task.conditions - 1)};
    corpus.prompt_conditions[prompt_id] = c;

    // Candidate s is drawn with widening noise, so early slots tend to win.
    std::vector<std::string> ids(k);
    std::vector<double> rewards(k);
    for (int s = 0; s < k; ++s) {
      double widen = (k == 1) ? 1.0 : 1.0 + (task.sharpen - 1.0) * s / (k - 1);
      Vec x = task.modes[c.id];
      for (double& v : x) v += task.spread * widen * rng.normal();
      ids[s] = prompt_id + "/s" + std::to_string(s);
      rewards[s] = synth_reward(task, c, x);
      corpus.items[ids[s]] = {c, std::move(x)};
    }
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) {
        int w = rewards[i] >= rewards[j] ? i : j;
        int l = w == i ? j : i;
        if (rng.uniform() < flip_prob) std::swap(w, l);
        corpus.records.push_back({prompt_id, ids[w], ids[l], Outcome::win, ++ts});
      }
    }
  }
  return corpus;
}

// Joins records back to their points. Draw records carry no training signal
// for pairwise objectives and are skipped.
inline std::vector<PairPrompt> make_train_pairs(const ToyCorpus& corpus,
                                                const std::vector<PreferenceRecord>& records) {
  std::vector<PairPrompt> out;
  out.reserve(records.size());
  for (const PreferenceRecord& r : records) {
    if (r.outcome != Outcome::win) continue;
    auto w = corpus.items.find(r.winner_id);
    auto l = corpus.items.find(r.loser_id);
    if (w == corpus.items.end() || l == corpus.items.end()) {
      const std::string& missing = (w == corpus.items.end()) ? r.winner_id : r.loser_id;
      throw std::runtime_error("record references unknown item '" + missing +
                               "' (records were not generated from this task config/seed)");
    }
    require(w->second.c.id == l->second.c.id, "make_train_pairs: pair mixes conditions");
    out.push_back({w->second.c, w->second.x, l->second.x});
  }
  return out;
}

// ---- optimizer ----

class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t n, double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {
    require(lr > 0, "AdamOptimizer: learning rate must be positive");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "AdamOptimizer: betas in [0,1)");
    require(eps > 0, "AdamOptimizer: epsilon must be positive");
  }

  void step(Vec& params, const Vec& grad) {
    require_same_size(params, grad, "AdamOptimizer::step");
    require(params.size() == m_.size(), "AdamOptimizer::step: size change");
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, t_);
    double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  Vec m_, v_;
};

// ---- deterministic fan-out ----

// Runs fn(0..n-1) across up to `threads` workers. Each index is computed
// exactly once into caller-owned slots, so results do not depend on the
// thread count. The first exception, if any, is rethrown after the join.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int workers = std::min(threads, n);
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---- sampling ----

// Ancestral sampling over a strided sub-ladder of the schedule. The sub-step
// coefficients are re-derived from alpha_bar ratios; the model still sees the
// raw timestep index it was trained on. n_steps = T reduces to plain
// step-by-step sampling.
template <NoisePredictor M>
Vec sample_from(const M& model, const VarianceSchedule& sched, Condition c, int data_dim,
                int n_steps, std::uint64_t seed) {
  int T = sched.timesteps();
  require(n_steps >= 1 && n_steps <= T, "sample_from: n_steps must be in [1, T]");
  std::vector<int> tau(n_steps);
  if (n_steps == 1) {
    tau[0] = T;
  } else {
    for (int i = 0; i < n_steps; ++i) {
      tau[i] = 1 + static_cast<int>(std::llround(static_cast<double>(i) * (T - 1) / (n_steps - 1)));
    }
  }
  Vec sub_betas(n_steps);
  double prev_bar = 1.0;
  for (int i = 0; i < n_steps; ++i) {
    double bar = sched.alpha_bar(tau[i]);
    sub_betas[i] = 1.0 - bar / prev_bar;
    prev_bar = bar;
  }
  VarianceSchedule sub(n_steps, sub_betas);

  Rng rng(seed);
  Vec x = rng.normal_vec(data_dim);
  for (int i = n_steps; i >= 1; --i) {
    Vec eps_hat = model.predict_noise(x, c, tau[i - 1]);
    Vec z = rng.normal_vec(data_dim);
    x = ddpm_reverse_step(sub, Sample{std::move(x), i}, eps_hat, z).x;
  }
  return x;
}

inline Vec sample_from(const DenoiserModel& model, const VarianceSchedule& sched, Condition c,
                       int n_steps, std::uint64_t seed) {
  return sample_from<DenoiserModel>(model, sched, c, model.arch().data_dim, n_steps, seed);
}

// Callable (Condition, seed) -> sample, the shape win_rate compares.
inline auto model_sampler(const DenoiserModel& model, const VarianceSchedule& sched,
                          int n_steps) {
  return [&model, &sched, n_steps](Condition c, std::uint64_t seed) {
    return sample_from(model, sched, c, n_steps, seed);
  };
}

// Paired comparison: both samplers see the same condition and the same
// sampling seed per prompt; ties score one half each way.
template <class SamplerA, class SamplerB>
double win_rate(SamplerA&& sa, SamplerB&& sb, const ToyTask& task, int n_prompts,
                std::uint64_t seed, int threads = 1) {
  require(n_prompts > 0, "win_rate: empty prompt set");
  Vec score(n_prompts, 0.0);
  parallel_for(n_prompts, threads, [&](int i) {
    Rng crng(derive_seed(seed, "winrate_cond", static_cast<std::uint64_t>(i)));
    Condition c{crng.uniform_int(0, task.conditions - 1)};
    std::uint64_t s = derive_seed(seed, "winrate_sample", static_cast<std::uint64_t>(i));
    double ra = synth_reward(task, c, sa(c, s));
    double rb = synth_reward(task, c, sb(c, s));
    score[i] = ra > rb ? 1.0 : (ra < rb ? 0.0 : 0.5);
  });
  double sum = 0.0;
  for (double v : score) sum += v;
  return sum / n_prompts;
}

// ---- pretraining ----

struct PretrainConfig {
  int steps = 3000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct PretrainResult {
  DenoiserModel model;
  double initial_loss = 0.0;  // probe loss before training
  double final_loss = 0.0;    // probe loss after
};

namespace detail {

struct ProbeCase {
  Condition c;
  Vec x0;
  int t = 1;
  Vec eps;
};

inline std::vector<ProbeCase> make_probe_cases(const ToyTask& task,
                                               const VarianceSchedule& sched, int n,
                                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ProbeCase> cases(n);
  for (ProbeCase& pc : cases) {
    pc.c = Condition{rng.uniform_int(0, task.conditions - 1)};
    pc.x0 = sample_task_point(task, pc.c, rng);
    pc.t = rng.uniform_int(1, sched.timesteps());
    pc.eps = rng.normal_vec(task.data_dim);
  }
  return cases;
}

template <NoisePredictor M>
double probe_loss(const VarianceSchedule& sched, const M& model,
                  const std::vector<ProbeCase>& cases) {
  double sum = 0.0;
  for (const ProbeCase& pc : cases) {
    sum += latent_value(sched, model, pc.x0, pc.c, pc.t, pc.eps);
  }
  return sum / cases.size();
}

}  // namespace detail

inline PretrainResult pretrain(const ToyTask& task, const Arch& arch,
                               const VarianceSchedule& sched, const PretrainConfig& cfg,
                               std::uint64_t seed) {
  task.validate();
  require(arch.data_dim == task.data_dim, "pretrain: arch/task dimension mismatch");
  require(arch.conditions >= task.conditions, "pretrain: arch has too few conditions");
  require(cfg.batch_size > 0, "pretrain: batch size must be positive");

  DenoiserModel model = DenoiserModel::init(arch, derive_seed(seed, "pretrain_init"));
  std::vector<detail::ProbeCase> probe =
      detail::make_probe_cases(task, sched, 256, derive_seed(seed, "pretrain_probe"));

  PretrainResult res{model.clone_trainable(), 0.0, 0.0};
  res.initial_loss = detail::probe_loss(sched, model, probe);

  Vec params = model.params();
  AdamOptimizer adam(params.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  Vec grad(params.size());
  for (int k = 1; k <= cfg.steps; ++k) {
    Rng rng(derive_seed(seed, "pretrain_batch", static_cast<std::uint64_t>(k)));
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      Condition c{rng.uniform_int(0, task.conditions - 1)};
      Vec x0 = sample_task_point(task, c, rng);
      int t = rng.uniform_int(1, sched.timesteps());
      Vec eps = rng.normal_vec(task.data_dim);
      detail::Branch br = detail::latent_branch(sched, model, x0, c, t, eps);
      loss += br.value / cfg.batch_size;
      model.backprop_params_into(br.xt, c, br.t, br.cot, grad, 1.0 / cfg.batch_size);
    }
    if (!std::isfinite(loss)) {
      throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(k));
    }
    adam.step(params, grad);
    model.load_params(params);
  }
  res.final_loss = detail::probe_loss(sched, model, probe);
  res.model = std::move(model);
  return res;
}

// ---- preference training ----

struct TrainConfig {
  int steps = 600;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int eval_every = 25;
  ObjectiveConfig objective;
  int eval_reward_prompts = 64;
  int eval_winrate_prompts = 64;
  int eval_sample_steps = 20;
  int threads = 1;
  bool real_clock = true;  // false zeroes wall_clock_seconds for byte-stable logs
};

struct MetricRecord {
  std::int64_t step = 0;
  double wall_clock_seconds = 0.0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double win_rate = 0.0;  // vs. the run's own frozen starting point
  std::map<std::string, double> per_term;
};

struct TrainResult {
  DenoiserModel model;
  std::vector<MetricRecord> metrics;
};

inline TrainResult train_preference(const VarianceSchedule& sched, const DenoiserModel& base,
                                    const std::vector<PairPrompt>& pairs, const ToyTask& task,
                                    const TrainConfig& cfg, std::uint64_t seed) {
  require(!pairs.empty(), "train_preference: no training pairs");
  require(cfg.batch_size > 0 && cfg.eval_every > 0, "train_preference: bad config");
  cfg.objective.validate();
  if (cfg.steps == 0) return {base.clone_trainable(), {}};

  DenoiserModel model = base.clone_trainable();
  DenoiserModel ref = base.clone_frozen();
  FrozenEncoder fenc(base);

  // Fixed probe batch: same pairs and draws at every eval, so the loss column
  // is comparable across steps (and equals ln 2 at step 0 for the DPO kinds).
  std::vector<PairPrompt> probe_prompts;
  std::size_t probe_n = std::min<std::size_t>(64, pairs.size());
  for (std::size_t j = 0; j < probe_n; ++j) {
    probe_prompts.push_back(pairs[j * pairs.size() / probe_n]);
  }
  PairBatch probe_batch =
      make_pair_batch(sched, probe_prompts, cfg.objective, derive_seed(seed, "eval_probe"));

  auto clock_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!cfg.real_clock) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  };

  std::vector<MetricRecord> metrics;
  auto emit = [&](std::int64_t step) {
    LossReport rep = evaluate_objective(sched, model, ref, fenc, probe_batch, cfg.objective);
    MetricRecord rec;
    rec.step = step;
    rec.loss = rep.loss;
    rec.per_term = std::move(rep.per_term);

    Vec rewards(cfg.eval_reward_prompts, 0.0);
    parallel_for(cfg.eval_reward_prompts, cfg.threads, [&](int i) {
      Rng crng(derive_seed(seed, "eval_cond", static_cast<std::uint64_t>(i)));
      Condition c{crng.uniform_int(0, task.conditions - 1)};
      Vec x = sample_from(model, sched, c, cfg.eval_sample_steps,
                          derive_seed(seed, "eval_sample", static_cast<std::uint64_t>(i)));
      rewards[i] = synth_reward(task, c, x);
    });
    double sum = 0.0;
    for (double v : rewards) sum += v;
    rec.mean_reward = sum / cfg.eval_reward_prompts;

    rec.win_rate = win_rate(model_sampler(model, sched, cfg.eval_sample_steps),
                            model_sampler(ref, sched, cfg.eval_sample_steps), task,
                            cfg.eval_winrate_prompts, derive_seed(seed, "eval_winrate"),
                            cfg.threads);
    rec.wall_clock_seconds = elapsed();
    metrics.push_back(std::move(rec));
  };

  emit(0);

  Vec params = model.params();
  AdamOptimizer adam(params.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  for (int k = 1; k <= cfg.steps; ++k) {
    Rng pick(derive_seed(seed, "batch_pick", static_cast<std::uint64_t>(k)));
    std::vector<PairPrompt> chosen(cfg.batch_size);
    for (PairPrompt& p : chosen) {
      p = pairs[static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(pairs.size()) - 1))];
    }
    PairBatch batch = make_pair_batch(sched, chosen, cfg.objective,
                                      derive_seed(seed, "batch_noise", static_cast<std::uint64_t>(k)));
    LossReport rep;
    try {
      rep = evaluate_objective(sched, model, ref, fenc, batch, cfg.objective);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train step " + std::to_string(k) + ": " + e.what());
    }
    adam.step(params, rep.grad);
    model.load_params(params);
    if (k % cfg.eval_every == 0 || k == cfg.steps) emit(k);
  }
  return {std::move(model), std::move(metrics)};
}

}  // namespace ncpo
