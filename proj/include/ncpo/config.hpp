#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>

#include "ncpo/objectives.hpp"

namespace ncpo {

// Whole-pipeline configuration with the toy-lab defaults baked in. The file
// format is a TOML-style subset: [section] headers, key = value lines,
// # comments, quoted strings, integers, floats, true/false. Unknown sections
// or keys are errors, not warnings.
struct RunConfig {
  // [task]
  int task_conditions = 4;
  int task_data_dim = 2;
  double task_spread = 0.5;
  double task_sharpen = 2.0;
  double task_mode_radius = 2.8284271247461903;  // modes at the corners (+-2, +-2)

  // [schedule] — endpoints chosen so alpha_bar(T) ~ 0.007 at T=100 and
  // ancestral sampling can start from a unit Gaussian.
  int sched_timesteps = 100;
  double sched_beta_start = 1e-3;
  double sched_beta_end = 0.1;

  // [arch]
  int arch_hidden = 32;
  int arch_embed_dim = 8;
  int arch_time_features = 8;
  int arch_cond_features = 8;

  // [data]
  int data_prompts = 400;
  int data_samples_per_prompt = 4;
  double data_flip_prob = 0.1;

  // [pretrain]
  int pretrain_steps = 3000;
  int pretrain_batch = 64;
  double pretrain_lr = 1e-3;

  // [train]
  int train_steps = 600;
  int train_batch = 32;
  double train_lr = 1e-4;
  int train_eval_every = 25;

  // [objective]
  ObjectiveConfig objective;

  // [optimizer]
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // [eval]
  int eval_prompts = 500;
  int eval_sample_steps = 20;
  int eval_reward_prompts = 64;   // reward-curve probe during training
  int eval_winrate_prompts = 64;  // win-rate probe during training

  // [run]
  std::uint64_t seed = 1;
  int threads = 1;
  bool real_clock = true;  // clock = "real" | "none"
};

namespace detail {

[[noreturn]] inline void config_error(std::int64_t line, const std::string& msg) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + msg);
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Cuts an unquoted # comment.
inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline std::string parse_string_value(const std::string& raw, std::int64_t line) {
  if (!raw.empty() && raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') config_error(line, "unterminated string");
    return raw.substr(1, raw.size() - 2);
  }
  return raw;  // bare word
}

inline bool parse_bool_value(const std::string& raw, std::int64_t line) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  config_error(line, "expected true or false, got '" + raw + "'");
}

inline std::int64_t parse_int_value(const std::string& raw, std::int64_t line) {
  try {
    std::size_t used = 0;
    std::int64_t v = std::stoll(raw, &used);
    if (used != raw.size()) config_error(line, "expected integer, got '" + raw + "'");
    return v;
  } catch (const std::invalid_argument&) {
    config_error(line, "expected integer, got '" + raw + "'");
  } catch (const std::out_of_range&) {
    config_error(line, "integer out of range: '" + raw + "'");
  }
}

inline std::uint64_t parse_uint_value(const std::string& raw, std::int64_t line) {
  try {
    std::size_t used = 0;
    std::uint64_t v = std::stoull(raw, &used);
    if (used != raw.size()) config_error(line, "expected unsigned integer, got '" + raw + "'");
    return v;
  } catch (const std::invalid_argument&) {
    config_error(line, "expected unsigned integer, got '" + raw + "'");
  } catch (const std::out_of_range&) {
    config_error(line, "unsigned integer out of range: '" + raw + "'");
  }
}

inline double parse_float_value(const std::string& raw, std::int64_t line) {
  try {
    std::size_t used = 0;
    double v = std::stod(raw, &used);
    if (used != raw.size()) config_error(line, "expected number, got '" + raw + "'");
    return v;
  } catch (const std::invalid_argument&) {
    config_error(line, "expected number, got '" + raw + "'");
  } catch (const std::out_of_range&) {
    config_error(line, "number out of range: '" + raw + "'");
  }
}

inline int parse_pos_int(const std::string& raw, std::int64_t line) {
  std::int64_t v = parse_int_value(raw, line);
  if (v <= 0 || v > 1'000'000'000) config_error(line, "value must be a positive integer");
  return static_cast<int>(v);
}

inline int parse_nonneg_int(const std::string& raw, std::int64_t line) {
  std::int64_t v = parse_int_value(raw, line);
  if (v < 0 || v > 1'000'000'000) config_error(line, "value must be a non-negative integer");
  return static_cast<int>(v);
}

inline void apply_config_key(RunConfig& cfg, const std::string& section, const std::string& key,
                             const std::string& raw, std::int64_t line) {
  auto num = [&] { return parse_float_value(raw, line); };
  auto pos = [&] { return parse_pos_int(raw, line); };
  auto str = [&] { return parse_string_value(raw, line); };
  auto yes = [&] { return parse_bool_value(raw, line); };

  const std::string full = section + "." + key;
  if (full == "task.conditions") cfg.task_conditions = pos();
  else if (full == "task.data_dim") cfg.task_data_dim = pos();
  else if (full == "task.spread") cfg.task_spread = num();
  else if (full == "task.sharpen") cfg.task_sharpen = num();
  else if (full == "task.mode_radius") cfg.task_mode_radius = num();
  else if (full == "schedule.timesteps") cfg.sched_timesteps = pos();
  else if (full == "schedule.beta_start") cfg.sched_beta_start = num();
  else if (full == "schedule.beta_end") cfg.sched_beta_end = num();
  else if (full == "arch.hidden") cfg.arch_hidden = pos();
  else if (full == "arch.embed_dim") cfg.arch_embed_dim = pos();
  else if (full == "arch.time_features") cfg.arch_time_features = pos();
  else if (full == "arch.cond_features") cfg.arch_cond_features = pos();
  else if (full == "data.prompts") cfg.data_prompts = pos();
  else if (full == "data.samples_per_prompt") cfg.data_samples_per_prompt = pos();
  else if (full == "data.flip_prob") cfg.data_flip_prob = num();
  else if (full == "pretrain.steps") cfg.pretrain_steps = parse_nonneg_int(raw, line);
  else if (full == "pretrain.batch_size") cfg.pretrain_batch = pos();
  else if (full == "pretrain.learning_rate") cfg.pretrain_lr = num();
  else if (full == "train.steps") cfg.train_steps = parse_nonneg_int(raw, line);
  else if (full == "train.batch_size") cfg.train_batch = pos();
  else if (full == "train.learning_rate") cfg.train_lr = num();
  else if (full == "train.eval_every") cfg.train_eval_every = pos();
  else if (full == "objective.kind") cfg.objective.kind = parse_objective(str());
  else if (full == "objective.beta") cfg.objective.beta = num();
  else if (full == "objective.lambda") cfg.objective.lambda = num();
  else if (full == "objective.beta_t_product") cfg.objective.beta_T_product = num();
  else if (full == "objective.share_z") cfg.objective.share_z = yes();
  else if (full == "objective.share_t_within_pair") cfg.objective.share_t_within_pair = yes();
  else if (full == "optimizer.beta1") cfg.adam_beta1 = num();
  else if (full == "optimizer.beta2") cfg.adam_beta2 = num();
  else if (full == "optimizer.epsilon") cfg.adam_eps = num();
  else if (full == "eval.prompts") cfg.eval_prompts = pos();
  else if (full == "eval.sample_steps") cfg.eval_sample_steps = pos();
  else if (full == "eval.reward_prompts") cfg.eval_reward_prompts = pos();
  else if (full == "eval.winrate_prompts") cfg.eval_winrate_prompts = pos();
  else if (full == "run.seed") cfg.seed = parse_uint_value(raw, line);
  else if (full == "run.threads") cfg.threads = pos();
  else if (full == "run.clock") {
    std::string v = str();
    if (v == "real") cfg.real_clock = true;
    else if (v == "none") cfg.real_clock = false;
    else config_error(line, "clock must be \"real\" or \"none\"");
  } else {
    config_error(line, "unknown key '" + full + "'");
  }
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  std::string section;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = detail::trim(detail::strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3) {
        detail::config_error(lineno, "malformed section header");
      }
      section = detail::trim(body.substr(1, body.size() - 2));
      if (section != "task" && section != "schedule" && section != "arch" &&
          section != "data" && section != "pretrain" && section != "train" &&
          section != "objective" && section != "optimizer" && section != "eval" &&
          section != "run") {
        detail::config_error(lineno, "unknown section '[" + section + "]'");
      }
      continue;
    }
    std::size_t eq = body.find('=');
    if (eq == std::string::npos) detail::config_error(lineno, "expected key = value");
    std::string key = detail::trim(body.substr(0, eq));
    std::string raw = detail::trim(body.substr(eq + 1));
    if (key.empty()) detail::config_error(lineno, "empty key");
    if (raw.empty()) detail::config_error(lineno, "empty value");
    if (section.empty()) detail::config_error(lineno, "key outside any [section]");
    detail::apply_config_key(cfg, section, key, raw, lineno);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  return parse_run_config(in);
}

}  // namespace ncpo
