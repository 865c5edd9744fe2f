#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "json.hpp"

#include "ncpo/denoiser.hpp"
#include "ncpo/io.hpp"
#include "ncpo/schedule.hpp"

namespace ncpo {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  Arch arch;
  Vec params;
  int timesteps = 0;
  Vec betas;

  DenoiserModel model() const {
    DenoiserModel m = DenoiserModel::init(arch, 0);
    m.load_params(params);
    return m;
  }

  VarianceSchedule schedule() const { return VarianceSchedule(timesteps, betas); }
};

inline Checkpoint make_checkpoint(const DenoiserModel& model, const VarianceSchedule& sched) {
  return Checkpoint{model.arch(), model.params(), sched.timesteps(), sched.betas()};
}

// JSON container; doubles are emitted in shortest round-trip form, so the
// value stream is bit-exact across save/load and reruns.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["arch"] = {{"data_dim", ck.arch.data_dim},
               {"hidden", ck.arch.hidden},
               {"embed_dim", ck.arch.embed_dim},
               {"conditions", ck.arch.conditions},
               {"time_features", ck.arch.time_features},
               {"cond_features", ck.arch.cond_features}};
  j["schedule"] = {{"timesteps", ck.timesteps}, {"betas", ck.betas}};
  j["params"] = ck.params;
  atomic_write_file(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw std::runtime_error("checkpoint '" + path + "' is not valid JSON");
  }
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
    throw std::runtime_error("checkpoint '" + path + "' lacks a format version");
  }
  int version = j["format_version"].get<int>();
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint '" + path + "' has unsupported format version " +
                             std::to_string(version));
  }
  Checkpoint ck;
  try {
    const auto& a = j.at("arch");
    ck.arch.data_dim = a.at("data_dim").get<int>();
    ck.arch.hidden = a.at("hidden").get<int>();
    ck.arch.embed_dim = a.at("embed_dim").get<int>();
    ck.arch.conditions = a.at("conditions").get<int>();
    ck.arch.time_features = a.at("time_features").get<int>();
    ck.arch.cond_features = a.at("cond_features").get<int>();
    ck.timesteps = j.at("schedule").at("timesteps").get<int>();
    ck.betas = j.at("schedule").at("betas").get<Vec>();
    ck.params = j.at("params").get<Vec>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint '" + path + "' is malformed: " + e.what());
  }
  ck.arch.validate();
  if (static_cast<int>(ck.params.size()) != ck.arch.param_count()) {
    throw std::runtime_error("checkpoint '" + path + "' parameter count mismatch");
  }
  return ck;
}

}  // namespace ncpo
