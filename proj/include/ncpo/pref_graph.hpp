#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ncpo/math.hpp"

namespace ncpo {

enum class Outcome { win, draw };

inline const char* to_string(Outcome o) { return o == Outcome::win ? "win" : "draw"; }

struct PreferenceRecord {
  std::string prompt_id;
  std::string winner_id;  // for a draw, slot order carries no meaning
  std::string loser_id;
  Outcome outcome = Outcome::win;
  std::int64_t timestamp = 0;

  bool operator==(const PreferenceRecord&) const = default;
};

// Per-prompt tournament. Edges keep (timestamp, input order) so "latest"
// queries are total: later timestamp wins, input order breaks ties.
class PreferenceGraph {
 public:
  struct Edge {
    std::string a, b;  // win: a beat b; draw: unordered endpoints
    std::int64_t timestamp = 0;
    std::size_t order = 0;  // position in the input record sequence
  };

  struct Prompt {
    std::vector<std::string> items;  // first-seen order
    std::vector<Edge> wins;          // sorted by (timestamp, order)
    std::vector<Edge> draws;
  };

  const std::vector<std::string>& prompt_ids() const { return prompt_order_; }

  bool has_prompt(const std::string& id) const { return prompts_.count(id) != 0; }

  const Prompt& prompt(const std::string& id) const {
    auto it = prompts_.find(id);
    if (it == prompts_.end()) throw std::out_of_range("unknown prompt '" + id + "'");
    return it->second;
  }

  void add(const PreferenceRecord& r, std::size_t order) {
    require(!r.prompt_id.empty(), "preference record: empty prompt_id");
    require(!r.winner_id.empty() && !r.loser_id.empty(), "preference record: empty item id");
    require(r.winner_id != r.loser_id, "preference record: item paired with itself");
    auto ins = prompts_.emplace(r.prompt_id, Prompt{});
    if (ins.second) prompt_order_.push_back(r.prompt_id);
    Prompt& p = ins.first->second;
    note_item(p, r.winner_id);
    note_item(p, r.loser_id);
    Edge e{r.winner_id, r.loser_id, r.timestamp, order};
    if (r.outcome == Outcome::win) {
      insert_sorted(p.wins, std::move(e));
    } else {
      insert_sorted(p.draws, std::move(e));
    }
  }

 private:
  static void note_item(Prompt& p, const std::string& id) {
    for (const std::string& s : p.items) {
      if (s == id) return;
    }
    p.items.push_back(id);
  }

  static void insert_sorted(std::vector<Edge>& edges, Edge e) {
    auto pos = edges.end();
    while (pos != edges.begin()) {
      auto prev = pos - 1;
      if (prev->timestamp < e.timestamp ||
          (prev->timestamp == e.timestamp && prev->order < e.order)) {
        break;
      }
      pos = prev;
    }
    edges.insert(pos, std::move(e));
  }

  std::vector<std::string> prompt_order_;
  std::map<std::string, Prompt> prompts_;
};

inline PreferenceGraph build_graph(const std::vector<PreferenceRecord>& records) {
  PreferenceGraph g;
  for (std::size_t i = 0; i < records.size(); ++i) g.add(records[i], i);
  return g;
}

// Items that never lost or drew and won at least twice. Returned in the
// prompt's first-seen item order.
inline std::vector<std::string> absolute_winners(const PreferenceGraph& g,
                                                 const std::string& prompt_id) {
  const PreferenceGraph::Prompt& p = g.prompt(prompt_id);
  std::vector<std::string> out;
  for (const std::string& item : p.items) {
    int won = 0;
    bool disqualified = false;
    for (const PreferenceGraph::Edge& e : p.wins) {
      if (e.a == item) ++won;
      if (e.b == item) disqualified = true;
    }
    for (const PreferenceGraph::Edge& e : p.draws) {
      if (e.a == item || e.b == item) disqualified = true;
    }
    if (!disqualified && won >= 2) out.push_back(item);
  }
  return out;
}

// Items that appear on both sides of win edges within the prompt.
inline std::vector<std::string> contradictory_items(const PreferenceGraph& g,
                                                    const std::string& prompt_id) {
  const PreferenceGraph::Prompt& p = g.prompt(prompt_id);
  std::vector<std::string> out;
  for (const std::string& item : p.items) {
    bool won = false, lost = false;
    for (const PreferenceGraph::Edge& e : p.wins) {
      if (e.a == item) won = true;
      if (e.b == item) lost = true;
    }
    if (won && lost) out.push_back(item);
  }
  return out;
}

enum class Scheme { XY, XY_XZ, XY_YZ };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::XY: return "xy";
    case Scheme::XY_XZ: return "xy-xz";
    case Scheme::XY_YZ: return "xy-yz";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "xy") return Scheme::XY;
  if (s == "xy-xz") return Scheme::XY_XZ;
  if (s == "xy-yz") return Scheme::XY_YZ;
  throw std::invalid_argument("unknown scheme '" + s + "' (expected xy, xy-xz, xy-yz)");
}

namespace detail {

// Most recent win edge with the given winner, or nullptr. Edge lists are kept
// sorted, so the last match is the latest.
inline const PreferenceGraph::Edge* latest_win_by(const PreferenceGraph::Prompt& p,
                                                  const std::string& winner) {
  const PreferenceGraph::Edge* found = nullptr;
  for (const PreferenceGraph::Edge& e : p.wins) {
    if (e.a == winner) found = &e;
  }
  return found;
}

}  // namespace detail

// Reduced training pairs per prompt, anchored at each absolute winner x:
//   xy     — x over y, the loser of x's latest win
//   xy-xz  — additionally x over z, the latest loser of y (an inferred pair)
//   xy-yz  — additionally y over z (an observed pair)
// Prompts without absolute winners contribute nothing; z is emitted only when
// it exists and differs from x. Emitted timestamps are those of the
// witnessing records.
inline std::vector<PreferenceRecord> build_scheme(const PreferenceGraph& g, Scheme scheme) {
  std::vector<PreferenceRecord> out;
  for (const std::string& pid : g.prompt_ids()) {
    const PreferenceGraph::Prompt& p = g.prompt(pid);
    for (const std::string& x : absolute_winners(g, pid)) {
      const PreferenceGraph::Edge* xy = detail::latest_win_by(p, x);
      if (!xy) continue;  // unreachable: absolute winners have wins
      const std::string& y = xy->b;
      out.push_back({pid, x, y, Outcome::win, xy->timestamp});
      if (scheme == Scheme::XY) continue;
      const PreferenceGraph::Edge* yz = detail::latest_win_by(p, y);
      if (!yz || yz->b == x) continue;
      const std::string& z = yz->b;
      if (scheme == Scheme::XY_XZ) {
        out.push_back({pid, x, z, Outcome::win, yz->timestamp});
      } else {
        out.push_back({pid, y, z, Outcome::win, yz->timestamp});
      }
    }
  }
  return out;
}

struct PromptCuration {
  std::string prompt_id;
  std::vector<std::string> absolute_winners;
  std::vector<std::string> contradictory_items;
};

struct CurationReport {
  std::int64_t prompt_count = 0;
  std::int64_t record_count = 0;
  std::int64_t win_record_count = 0;
  std::int64_t draw_record_count = 0;
  std::int64_t kept_pair_count = 0;
  std::int64_t contradiction_count = 0;        // contradictory items, input graph
  std::int64_t contradiction_count_after = 0;  // same recount on the kept records
  std::int64_t scheme_xy = 0;
  std::int64_t scheme_xy_xz = 0;
  std::int64_t scheme_xy_yz = 0;
  std::vector<PromptCuration> prompts;
  std::vector<std::string> cross_prompt_duplicates;  // item ids seen under >1 prompt
};

// Keep the win records whose winner is an absolute winner of its prompt.
inline std::pair<std::vector<PreferenceRecord>, CurationReport> filter_dataset(
    const std::vector<PreferenceRecord>& records) {
  PreferenceGraph g = build_graph(records);
  CurationReport rep;
  rep.record_count = static_cast<std::int64_t>(records.size());

  std::map<std::string, std::set<std::string>> prompts_of_item;
  std::map<std::string, std::set<std::string>> winner_sets;
  for (const std::string& pid : g.prompt_ids()) {
    PromptCuration pc;
    pc.prompt_id = pid;
    pc.absolute_winners = absolute_winners(g, pid);
    pc.contradictory_items = contradictory_items(g, pid);
    rep.contradiction_count += static_cast<std::int64_t>(pc.contradictory_items.size());
    winner_sets[pid].insert(pc.absolute_winners.begin(), pc.absolute_winners.end());
    for (const std::string& item : g.prompt(pid).items) prompts_of_item[item].insert(pid);
    rep.prompts.push_back(std::move(pc));
  }
  rep.prompt_count = static_cast<std::int64_t>(g.prompt_ids().size());
  for (const auto& [item, prompts] : prompts_of_item) {
    if (prompts.size() > 1) rep.cross_prompt_duplicates.push_back(item);
  }

  std::vector<PreferenceRecord> kept;
  for (const PreferenceRecord& r : records) {
    if (r.outcome == Outcome::win) {
      ++rep.win_record_count;
      if (winner_sets[r.prompt_id].count(r.winner_id)) kept.push_back(r);
    } else {
      ++rep.draw_record_count;
    }
  }
  rep.kept_pair_count = static_cast<std::int64_t>(kept.size());

  PreferenceGraph kept_graph = build_graph(kept);
  for (const std::string& pid : kept_graph.prompt_ids()) {
    rep.contradiction_count_after +=
        static_cast<std::int64_t>(contradictory_items(kept_graph, pid).size());
  }

  rep.scheme_xy = static_cast<std::int64_t>(build_scheme(g, Scheme::XY).size());
  rep.scheme_xy_xz = static_cast<std::int64_t>(build_scheme(g, Scheme::XY_XZ).size());
  rep.scheme_xy_yz = static_cast<std::int64_t>(build_scheme(g, Scheme::XY_YZ).size());
  return {std::move(kept), std::move(rep)};
}

// ---- Bradley-Terry scalar layer ----

// Gradient coefficients of one pair's negative log-likelihood under rewards r:
// the winner's log-probability carries -beta*sigmoid(r_l - r_w), the loser's
// the opposite sign. Items outside the pair are untouched.
inline std::map<std::string, double> bt_pair_gradient(const std::map<std::string, double>& r,
                                                      const std::pair<std::string, std::string>& pair,
                                                      double beta) {
  const auto& [winner, loser] = pair;
  require(winner != loser, "bt_pair_gradient: winner equals loser");
  auto rw = r.find(winner), rl = r.find(loser);
  require(rw != r.end() && rl != r.end(), "bt_pair_gradient: missing reward");
  require(std::isfinite(rw->second) && std::isfinite(rl->second),
          "bt_pair_gradient: non-finite reward");
  double s = sigmoid(rl->second - rw->second);
  return {{winner, -beta * s}, {loser, beta * s}};
}

// Net coefficient on the middle item of a chain x3 > x2 > x1: the pair where
// x2 wins pulls one way, the pair where x2 loses pulls the other, leaving
// beta * (sigmoid(r1 - r2) - sigmoid(r2 - r3)). Zero means the two training
// signals on x2 cancel outright.
inline double cancellation_diagnostic(const std::map<std::string, double>& r,
                                      const std::array<std::string, 3>& chain, double beta) {
  const std::string& x1 = chain[0];
  const std::string& x2 = chain[1];
  const std::string& x3 = chain[2];
  require(x1 != x2 && x2 != x3 && x1 != x3, "cancellation_diagnostic: repeated chain item");
  auto r1 = r.find(x1), r2 = r.find(x2), r3 = r.find(x3);
  require(r1 != r.end() && r2 != r.end() && r3 != r.end(),
          "cancellation_diagnostic: missing reward");
  require(std::isfinite(r1->second) && std::isfinite(r2->second) && std::isfinite(r3->second),
          "cancellation_diagnostic: non-finite reward");
  return beta * (sigmoid(r1->second - r2->second) - sigmoid(r2->second - r3->second));
}

// ---- line-delimited JSON IO ----

struct ParseIssue {
  std::int64_t line = 0;
  std::string message;
};

struct ReadResult {
  std::vector<PreferenceRecord> records;
  std::vector<ParseIssue> issues;  // skipped lines (non-strict mode only)
};

namespace detail {

inline bool parse_record_line(const std::string& line, PreferenceRecord& out,
                              std::string& error) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    error = "not a JSON object";
    return false;
  }
  auto str_field = [&](const char* key, std::string& dst) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      error = std::string("missing or non-string field '") + key + "'";
      return false;
    }
    dst = it->get<std::string>();
    return true;
  };
  std::string outcome;
  if (!str_field("prompt_id", out.prompt_id) || !str_field("winner_id", out.winner_id) ||
      !str_field("loser_id", out.loser_id) || !str_field("outcome", outcome)) {
    return false;
  }
  if (outcome == "win") {
    out.outcome = Outcome::win;
  } else if (outcome == "draw") {
    out.outcome = Outcome::draw;
  } else {
    error = "outcome must be 'win' or 'draw'";
    return false;
  }
  auto ts = j.find("timestamp");
  if (ts == j.end() || !ts->is_number_integer()) {
    error = "missing or non-integer field 'timestamp'";
    return false;
  }
  out.timestamp = ts->get<std::int64_t>();
  if (out.prompt_id.empty() || out.winner_id.empty() || out.loser_id.empty()) {
    error = "empty id field";
    return false;
  }
  if (out.winner_id == out.loser_id) {
    error = "item paired with itself";
    return false;
  }
  return true;
}

}  // namespace detail

// Reads records one JSON object per line. Blank lines are ignored. In strict
// mode the first bad line throws with its line number; otherwise bad lines
// are collected as issues and skipped.
inline ReadResult read_records_jsonl(std::istream& in, bool strict) {
  ReadResult res;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    PreferenceRecord rec;
    std::string error;
    if (detail::parse_record_line(line, rec, error)) {
      res.records.push_back(std::move(rec));
    } else if (strict) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " + error);
    } else {
      res.issues.push_back({lineno, error});
    }
  }
  return res;
}

inline void write_record_jsonl(std::ostream& out, const PreferenceRecord& r) {
  nlohmann::ordered_json j;
  j["prompt_id"] = r.prompt_id;
  j["winner_id"] = r.winner_id;
  j["loser_id"] = r.loser_id;
  j["outcome"] = to_string(r.outcome);
  j["timestamp"] = r.timestamp;
  out << j.dump() << '\n';
}

inline void write_records_jsonl(std::ostream& out, const std::vector<PreferenceRecord>& recs) {
  for (const PreferenceRecord& r : recs) write_record_jsonl(out, r);
}

inline nlohmann::ordered_json report_to_json(const CurationReport& rep) {
  nlohmann::ordered_json j;
  j["prompt_count"] = rep.prompt_count;
  j["record_count"] = rep.record_count;
  j["win_record_count"] = rep.win_record_count;
  j["draw_record_count"] = rep.draw_record_count;
  j["kept_pair_count"] = rep.kept_pair_count;
  j["contradiction_count"] = rep.contradiction_count;
  j["contradiction_count_after"] = rep.contradiction_count_after;
  j["scheme_sizes"] = {{"xy", rep.scheme_xy}, {"xy-xz", rep.scheme_xy_xz}, {"xy-yz", rep.scheme_xy_yz}};
  nlohmann::ordered_json prompts = nlohmann::ordered_json::array();
  for (const PromptCuration& pc : rep.prompts) {
    nlohmann::ordered_json p;
    p["prompt_id"] = pc.prompt_id;
    p["absolute_winners"] = pc.absolute_winners;
    p["contradictory_items"] = pc.contradictory_items;
    prompts.push_back(std::move(p));
  }
  j["prompts"] = std::move(prompts);
  j["cross_prompt_duplicates"] = rep.cross_prompt_duplicates;
  return j;
}

inline void write_report_json(std::ostream& out, const CurationReport& rep) {
  out << report_to_json(rep).dump(2) << '\n';
}

inline void write_report_csv(std::ostream& out, const CurationReport& rep) {
  out << "prompt_count,pair_count,kept_pair_count,contradiction_count,"
         "scheme_xy,scheme_xy_xz,scheme_xy_yz\n";
  out << rep.prompt_count << ',' << rep.win_record_count + rep.draw_record_count << ','
      << rep.kept_pair_count << ',' << rep.contradiction_count << ',' << rep.scheme_xy << ','
      << rep.scheme_xy_xz << ',' << rep.scheme_xy_yz << '\n';
}

}  // namespace ncpo
