#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "json.hpp"
#include "ncpo/pref_graph.hpp"
#include "ncpo/rng.hpp"
#include "support.hpp"

using namespace ncpo;

namespace {

PreferenceRecord rec(const std::string& p, const std::string& w, const std::string& l,
                     Outcome o = Outcome::win, std::int64_t ts = 0) {
  return PreferenceRecord{p, w, l, o, ts};
}

using PairSet = std::set<std::pair<std::string, std::string>>;

PairSet pair_set(const std::vector<PreferenceRecord>& records) {
  PairSet out;
  for (const auto& r : records) out.insert({r.winner_id, r.loser_id});
  return out;
}

// Brute-force recount straight from the record list, used as an oracle
// against the graph-based implementations.
struct BruteCounts {
  std::map<std::string, int> wins_out, wins_in, draws;
  std::vector<std::string> items;  // first-seen order
};

BruteCounts brute_counts(const std::vector<PreferenceRecord>& records, const std::string& pid) {
  BruteCounts b;
  auto note = [&](const std::string& id) {
    if (!b.wins_out.count(id)) {
      b.wins_out[id] = b.wins_in[id] = b.draws[id] = 0;
      b.items.push_back(id);
    }
  };
  std::vector<std::string> order;
  for (const auto& r : records) {
    if (r.prompt_id != pid) continue;
    note(r.winner_id);
    note(r.loser_id);
    if (r.outcome == Outcome::win) {
      b.wins_out[r.winner_id]++;
      b.wins_in[r.loser_id]++;
    } else {
      b.draws[r.winner_id]++;
      b.draws[r.loser_id]++;
    }
  }
  // restore first-seen order
  std::vector<std::string> seen;
  for (const auto& r : records) {
    if (r.prompt_id != pid) continue;
    for (const std::string& id : {r.winner_id, r.loser_id}) {
      if (std::find(seen.begin(), seen.end(), id) == seen.end()) seen.push_back(id);
    }
  }
  b.items = seen;
  return b;
}

std::vector<std::string> brute_absolute(const std::vector<PreferenceRecord>& records,
                                        const std::string& pid) {
  BruteCounts b = brute_counts(records, pid);
  std::vector<std::string> out;
  for (const std::string& id : b.items) {
    if (b.wins_in[id] == 0 && b.draws[id] == 0 && b.wins_out[id] >= 2) out.push_back(id);
  }
  return out;
}

std::vector<std::string> brute_contradictory(const std::vector<PreferenceRecord>& records,
                                             const std::string& pid) {
  BruteCounts b = brute_counts(records, pid);
  std::vector<std::string> out;
  for (const std::string& id : b.items) {
    if (b.wins_out[id] >= 1 && b.wins_in[id] >= 1) out.push_back(id);
  }
  return out;
}

// Latest win by `who`: scan all win records of the prompt, keep the one with
// the largest (timestamp, position).
const PreferenceRecord* brute_latest_win(const std::vector<PreferenceRecord>& records,
                                         const std::string& pid, const std::string& who) {
  const PreferenceRecord* best = nullptr;
  for (const auto& r : records) {
    if (r.prompt_id != pid || r.outcome != Outcome::win || r.winner_id != who) continue;
    if (!best || r.timestamp >= best->timestamp) best = &r;
  }
  return best;
}

PairSet brute_scheme(const std::vector<PreferenceRecord>& records, Scheme scheme) {
  PairSet out;
  std::vector<std::string> pids;
  for (const auto& r : records) {
    if (std::find(pids.begin(), pids.end(), r.prompt_id) == pids.end())
      pids.push_back(r.prompt_id);
  }
  for (const std::string& pid : pids) {
    for (const std::string& x : brute_absolute(records, pid)) {
      const PreferenceRecord* xy = brute_latest_win(records, pid, x);
      if (!xy) continue;
      std::string y = xy->loser_id;
      out.insert({x, y});
      if (scheme == Scheme::XY) continue;
      const PreferenceRecord* yz = brute_latest_win(records, pid, y);
      if (!yz || yz->loser_id == x) continue;
      if (scheme == Scheme::XY_XZ) out.insert({x, yz->loser_id});
      if (scheme == Scheme::XY_YZ) out.insert({y, yz->loser_id});
    }
  }
  return out;
}

std::vector<PreferenceRecord> random_records(Rng& rng) {
  int prompts = rng.uniform_int(1, 3);
  std::vector<PreferenceRecord> out;
  for (int p = 0; p < prompts; ++p) {
    std::string pid = "p" + std::to_string(p);
    int items = rng.uniform_int(2, 12);
    int edges = rng.uniform_int(1, 24);
    for (int e = 0; e < edges; ++e) {
      int a = rng.uniform_int(0, items - 1);
      int b = rng.uniform_int(0, items - 1);
      if (a == b) continue;
      Outcome o = rng.uniform() < 0.15 ? Outcome::draw : Outcome::win;
      std::int64_t ts = rng.uniform_int(0, 9);
      out.push_back(rec(pid, "i" + std::to_string(a), "i" + std::to_string(b), o, ts));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("graph construction basics") {
  REQUIRE(build_graph({}).prompt_ids().empty());

  PreferenceGraph g = build_graph({rec("p", "a", "b")});
  REQUIRE(g.prompt_ids() == std::vector<std::string>{"p"});
  REQUIRE(g.prompt("p").items.size() == 2);
  REQUIRE(g.prompt("p").wins.size() == 1);

  PreferenceGraph dup = build_graph({rec("p", "a", "b", Outcome::win, 1),
                                     rec("p", "a", "b", Outcome::win, 2)});
  REQUIRE(dup.prompt("p").wins.size() == 2);

  REQUIRE_THROWS_AS(g.prompt("unknown"), std::out_of_range);
  REQUIRE_THROWS(build_graph({rec("p", "a", "a")}));
  REQUIRE_THROWS(build_graph({rec("p", "", "b")}));
  REQUIRE_THROWS(build_graph({rec("", "a", "b")}));
}

TEST_CASE("absolute winners follow the zero-loss zero-draw two-win rule") {
  auto aw = [](const std::vector<PreferenceRecord>& rs) {
    return absolute_winners(build_graph(rs), "p");
  };
  REQUIRE(aw({rec("p", "a", "b"), rec("p", "a", "c")}) == std::vector<std::string>{"a"});
  REQUIRE(aw({rec("p", "a", "b")}).empty());
  REQUIRE(aw({rec("p", "a", "b"), rec("p", "a", "c"), rec("p", "a", "d", Outcome::draw)}).empty());
}

TEST_CASE("contradictory items appear on both sides of a win") {
  auto ci = [](const std::vector<PreferenceRecord>& rs) {
    return contradictory_items(build_graph(rs), "p");
  };
  REQUIRE(ci({rec("p", "a", "b"), rec("p", "b", "c")}) == std::vector<std::string>{"b"});
  std::vector<std::string> cycle = ci({rec("p", "a", "b"), rec("p", "b", "c"), rec("p", "c", "a")});
  REQUIRE(cycle.size() == 3);
  REQUIRE(ci({rec("p", "a", "b"), rec("p", "a", "c")}).empty());
}

TEST_CASE("scheme construction on the worked fixture") {
  std::vector<PreferenceRecord> rs = {rec("p", "A", "B", Outcome::win, 1),
                                      rec("p", "A", "C", Outcome::win, 2),
                                      rec("p", "C", "D", Outcome::win, 5)};
  PreferenceGraph g = build_graph(rs);
  REQUIRE(pair_set(build_scheme(g, Scheme::XY)) == PairSet{{"A", "C"}});
  REQUIRE(pair_set(build_scheme(g, Scheme::XY_XZ)) == PairSet{{"A", "C"}, {"A", "D"}});
  REQUIRE(pair_set(build_scheme(g, Scheme::XY_YZ)) == PairSet{{"A", "C"}, {"C", "D"}});
}

TEST_CASE("schemes skip prompts without absolute winners and y without wins") {
  PreferenceGraph cycle =
      build_graph({rec("p", "a", "b"), rec("p", "b", "c"), rec("p", "c", "a")});
  REQUIRE(build_scheme(cycle, Scheme::XY_YZ).empty());

  PreferenceGraph star = build_graph({rec("p", "A", "B", Outcome::win, 1),
                                      rec("p", "A", "C", Outcome::win, 2)});
  REQUIRE(pair_set(build_scheme(star, Scheme::XY)) == PairSet{{"A", "C"}});
  REQUIRE(pair_set(build_scheme(star, Scheme::XY_XZ)) == PairSet{{"A", "C"}});
  REQUIRE(pair_set(build_scheme(star, Scheme::XY_YZ)) == PairSet{{"A", "C"}});
}

TEST_CASE("latest-win ties break by input order") {
  std::vector<PreferenceRecord> rs = {rec("p", "A", "B", Outcome::win, 3),
                                      rec("p", "A", "C", Outcome::win, 3)};
  PreferenceGraph g = build_graph(rs);
  REQUIRE(pair_set(build_scheme(g, Scheme::XY)) == PairSet{{"A", "C"}});
}

TEST_CASE("scheme names parse and print") {
  REQUIRE(parse_scheme("xy") == Scheme::XY);
  REQUIRE(parse_scheme("xy-xz") == Scheme::XY_XZ);
  REQUIRE(parse_scheme("xy-yz") == Scheme::XY_YZ);
  REQUIRE_THROWS(parse_scheme("zz"));
  REQUIRE(std::string(to_string(Scheme::XY_XZ)) == "xy-xz");
}

TEST_CASE("filtering keeps stars and drops cycles") {
  std::vector<PreferenceRecord> stars = {rec("p1", "a", "b", Outcome::win, 1),
                                         rec("p1", "a", "c", Outcome::win, 2),
                                         rec("p2", "x", "y", Outcome::win, 3),
                                         rec("p2", "x", "z", Outcome::win, 4)};
  auto [kept_s, rep_s] = filter_dataset(stars);
  REQUIRE(kept_s == stars);
  REQUIRE(rep_s.prompt_count == 2);
  REQUIRE(rep_s.kept_pair_count == 4);
  REQUIRE(rep_s.contradiction_count == 0);

  std::vector<PreferenceRecord> cyc = {rec("p", "a", "b"), rec("p", "b", "c"), rec("p", "c", "a")};
  auto [kept_c, rep_c] = filter_dataset(cyc);
  REQUIRE(kept_c.empty());
  REQUIRE(rep_c.contradiction_count == 3);
  REQUIRE(rep_c.contradiction_count_after == 0);
}

TEST_CASE("random graphs agree with the brute-force recount") {
  Rng rng(20250822);
  for (int trial = 0; trial < 150; ++trial) {
    std::vector<PreferenceRecord> rs = random_records(rng);
    if (rs.empty()) continue;
    PreferenceGraph g = build_graph(rs);
    for (const std::string& pid : g.prompt_ids()) {
      REQUIRE(absolute_winners(g, pid) == brute_absolute(rs, pid));
      REQUIRE(contradictory_items(g, pid) == brute_contradictory(rs, pid));

      // disjointness within every prompt
      auto a = absolute_winners(g, pid);
      auto c = contradictory_items(g, pid);
      for (const std::string& id : a) {
        REQUIRE(std::find(c.begin(), c.end(), id) == c.end());
      }
    }
    for (Scheme s : {Scheme::XY, Scheme::XY_XZ, Scheme::XY_YZ}) {
      REQUIRE(pair_set(build_scheme(g, s)) == brute_scheme(rs, s));
    }
    // monotone scheme growth
    PairSet xy = pair_set(build_scheme(g, Scheme::XY));
    for (Scheme s : {Scheme::XY_XZ, Scheme::XY_YZ}) {
      PairSet bigger = pair_set(build_scheme(g, s));
      for (const auto& p : xy) REQUIRE(bigger.count(p) == 1);
    }
    // kept winners never reappear as losers of kept records in their prompt
    auto [kept, rep] = filter_dataset(rs);
    for (const auto& k : kept) {
      REQUIRE(std::find(brute_absolute(rs, k.prompt_id).begin(),
                        brute_absolute(rs, k.prompt_id).end(),
                        k.winner_id) != brute_absolute(rs, k.prompt_id).end());
      for (const auto& other : kept) {
        if (other.prompt_id == k.prompt_id) REQUIRE(other.loser_id != k.winner_id);
      }
    }
  }
}

TEST_CASE("pairwise ranking coefficients") {
  std::map<std::string, double> r{{"a", 1.0}, {"b", 1.0}};
  auto eq = bt_pair_gradient(r, {"a", "b"}, 2.0);
  REQUIRE(eq["a"] == Catch::Approx(-1.0).margin(1e-15));
  REQUIRE(eq["b"] == Catch::Approx(1.0).margin(1e-15));

  std::map<std::string, double> far{{"a", 100.0}, {"b", 0.0}};
  auto sat = bt_pair_gradient(far, {"a", "b"}, 1.0);
  REQUIRE(std::abs(sat["a"]) < 1e-40);

  std::map<std::string, double> ex{{"first", 0.0}, {"second", 1.0}};
  auto coef = bt_pair_gradient(ex, {"second", "first"}, 1.0);
  REQUIRE(coef["second"] == Catch::Approx(-0.2689414213699951).margin(1e-12));
  REQUIRE(coef["first"] == Catch::Approx(0.2689414213699951).margin(1e-12));

  REQUIRE_THROWS(bt_pair_gradient(ex, {"first", "first"}, 1.0));
  REQUIRE_THROWS(bt_pair_gradient(ex, {"first", "missing"}, 1.0));
}

TEST_CASE("cancellation diagnostic closed form") {
  std::map<std::string, double> flat{{"x", 0.0}, {"y", 0.0}, {"z", 0.0}};
  REQUIRE(cancellation_diagnostic(flat, {"x", "y", "z"}, 1.7) == 0.0);

  std::map<std::string, double> bump{{"x", 0.0}, {"y", 1.0}, {"z", 0.0}};
  double v1 = cancellation_diagnostic(bump, {"x", "y", "z"}, 1.0);
  REQUIRE(v1 == Catch::Approx(-0.46211715726000974).margin(1e-12));
  REQUIRE(cancellation_diagnostic(bump, {"x", "y", "z"}, 2.5) ==
          Catch::Approx(2.5 * v1).margin(1e-12));

  REQUIRE_THROWS(cancellation_diagnostic(bump, {"x", "x", "z"}, 1.0));

  // dropping the pair where the middle item loses leaves a lone coefficient
  std::map<std::string, double> two{{"x1", 0.3}, {"x2", -0.4}};
  auto lone = bt_pair_gradient(two, {"x2", "x1"}, 1.3);
  REQUIRE(lone["x2"] == Catch::Approx(-1.3 * testsup::sigmoid_ref(0.3 - (-0.4))).margin(1e-12));
}

TEST_CASE("cancellation diagnostic is antisymmetric under chain reversal with negated rewards") {
  Rng rng(606);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, double> r{{"a", rng.normal()}, {"b", rng.normal()}, {"c", rng.normal()}};
    std::map<std::string, double> neg;
    for (auto& [k, v] : r) neg[k] = -v;
    double fwd = cancellation_diagnostic(r, {"a", "b", "c"}, 1.0);
    double rev = cancellation_diagnostic(neg, {"c", "b", "a"}, 1.0);
    REQUIRE(fwd == Catch::Approx(-rev).margin(1e-15));
  }
}

TEST_CASE("records survive a JSONL round trip") {
  std::vector<PreferenceRecord> rs = {rec("p1", "a", "b", Outcome::win, 5),
                                      rec("p2", "x", "y", Outcome::draw, -3)};
  std::ostringstream out;
  write_records_jsonl(out, rs);
  std::istringstream in(out.str());
  ReadResult rr = read_records_jsonl(in, true);
  REQUIRE(rr.records == rs);
  REQUIRE(rr.issues.empty());

  // the serialized field order matches the documented wire format
  std::string first_line = out.str().substr(0, out.str().find('\n'));
  REQUIRE(first_line ==
          R"({"prompt_id":"p1","winner_id":"a","loser_id":"b","outcome":"win","timestamp":5})");
}

TEST_CASE("malformed lines are rejected by line number or skipped on request") {
  std::string text =
      R"({"prompt_id":"p","winner_id":"a","loser_id":"b","outcome":"win","timestamp":1})"
      "\n\nnot json\n"
      R"({"prompt_id":"p","winner_id":"a","loser_id":"a","outcome":"win","timestamp":2})"
      "\n"
      R"({"prompt_id":"p","winner_id":"a","loser_id":"c","outcome":"tie","timestamp":3})"
      "\n"
      R"({"prompt_id":"p","winner_id":"a","loser_id":"c","outcome":"win","timestamp":"x"})"
      "\n"
      R"({"prompt_id":"p","winner_id":"a","loser_id":"d","outcome":"win","timestamp":4})"
      "\n";

  std::istringstream strict(text);
  try {
    read_records_jsonl(strict, true);
    FAIL("expected a parse failure");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("line 3") != std::string::npos);
  }

  std::istringstream lax(text);
  ReadResult rr = read_records_jsonl(lax, false);
  REQUIRE(rr.records.size() == 2);
  REQUIRE(rr.records[1].loser_id == "d");
  REQUIRE(rr.issues.size() == 4);
  REQUIRE(rr.issues[0].line == 3);
  REQUIRE(rr.issues[1].line == 4);
  REQUIRE(rr.issues[2].line == 5);
  REQUIRE(rr.issues[3].line == 6);
}

TEST_CASE("curation report serializes to JSON and CSV") {
  std::vector<PreferenceRecord> rs = {rec("p", "a", "b", Outcome::win, 1),
                                      rec("p", "a", "c", Outcome::win, 2),
                                      rec("p", "c", "b", Outcome::win, 3),
                                      rec("p", "b", "d", Outcome::draw, 4)};
  auto [kept, rep] = filter_dataset(rs);
  REQUIRE(rep.win_record_count == 3);
  REQUIRE(rep.draw_record_count == 1);

  std::ostringstream js;
  write_report_json(js, rep);
  auto parsed = nlohmann::json::parse(js.str());
  REQUIRE(parsed["prompt_count"].get<std::int64_t>() == rep.prompt_count);
  REQUIRE(parsed["kept_pair_count"].get<std::int64_t>() == rep.kept_pair_count);
  REQUIRE(parsed["contradiction_count"].get<std::int64_t>() == rep.contradiction_count);

  std::ostringstream csv;
  write_report_csv(csv, rep);
  std::string expect_header =
      "prompt_count,pair_count,kept_pair_count,contradiction_count,scheme_xy,scheme_xy_xz,scheme_"
      "xy_yz";
  REQUIRE(csv.str().substr(0, expect_header.size()) == expect_header);
}
