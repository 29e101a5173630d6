// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "sabm/analysis.hpp"
#include "sabm/promptkit.hpp"
#include "sabm/scenarios/all.hpp"
#include "sabm/scenarios/firm.hpp"
#include "sabm/scenarios/guess.hpp"
#include "sabm/scenarios/plea.hpp"
#include "support.hpp"

using namespace sabm;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

RunResult scripted_run(const std::string& scenario, json params, std::uint64_t seed, const std::filesystem::path& out,
                       int max_rounds = 0) {
  auto backend = make_scripted_backend(params);
  RunConfig c;
  c.scenario = scenario;
  c.seed = seed;
  c.output_dir = out;
  c.max_rounds = max_rounds;
  c.checkpoint_every = 0;
  c.scenario_params = std::move(params);
  return run(c, *backend, default_scenarios(), default_templates());
}

std::vector<json> world_events(const std::filesystem::path& log, const std::string& event) {
  std::vector<json> out;
  for (const auto& r : EventLog::read_file(log)) {
    if (r.kind == EventKind::world && r.payload.value("event", "") == event) out.push_back(r.payload);
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome equilibrium_exactness() {
  Outcome o;
  const firm::MarketParams m;
  const auto t0 = Clock::now();
  const auto b = firm::bertrand_price(m);
  const auto mo = firm::monopoly_price(m);
  const double elapsed = seconds_since(t0);
  o.require(std::abs(b.first - 6) < 1e-9 && std::abs(b.second - 6) < 1e-9, "Bertrand price off");
  o.require(std::abs(mo.first - 8) < 1e-9 && std::abs(mo.second - 8) < 1e-9, "monopoly price off");
  o.require(elapsed < 1e-3, "slower than 1 ms");
  if (o.pass) o.detail = "pB=" + fmt("%.12g", b.first) + " pM=" + fmt("%.12g", mo.first) + " in " + fmt("%.1f", elapsed * 1e6) + " us";
  return o;
}

Outcome best_response_convergence() {
  Outcome o;
  testing::TempDir dir("acc-firm");
  const auto t0 = Clock::now();
  const RunResult r = scripted_run("firm", json::object(), 7, dir.path());
  const double elapsed = seconds_since(t0);
  const auto rounds = world_events(r.log_path, "round");
  o.require(rounds.size() >= 10, "fewer than 10 rounds");
  o.require(rounds.size() >= 1 && rounds[0]["p"] == json({2.0, 2.0}), "round 1 is not (2, 2)");
  for (std::size_t k = 9; k < rounds.size(); ++k) {
    const double p1 = rounds[k]["p"][0], p2 = rounds[k]["p"][1];
    if (std::abs(p1 - 6) >= 0.1 || std::abs(p2 - 6) >= 0.1) {
      o.require(false, "round " + std::to_string(k + 1) + " outside 6 +- 0.1");
      break;
    }
  }
  o.require(r.exit_reason.kind == "convergence" && r.rounds == 400, "detector did not fire at round 400 (" + r.exit_reason.kind + " at " + std::to_string(r.rounds) + ")");
  o.require(elapsed < 1.0, "took " + fmt("%.2f", elapsed) + " s");
  if (o.pass) o.detail = "round 10 price " + fmt("%.2f", rounds[9]["p"][0].get<double>()) + ", convergence at 400, " + fmt("%.2f", elapsed) + " s";
  return o;
}

Outcome profit_plateaus() {
  Outcome o;
  const firm::MarketParams m;
  const auto [q7, q7b] = firm::demand(7, 7, m);
  const auto [q63, q63b] = firm::demand(6.3, 6.3, m);
  const double pi7 = firm::profit(7, m.c1, q7), pi63 = firm::profit(6.3, m.c1, q63);
  o.require(std::abs(pi7 - 3500) < 1e-9 && std::abs(firm::profit(7, m.c2, q7b) - 3500) < 1e-9, "profit at (7,7) = " + fmt("%.12g", pi7));
  o.require(std::abs(pi63 - 3311) < 1e-9 && std::abs(firm::profit(6.3, m.c2, q63b) - 3311) < 1e-9, "profit at (6.3,6.3) = " + fmt("%.12g", pi63));
  if (o.pass) o.detail = "(7,7) -> " + fmt("%.10g", pi7) + ", (6.3,6.3) -> " + fmt("%.10g", pi63);
  return o;
}

Outcome detector_properties() {
  Outcome o;
  auto window = [](int outliers) {
    std::vector<double> v(400, 6.0);
    for (int i = 0; i < outliers; ++i) v[static_cast<std::size_t>(i * 97 % 400)] = 6.5;
    return v;
  };
  o.require(converged(window(4), 8, 6).fired, "396/4 refused");
  o.require(!converged(window(6), 8, 6).fired, "394/6 accepted");
  CounterRng rng(2024);
  std::vector<double> calm, wild;
  for (int i = 0; i < 800; ++i) {
    const double u = 2 * to_unit(rng.next_u64()) - 1;
    calm.push_back(7 + u);
    wild.push_back(7 + 3 * u);
  }
  o.require(bounded_oscillation(calm, 8.0 - 6.0).fired, "amplitude-1 noise refused");
  o.require(!bounded_oscillation(wild, 8.0 - 6.0).fired, "amplitude-3 noise accepted");
  const auto onset = stable_collusion_onset(std::vector<double>(800, 7.0), 6, 8);
  o.require(onset.fired && *onset.detail == 100, "onset on 7.0 is not 100");
  o.require(!stable_collusion_onset(std::vector<double>(800, 6.0), 6, 8).fired, "onset fired on 6.0");
  if (o.pass) o.detail = "396/4 fires, 394/6 refuses, oscillation 1 vs 3, onset 100";
  return o;
}

Outcome guessing_oracle() {
  Outcome o;
  testing::TempDir dir("acc-guess");
  const auto t0 = Clock::now();
  std::size_t worst = 0;
  for (int target = 1; target <= 100; ++target) {
    const RunResult r = scripted_run("guess", {{"target", target}}, 1, dir / std::to_string(target));
    const auto guesses = r.metrics["guesses"].get<std::vector<int>>();
    worst = std::max(worst, guesses.size());
    if (guesses.size() > 7 || guesses.back() != target) o.require(false, "target " + std::to_string(target) + " not found in 7");
    if (target == 28) {
      o.require(guesses == std::vector<int>{50, 25, 37, 31, 28}, "target 28 sequence differs");
      o.require(r.exit_reason.kind == "endpoint" && r.exit_reason.detail.value("message", "") == "Congratulations!",
                "endpoint did not fire on Congratulations!");
    }
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed < 1.0, "took " + fmt("%.2f", elapsed) + " s");
  if (o.pass) o.detail = "max " + std::to_string(worst) + " guesses over 1..100, 28 -> 50 25 37 31 28, " + fmt("%.2f", elapsed) + " s";
  return o;
}

Outcome evacuation_invariants() {
  Outcome o;
  testing::TempDir dir("acc-evac");
  double slowest = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const std::string s = std::to_string(seed);
    const auto t0 = Clock::now();
    const RunResult a = scripted_run("evac", json::object(), seed, dir / ("a" + s));
    slowest = std::max(slowest, seconds_since(t0));
    const RunResult b = scripted_run("evac", json::object(), seed, dir / ("b" + s));
    o.require(testing::slurp(a.log_path) == testing::slurp(b.log_path), "seed " + s + " logs differ");
    o.require(a.rounds <= 50, "seed " + s + " ran past round 50");
    int last = 0;
    for (const auto& round : world_events(a.log_path, "round")) {
      if (round["double_occupancy"] != 0) o.require(false, "seed " + s + " double occupancy");
      if (round["through"]["right"].get<int>() > 1) o.require(false, "seed " + s + " right exit above 1/round");
      if (round["escaped"].get<int>() < last) o.require(false, "seed " + s + " escaped count fell");
      last = round["escaped"];
    }
    // Independent replay of positions from the journal.
    std::map<int, std::pair<int, int>> where;
    for (const auto& p : world_events(a.log_path, "placement")[0]["agents"]) where[p["id"]] = {p["pos"][0], p["pos"][1]};
    for (const auto& round : world_events(a.log_path, "round")) {
      for (const auto& m : round["moves"]) {
        if (m["escaped"].is_null()) where[m["agent"]] = {m["to"][0], m["to"][1]};
        else where.erase(m["agent"].get<int>());
      }
      std::set<std::pair<int, int>> cells;
      for (const auto& [id, p] : where) cells.insert(p);
      if (cells.size() != where.size()) o.require(false, "seed " + s + " replayed positions collide");
    }
  }
  o.require(slowest < 10.0, "slowest run " + fmt("%.2f", slowest) + " s");
  if (o.pass) o.detail = "5 seeds, deterministic, slowest run " + fmt("%.2f", slowest) + " s";
  return o;
}

// Two-sided p by enumerating every relabelling; U from pairwise comparisons.
double mw_enumerated(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const unsigned n = static_cast<unsigned>(pooled.size());
  const unsigned n1 = static_cast<unsigned>(a.size());
  auto u_of = [&](unsigned mask) {
    double u = 0;
    for (unsigned i = 0; i < n; ++i)
      for (unsigned j = 0; j < n; ++j)
        if ((mask >> i & 1u) && !(mask >> j & 1u)) u += pooled[i] > pooled[j] ? 1 : pooled[i] == pooled[j] ? 0.5 : 0;
    return u;
  };
  const double mu = n1 * static_cast<double>(b.size()) / 2;
  const double obs = std::abs(u_of((1u << n1) - 1) - mu);
  double hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<unsigned>(__builtin_popcount(mask)) != n1) continue;
    ++total;
    hit += std::abs(u_of(mask) - mu) >= obs - 1e-9;
  }
  return hit / total;
}

Outcome mann_whitney_exactness() {
  Outcome o;
  testing::Gen g(99);
  int cases = 0;
  double worst = 0;
  for (int n1 = 1; n1 <= 6; ++n1) {
    for (int n2 = 1; n2 <= 6; ++n2) {
      for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> a, b;
        const int levels = rep % 2 ? 4 : 1000;  // ties and no ties
        for (int i = 0; i < n1; ++i) a.push_back(g.integer(0, levels));
        for (int i = 0; i < n2; ++i) b.push_back(g.integer(0, levels));
        const double got = mann_whitney_u(a, b).p_two_sided;
        const double want = mw_enumerated(a, b);
        worst = std::max(worst, std::abs(got - want));
        ++cases;
      }
      std::vector<double> same;
      for (int i = 0; i < n1; ++i) same.push_back(i);
      if (std::abs(mann_whitney_u(same, same).p_two_sided - 1.0) > 1e-12) o.require(false, "identical samples p != 1");
    }
  }
  o.require(worst < 1e-12, "max deviation " + fmt("%.3g", worst));
  if (o.pass) o.detail = std::to_string(cases) + " cases, max |p - enumeration| = " + fmt("%.1g", worst);
  return o;
}

Outcome replay_closure() {
  Outcome o;
  testing::TempDir dir("acc-replay");
  const std::filesystem::path store = dir / "cache.jsonl";
  auto run_with = [&](Backend& backend, const std::string& sub) {
    RunConfig c;
    c.scenario = "firm";
    c.seed = 5;
    c.provider_mode = "record";
    c.max_rounds = 120;
    c.checkpoint_every = 0;
    c.output_dir = dir / sub;
    return run(c, backend, default_scenarios(), default_templates());
  };
  CachingBackend recorder(std::make_shared<ReplayStore>(store), make_scripted_backend());
  const RunResult a = run_with(recorder, "rec");
  auto counting = make_scripted_backend();
  // Replay: no inner backend at all; any miss would throw.
  CachingBackend replayer(std::make_shared<ReplayStore>(store, true), nullptr);
  const RunResult b = run_with(replayer, "rep");
  o.require(!b.aborted, "replay aborted: " + b.error);
  o.require(replayer.inner_calls() == 0 && counting->calls() == 0, "replay reached a backend");
  o.require(replayer.hits() == a.provider_calls, "replay served " + std::to_string(replayer.hits()) + " of " + std::to_string(a.provider_calls));
  o.require(testing::slurp(a.log_path) == testing::slurp(b.log_path), "logs differ");
  if (o.pass) o.detail = std::to_string(recorder.inner_calls()) + " recorded, " + std::to_string(replayer.hits()) + " replayed, 0 backend calls, identical log";
  return o;
}

Outcome tcu_scoring() {
  Outcome o;
  using namespace sabm::plea;
  TcuAnswerSheet flat;
  flat.answers.assign(36, Likert::uncertain);
  const auto s = score_tcu(flat, default_key());
  o.require(s.hostility == 30 && s.risk_taking == 30 && s.social_support == 30, "all-uncertain sheet is not 30/30/30");

  testing::Gen g(7);
  for (int sheet_no = 0; sheet_no < 100; ++sheet_no) {
    TcuAnswerSheet sheet;
    auto key = default_key();
    for (auto& k : key) k.reversed = g.coin();
    for (int i = 0; i < 36; ++i) sheet.answers.push_back(static_cast<Likert>(g.integer(1, 5)));
    std::vector<std::size_t> order(36);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 35; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(g.integer(0, static_cast<int>(i)))]);
    TcuAnswerSheet shuffled;
    std::vector<KeyEntry> shuffled_key;
    for (auto i : order) {
      shuffled.answers.push_back(sheet.answers[i]);
      shuffled_key.push_back(key[i]);
    }
    const auto x = score_tcu(sheet, key), y = score_tcu(shuffled, shuffled_key);
    if (std::abs(x.hostility - y.hostility) > 1e-9 || std::abs(x.risk_taking - y.risk_taking) > 1e-9 ||
        std::abs(x.social_support - y.social_support) > 1e-9) {
      o.require(false, "sheet " + std::to_string(sheet_no) + " not permutation invariant");
    }
  }

  std::string first, second;
  for (int i = 1; i <= 18; ++i) {
    if (i != 5) first += std::to_string(i) + ". agree\n";
    if (i != 12) second += std::to_string(18 + i) + ". disagree\n";
  }
  TcuAnswerSheet parsed;
  parse_tcu_batch(first, 0, 18, parsed);
  parse_tcu_batch(second, 18, 18, parsed);
  o.require(parsed.answers.size() == 36, "parsed " + std::to_string(parsed.answers.size()) + " answers");
  o.require(parsed.declined == std::set<std::size_t>{4, 29}, "gaps not recorded as declined");
  o.require(parsed.answers.size() == 36 && parsed.answers[4] == Likert::uncertain && parsed.answers[29] == Likert::uncertain &&
                parsed.answers[0] == Likert::agree && parsed.answers[35] == Likert::disagree,
            "parsed values wrong");
  if (o.pass) o.detail = "30/30/30, 100 shuffled sheets invariant, 36 answers with 2 gaps";
  return o;
}

Outcome temperature_sampler() {
  Outcome o;
  EventLog log;
  testing::FnBackend none([](const ChatRequest&) { return std::string(); });
  RunContext ctx("acc", "plea", 31, log, none);
  const int n = 100000;
  double sum = 0;
  int inside = 0;
  for (int i = 0; i < n; ++i) {
    const double t = plea::sample_temperature(ctx);
    if (t < 0 || t > 2) o.require(false, "draw outside [0, 2]");
    sum += t;
    inside += t > 0 && t < 2;
  }
  o.require(std::abs(sum / n - 1) <= 0.05, "mean " + fmt("%.4f", sum / n));
  o.require(inside >= 0.995 * n, "strictly inside " + fmt("%.4f", inside / double(n)));
  if (o.pass) o.detail = "mean " + fmt("%.4f", sum / n) + ", strictly inside " + fmt("%.2f%%", 100.0 * inside / n);
  return o;
}

Outcome plea_battery() {
  Outcome o;
  testing::TempDir dir("acc-plea");
  const RunResult r = scripted_run("plea", {{"families", {"substantive"}}, {"groups", {"guilty", "innocent"}}, {"n_agents", 200}}, 3, dir / "gap");
  const json& g = r.metrics["wtap"]["guilty"]["substantive:30@50%"];
  const json& i = r.metrics["wtap"]["innocent"]["substantive:30@50%"];
  o.require(g["n"] == 200 && i["n"] == 200, "arms are not n = 200");
  o.require(g["wtap"] == 1.0 && i["wtap"] == 0.0, "WTAP " + g["wtap"].dump() + " vs " + i["wtap"].dump());
  const auto test = two_proportion_test(g["accept"], g["n"], i["accept"], i["n"]);
  o.require(test.p_two_sided < 1e-3, "p = " + fmt("%.3g", test.p_two_sided));

  const RunResult risk = scripted_run("plea", {{"families", {"risk"}}, {"n_agents", 20}}, 3, dir / "risk");
  const std::vector<std::string> grid{"risk:3@5%", "risk:18@30%", "risk:30@50%", "risk:42@70%", "risk:57@95%"};
  for (const auto& [group, cells] : risk.metrics["wtap"].items()) {
    double prev = -1;
    for (const auto& c : grid) {
      const double w = cells[c]["wtap"];
      if (w < prev) o.require(false, group + " accept fraction falls at " + c);
      prev = w;
    }
  }
  // The grid above is flat for the oracle; also sweep a finer one.
  for (int period = 0; period <= 60; period += 3) {
    for (auto self : {plea::SelfPerception::guilty, plea::SelfPerception::innocent, plea::SelfPerception::uncertain}) {
      bool was = false;
      for (int p = 0; p <= 100; ++p) {
        const bool now = plea::PleaOracle::accepts(self, period, p, plea::Comparative::none);
        if (was && !now) o.require(false, "oracle not monotone at period " + std::to_string(period));
        was = now;
      }
    }
  }
  if (o.pass) o.detail = "guilty 1.00 vs innocent 0.00 (p = " + fmt("%.2g", test.p_two_sided) + "), risk grid monotone";
  return o;
}

Outcome classifier_fixtures() {
  Outcome o;
  testing::TempDir dir("acc-classify");
  auto backend = make_scripted_backend();
  ValidationBatch batch;
  batch.scenario = "guess";
  batch.params = {{"target", "random"}, {"bsearch_hint", true}};
  batch.variants = {VariantSelection::parse("guess.rules:paraphrase:v1"),
                    VariantSelection::parse("guess.knowledge:elements:no_bsearch")};
  batch.runs_per_arm = 10;
  batch.output_dir = dir.path();
  const ValidationReport rep = run_validation(batch, *backend, default_scenarios(), default_templates());
  o.require(rep.verdicts.size() == 2, "missing verdicts");
  if (rep.verdicts.size() == 2) {
    o.require(rep.verdicts[0].level == VariationLevel::low, std::string("identical arms -> ") + std::string(to_string(rep.verdicts[0].level)));
    o.require(rep.verdicts[1].level == VariationLevel::medium, std::string("bsearch vs random bisect -> ") + std::string(to_string(rep.verdicts[1].level)));
    o.require(rep.verdicts[1].baseline_mode == rep.verdicts[1].variant_mode, "bisect arms changed label");
  }
  // Distinct behaviour labels: a bisecting arm against one that repeats a ruled-out guess.
  MetricSample bisecting, wandering;
  for (int t = 1; t <= 10; ++t) {
    std::vector<guess::GuessRecord> h;
    int lo = 1, hi = 100;
    while (true) {
      const int x = (lo + hi) / 2;
      h.push_back({x, guess::adjudicate(t * 9, x)});
      if (x == t * 9) break;
      (x > t * 9 ? hi : lo) = x > t * 9 ? x - 1 : x + 1;
    }
    bisecting.values.push_back(static_cast<double>(h.size()));
    bisecting.labels.push_back(guess::behavior_label(1, 100, h));
    h.insert(h.end() - 1, h.front());
    wandering.values.push_back(static_cast<double>(h.size()));
    wandering.labels.push_back(guess::behavior_label(1, 100, h));
  }
  const auto high = classify_variation(bisecting, wandering);
  o.require(high.level == VariationLevel::high, std::string("distinct labels -> ") + std::string(to_string(high.level)));
  if (o.pass) {
    o.detail = "paraphrase low, no_bsearch medium (p = " + fmt("%.3g", rep.verdicts[1].p_value.value_or(1)) +
               "), " + high.baseline_mode + " vs " + high.variant_mode + " high";
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"equilibrium exactness", equilibrium_exactness},
      {"best-response convergence", best_response_convergence},
      {"profit plateaus", profit_plateaus},
      {"detector properties", detector_properties},
      {"number-guessing oracle", guessing_oracle},
      {"evacuation invariants", evacuation_invariants},
      {"Mann-Whitney exactness", mann_whitney_exactness},
      {"replay closure", replay_closure},
      {"TCU scoring", tcu_scoring},
      {"temperature sampler", temperature_sampler},
      {"plea battery", plea_battery},
      {"variation classifier", classifier_fixtures},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
