#include <doctest.h>

#include "sabm/error.hpp"
#include "sabm/scenarios/all.hpp"
#include "sabm/scenarios/guess.hpp"
#include "support.hpp"

using namespace sabm;
using namespace sabm::guess;
using nlohmann::json;
using testing::Gen;
using testing::TempDir;

namespace {

// Reference bisection written out independently of the scenario code.
std::vector<int> bisect(int target, int lo = 1, int hi = 100) {
  std::vector<int> out;
  while (true) {
    const int g = (lo + hi) / 2;
    out.push_back(g);
    if (g == target) return out;
    if (g > target) hi = g - 1;
    else lo = g + 1;
  }
}

RunResult play(const std::filesystem::path& out, json params, std::uint64_t seed = 1) {
  auto backend = make_scripted_backend();
  RunConfig c;
  c.scenario = "guess";
  c.seed = seed;
  c.output_dir = out;
  c.scenario_params = std::move(params);
  return run(c, *backend, default_scenarios(), default_templates());
}

std::vector<int> guesses_of(const RunResult& r) { return r.metrics["guesses"].get<std::vector<int>>(); }

ChatRequest guess_request(const std::string& user) {
  ChatRequest r;
  r.messages = {{Role::system, make_system_message({"guess", "guess"}, "guesser")}, {Role::user, user}};
  return r;
}

}  // namespace

TEST_CASE("adjudication and feedback wording") {
  CHECK(adjudicate(28, 50) == Feedback::higher);
  CHECK(adjudicate(28, 25) == Feedback::lower);
  CHECK(adjudicate(28, 28) == Feedback::correct);
  CHECK(feedback_text(Feedback::correct) == "Congratulations!");
  CHECK(format_history({}) == "none");
  CHECK(format_history({{50, Feedback::higher}, {25, Feedback::lower}}) ==
        "50 (higher than the answer), 25 (lower than the answer)");
}

TEST_CASE("feasible interval and floor midpoint") {
  const auto iv = feasible_interval(1, 100, {{50, Feedback::higher}, {25, Feedback::lower}});
  CHECK(iv.lo == 26);
  CHECK(iv.hi == 49);
  CHECK(floor_midpoint(iv) == 37);
  CHECK(floor_midpoint({-3, 0}) == -2);
}

TEST_CASE("property: bisection histories are labelled binary_search, stray guesses are not") {
  Gen g(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int target = g.integer(1, 100);
    std::vector<GuessRecord> h;
    for (int x : bisect(target)) h.push_back({x, adjudicate(target, x)});
    CHECK(behavior_label(1, 100, h) == "binary_search");
    if (h.size() >= 2) {
      // Re-guessing a value already ruled out leaves the feasible range.
      auto bad = h;
      bad.insert(bad.end() - 1, {h[0].guess, h[0].feedback});
      CHECK(behavior_label(1, 100, bad) == "other");
    }
  }
}

TEST_CASE("scripted guesser follows the history in its prompt") {
  const GuessOracle o;
  const std::string rules = "The number will be an integer ranging from 1 to 100. ";
  CHECK(o.respond(guess_request(rules + "Now please make your first guess. Only reply the number (e.g., 12).")) == "50");
  const std::string later = rules +
      "Your previous guess was 25. The history of your guess is 50 (higher than the answer), 25 (lower than the "
      "answer). Only reply the number (e.g., 12).";
  CHECK(o.respond(guess_request(later)) == "37");
}

TEST_CASE("every target from 1 to 100 is found by bisection in at most seven guesses") {
  TempDir dir("guess-all");
  for (int target = 1; target <= 100; ++target) {
    const RunResult r = play(dir / std::to_string(target), {{"target", target}});
    CHECK(r.exit_reason.kind == "endpoint");
    CHECK(guesses_of(r) == bisect(target));
    CHECK(r.rounds <= 7);
    CHECK(r.metrics["behavior_label"] == "binary_search");
  }
}

TEST_CASE("target 28 with the language-model adjudicator") {
  TempDir dir("guess-llm");
  const RunResult r = play(dir.path(), {{"target", 28}, {"llm_adjudicator", true}});
  CHECK(guesses_of(r) == std::vector<int>{50, 25, 37, 31, 28});
  CHECK(r.exit_reason.detail["message"] == "Congratulations!");
  CHECK(r.metrics["anomalies"] == 0);
}

TEST_CASE("target drawn by the adjudicator or the run rng") {
  TempDir dir("guess-draw");
  const RunResult asked = play(dir / "asked", json::object());
  const int t = asked.metrics["target"];
  CHECK((t >= 1 && t <= 100));
  CHECK(guesses_of(asked).back() == t);
  const RunResult a = play(dir / "r1", {{"target", "random"}}, 5);
  const RunResult b = play(dir / "r2", {{"target", "random"}}, 5);
  CHECK(a.metrics["target"] == b.metrics["target"]);
  CHECK(testing::slurp(a.log_path) == testing::slurp(b.log_path));
}

TEST_CASE("prompt variants change the scripted strategy") {
  TempDir dir("guess-var");
  const RunResult even = play(dir / "even", {{"target", "random"}, {"variants", {"guess.rules:objectives:even_only"}}}, 3);
  CHECK(even.metrics["target"].get<int>() % 2 == 0);
  for (int x : guesses_of(even)) CHECK(x % 2 == 0);

  const RunResult wander =
      play(dir / "nb", {{"target", 28}, {"bsearch_hint", true}, {"variants", {"guess.knowledge:elements:no_bsearch"}}});
  CHECK(guesses_of(wander).back() == 28);
  CHECK(guesses_of(wander) != bisect(28));
}

TEST_CASE("planning, reasoning and explanations are journaled") {
  TempDir dir("guess-plan");
  const RunResult r = play(dir.path(), {{"target", 28}, {"planning", 2}, {"reasoning", true}, {"explain", true}});
  CHECK(guesses_of(r) == bisect(28));
  int plans = 0, explanations = 0;
  for (const auto& rec : EventLog::read_file(r.log_path)) {
    if (rec.kind == EventKind::parsed && rec.payload.contains("plan")) ++plans;
    if (rec.kind == EventKind::world && rec.payload["event"] == "explanation") ++explanations;
  }
  CHECK(plans == 1);
  CHECK(explanations == 5);
}

TEST_CASE("guess params reject bad ranges") {
  CHECK_THROWS_AS(GuessParams::from_json({{"range_begin", 10}, {"range_end", 1}}), ConfigError);
  const auto p = GuessParams::from_json({{"target", "random"}});
  CHECK(p.random_target);
  CHECK_FALSE(p.target);
}

TEST_CASE("probe answers from a supplied history") {
  auto backend = make_scripted_backend();
  const json obs = {{"history", {{50, "higher"}, {25, "lower"}}}};
  const ProbeReport r = probe("guess", {{"target", 28}}, json::object(), obs, *backend, default_scenarios(),
                             default_templates());
  CHECK(r.summary["guess"] == 37.0);
}
