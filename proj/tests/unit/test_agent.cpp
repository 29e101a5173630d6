#include <doctest.h>

#include "sabm/agent.hpp"
#include "sabm/error.hpp"
#include "sabm/runtime.hpp"
#include "support.hpp"

using namespace sabm;
using testing::FnBackend;
using testing::Gen;

namespace {

int count_occurrences(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (std::size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + needle.size())) ++n;
  return n;
}

}  // namespace

TEST_CASE("first_number skips numbers glued to words") {
  CHECK(first_number("I guess 42.") == 42.0);
  CHECK(first_number("round2 then 7") == 7.0);
  CHECK(first_number("price: -3.25 dollars") == -3.25);
  CHECK(first_number("gpt4 abc") == std::nullopt);
  CHECK(first_number("1.5.") == 1.5);
  CHECK(first_number("") == std::nullopt);
}

TEST_CASE("integer, decimal and free-text parsers") {
  CHECK(parse_action("My guess is 37", ParserSpec::integer()).number() == 37.0);
  CHECK_FALSE(parse_action("37.5", ParserSpec::integer()).conforming);
  CHECK_FALSE(parse_action("no idea", ParserSpec::integer()).conforming);
  CHECK(parse_action("I will post 6.256", ParserSpec::decimal(2)).number() == doctest::Approx(6.26));
  const auto ft = parse_action("  hello \n", ParserSpec::free_text());
  CHECK(ft.conforming);
  CHECK(std::get<FreeText>(ft.value).text == "hello");
  CHECK_FALSE(parse_action(" \n ", ParserSpec::free_text()).conforming);
}

TEST_CASE("choice parsing is case-insensitive and needs exactly one match") {
  const auto spec = ParserSpec::choice({"left", "bottom", "right"});
  CHECK(parse_action("LEFT.", spec).choice() == "left");
  CHECK(parse_action("I pick the right exit!", spec).choice() == "right");
  CHECK_FALSE(parse_action("left or right", spec).conforming);
  CHECK_FALSE(parse_action("leftmost", spec).conforming);
}

TEST_CASE("two-line answers: reason first, decision last") {
  const auto spec = ParserSpec::two_line({"accept", "reject"});
  const auto a = parse_action("I might reject it at first.\n\nAccept", spec);
  REQUIRE(a.conforming);
  CHECK(a.two_line()->reason == "I might reject it at first.");
  CHECK(a.choice() == "accept");
  CHECK_FALSE(parse_action("accept", spec).conforming);
  const auto n = parse_action("cheap\n6.5", ParserSpec::two_line());
  CHECK(n.number() == 6.5);
}

TEST_CASE("property: parsers are total") {
  Gen g(23);
  const std::vector<ParserSpec> specs{ParserSpec::integer(), ParserSpec::decimal(1), ParserSpec::choice({"a", "b"}),
                                      ParserSpec::two_line({"x", "y"}), ParserSpec::two_line(), ParserSpec::free_text()};
  for (int i = 0; i < 3000; ++i) {
    std::string raw = g.word(20);
    if (g.coin()) raw += "\n" + g.word(6);
    for (const auto& s : specs) {
      ParsedAction p;
      CHECK_NOTHROW(p = parse_action(raw, s));
      CHECK(p.raw == raw);
      CHECK(p.conforming == (p.value.index() != 0));
    }
  }
}

TEST_CASE("property: history never exceeds capacity and keeps the newest") {
  Gen g(31);
  for (int trial = 0; trial < 200; ++trial) {
    AgentState a;
    a.capacity = static_cast<std::size_t>(g.integer(1, 6));
    int round = 0;
    std::vector<Observation> all;
    for (int k = 0; k < g.integer(0, 20); ++k) {
      round += g.integer(0, 2);
      Observation o{round, ObservationKind::feedback, g.word(), {}};
      a = observe(a, o);
      all.push_back(o);
      CHECK(a.history.size() <= a.capacity);
    }
    const std::size_t keep = std::min(all.size(), a.capacity);
    CHECK(std::equal(a.history.begin(), a.history.end(), all.end() - static_cast<long>(keep)));
  }
  AgentState a;
  a = observe(a, {5, ObservationKind::feedback, "x", {}});
  CHECK_THROWS_AS(observe(a, {4, ObservationKind::feedback, "y", {}}), DomainError);
}

TEST_CASE("agent state JSON round trip") {
  AgentState a;
  a.agent_id = "firm1";
  a.persona = "calm";
  a.plan = "hold";
  a.attrs = {{"cost", 2}};
  a = observe(a, {1, ObservationKind::own_action, "6", {6.0}});
  CHECK(agent_from_json(to_json_value(a)) == a);
}

TEST_CASE("property: a stored plan appears exactly once in every prompt") {
  Gen g(41);
  const std::vector<PromptTemplate> templates{{"a", "Decide now."}, {"b", "Plan: {plan}. Decide."},
                                              {"c", "{persona} thinks. Decide."}};
  for (int i = 0; i < 300; ++i) {
    AgentState a;
    a.persona = g.coin() ? "" : "You are persona" + std::to_string(i) + ".";
    a.plan = "PLAN-" + std::to_string(g.u64());
    for (const auto& t : templates) {
      const std::string p = compose_prompt(a, t, {});
      CHECK(count_occurrences(p, *a.plan) == 1);
      if (!a.persona.empty()) CHECK(count_occurrences(p, a.persona) == 1);
    }
  }
}

TEST_CASE("act_text retries once with a format reminder") {
  EventLog log;
  int calls = 0;
  FnBackend backend([&](const ChatRequest& r) {
    ++calls;
    return r.messages.size() > 2 ? std::string("42") : std::string("hmm");
  });
  RunContext ctx("r", "guess", 1, log, backend);
  ctx.set_stage("guess");
  AgentState a;
  a.agent_id = "g";
  a.persona = "persona text";
  const auto res = act_text(a, "Guess.", ParserSpec::integer(), ctx);
  CHECK(res.action.conforming);
  CHECK(res.action.attempts == 2);
  CHECK(res.action.number() == 42.0);
  CHECK(res.prompt == "Guess.");  // act_text does not prefix the persona
  CHECK(calls == 2);
  int prompts = 0, parsed = 0;
  for (const auto& r : log.records()) {
    prompts += r.kind == EventKind::prompt;
    parsed += r.kind == EventKind::parsed;
  }
  CHECK(prompts == 2);
  CHECK(parsed == 1);
}

TEST_CASE("reflect stores the plan, explain leaves the agent untouched") {
  EventLog log;
  std::vector<std::string> seen;
  FnBackend backend([&](const ChatRequest& r) {
    seen.push_back(r.messages.back().content);
    return std::string("  undercut slightly \n");
  });
  RunContext ctx("r", "firm", 1, log, backend);
  AgentState a;
  a.agent_id = "f";
  a.persona = "Be bold.";
  const AgentState planned = reflect(a, "Summarize your history.", ctx);
  CHECK(planned.plan == "undercut slightly");
  CHECK(seen.back().rfind("Be bold.", 0) == 0);

  const auto res = act_text(planned, "Price?", ParserSpec::free_text(), ctx);
  const AgentState before = res.agent;
  const std::string why = explain(res.agent, res, "Why?", ctx);
  CHECK(why == "undercut slightly");
  CHECK(res.agent == before);
  const auto& last = log.records().back();
  CHECK(last.payload["event"] == "explanation");
  CHECK(last.payload["decision_seq"] == res.prompt_seq);
}
