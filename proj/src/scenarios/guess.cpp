#include "sabm/scenarios/guess.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "sabm/error.hpp"
#include "sabm/scenarios/common.hpp"

namespace sabm::guess {

using nlohmann::json;

Feedback adjudicate(int target, int guess) {
  if (guess == target) return Feedback::correct;
  return guess > target ? Feedback::higher : Feedback::lower;
}

std::string feedback_text(Feedback feedback) {
  switch (feedback) {
    case Feedback::correct: return "Congratulations!";
    case Feedback::higher: return "The guess is higher than the answer.";
    case Feedback::lower: return "The guess is lower than the answer.";
  }
  return {};
}

std::string_view to_string(Feedback feedback) {
  switch (feedback) {
    case Feedback::correct: return "correct";
    case Feedback::higher: return "higher";
    case Feedback::lower: return "lower";
  }
  return "higher";
}

namespace {

Feedback feedback_from_string(std::string_view s) {
  if (s == "correct") return Feedback::correct;
  if (s == "higher") return Feedback::higher;
  if (s == "lower") return Feedback::lower;
  throw SerializationError("unknown feedback '" + std::string(s) + "'");
}

}  // namespace

std::string format_history(const std::vector<GuessRecord>& history) {
  if (history.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(history[i].guess);
    switch (history[i].feedback) {
      case Feedback::higher: out += " (higher than the answer)"; break;
      case Feedback::lower: out += " (lower than the answer)"; break;
      case Feedback::correct: out += " (correct)"; break;
    }
  }
  return out;
}

Interval feasible_interval(int lo, int hi, const std::vector<GuessRecord>& history) {
  Interval iv{lo, hi};
  for (const auto& h : history) {
    if (h.feedback == Feedback::higher) iv.hi = std::min(iv.hi, h.guess - 1);
    if (h.feedback == Feedback::lower) iv.lo = std::max(iv.lo, h.guess + 1);
  }
  return iv;
}

int floor_midpoint(Interval iv) {
  // floor for negative sums too
  const long s = static_cast<long>(iv.lo) + iv.hi;
  return static_cast<int>(s >= 0 ? s / 2 : -((-s + 1) / 2));
}

std::string behavior_label(int lo, int hi, const std::vector<GuessRecord>& history) {
  std::vector<GuessRecord> seen;
  for (const auto& h : history) {
    const Interval iv = feasible_interval(lo, hi, seen);
    if (h.guess < iv.lo || h.guess > iv.hi) return "other";
    seen.push_back(h);
  }
  return "binary_search";
}

GuessParams GuessParams::from_json(const json& p) {
  GuessParams g;
  g.range_begin = p.value("range_begin", 1);
  g.range_end = p.value("range_end", 100);
  if (g.range_begin > g.range_end) throw ConfigError("range_begin must not exceed range_end");
  if (p.contains("target")) {
    const auto& t = p["target"];
    if (t.is_string() && t.get<std::string>() == "random") {
      g.random_target = true;
    } else if (t.is_number_integer()) {
      g.target = t.get<int>();
      if (*g.target < g.range_begin || *g.target > g.range_end) throw ConfigError("target outside the range");
    } else if (!t.is_null()) {
      throw ConfigError("target must be an integer or \"random\"");
    }
  }
  g.bsearch_hint = p.value("bsearch_hint", false);
  g.one_shot = p.value("one_shot", false);
  g.reasoning = p.value("reasoning", false);
  if (p.contains("planning")) {
    const auto& pl = p["planning"];
    if (pl.is_string()) {
      const auto s = pl.get<std::string>();
      if (s == "start") g.planning_after = 0;
      else if (s == "none") g.planning_after = -1;
      else throw ConfigError("planning must be \"none\", \"start\" or a guess count");
    } else {
      g.planning_after = pl.get<int>();
    }
  }
  g.persona = p.value("persona", "none");
  if (g.persona != "none" && g.persona != "aggressive" && g.persona != "conservative") {
    throw ConfigError("guess persona must be none, aggressive or conservative");
  }
  g.hint_conversation = p.value("hint", false);
  g.explain = p.value("explain", false);
  g.llm_adjudicator = p.value("adjudicator", std::string("rule")) == "llm";
  g.variants = selections_from_params(p);
  g.settings = settings_from_params(p);
  return g;
}

// ---------------------------------------------------------------------------
// Templates

void register_templates(TemplateRegistry& r) {
  r.add({"guess.adjudicator.think",
         "Now you are participating in a number-guessing game. You are the one responsible for thinking up the "
         "numbers. Please think of an integer, ranging from {range begin} to {range end}. Only reply the number "
         "(e.g., 12)."});
  r.add({"guess.adjudicator.judge",
         "You are participating in a number-guessing game and you are the one responsible for thinking up the "
         "numbers. You decided {target number} as the answer. Your opponent had made a guess of {guess}. Can you "
         "tell your opponent if the guess is right, higher than the answer, or lower than the answer? If the guess "
         "is correct, please say \"Congratulations!\"."});
  r.add({"guess.adjudicator.hint",
         "You are participating in a number-guessing game and you are the one responsible for thinking up the "
         "numbers. You decided {target number} as the answer. To help your opponent guess the number, can you give "
         "a hint to your opponent?"});
  r.add({"guess.intro.first",
         "Now you are participating in a number-guessing game. You are the one in charge of guessing."});
  r.add({"guess.intro.next",
         "You are participating in a number-guessing game and you are the one to guess the number."});
  r.add({"guess.rules", "The number will be an integer ranging from {range begin} to {range end}."});
  r.add_variant({"guess.rules", VariantKind::paraphrase, "v1", "Pick an integer from {range begin} to {range end}."});
  r.add_variant({"guess.rules", VariantKind::objectives, "even_only",
                 "The number will be an even integer ranging from {range begin} to {range end}."});
  r.add({"guess.feedback_rule",
         "After you made a guess, you will be informed if your guess is right, higher than the answer, or lower "
         "than the answer."});
  r.add({"guess.first_call", "Now please make your first guess."});
  r.add({"guess.previous", "Your previous guess was {previous guess}. The history of your guess is {guess history}."});
  r.add({"guess.history_only", "The history of your guess is {guess history}."});
  r.add({"guess.hint", "To help you guess the number, your opponent gives you a hint: {hint}."});
  r.add({"guess.format.number", "Only reply the number (e.g., 12)."});
  r.add({"guess.format.reasoning",
         "Please briefly provide the reason for your guess in the first line and reply with the number in the "
         "second line (e.g., 12)."});
  r.add({"guess.knowledge", "You can use binary search to optimize your guess."});
  r.add_variant({"guess.knowledge", VariantKind::elements, "no_bsearch", "You cannot use binary search."});
  r.add({"guess.oneshot", "An example of guesses aimed at 6: 50, 25, 12, 6."});
  r.add({"guess.plan.ask", "Based on your guess history, what is your strategy for the next few guesses?"});
  r.add({"guess.plan.use", "Your strategy for this guess is {strategy}."});
  r.add({"guess.persona.aggressive", "You need to perform aggressively while guessing."});
  r.add({"guess.persona.conservative", "You need to perform conservatively while guessing."});
  r.add({"guess.explain",
         "Can you briefly explain why you make your previous guess as {previous guess}? (No more than 40 words.)"});
}

// ---------------------------------------------------------------------------
// Oracle

namespace {

std::uint64_t text_hash(const std::string& text) {
  return std::stoull(sha256_hex(text).substr(0, 16), nullptr, 16);
}

std::optional<Interval> parse_range(const std::string& text) {
  static const std::regex kRange(R"(integer(?: ranging)? from (-?\d+) to (-?\d+))");
  std::smatch m;
  if (!std::regex_search(text, m, kRange)) return std::nullopt;
  return Interval{std::stoi(m[1].str()), std::stoi(m[2].str())};
}

std::vector<GuessRecord> parse_history(const std::string& text) {
  static const std::regex kEntry(R"((-?\d+) \((higher|lower) than the answer\))");
  std::vector<GuessRecord> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kEntry); it != std::sregex_iterator(); ++it) {
    out.push_back({std::stoi((*it)[1].str()), (*it)[2].str() == "higher" ? Feedback::higher : Feedback::lower});
  }
  return out;
}

int oracle_guess(const std::string& text) {
  const auto range = parse_range(text);
  if (!range) return 50;
  Interval iv = feasible_interval(range->lo, range->hi, parse_history(text));
  if (iv.lo > iv.hi) return range->lo;  // inconsistent history; stay in range
  if (text.find("even integer") != std::string::npos) {
    const int lo_e = iv.lo % 2 == 0 ? iv.lo : iv.lo + 1;
    const int hi_e = iv.hi % 2 == 0 ? iv.hi : iv.hi - 1;
    if (lo_e <= hi_e) return 2 * floor_midpoint({lo_e / 2, hi_e / 2});
  }
  if (text.find("cannot use binary search") != std::string::npos) {
    const auto width = static_cast<std::uint64_t>(iv.hi - iv.lo + 1);
    return iv.lo + static_cast<int>(text_hash(text) % width);
  }
  return floor_midpoint(iv);
}

}  // namespace

std::string GuessOracle::respond(const ChatRequest& request) const {
  const auto tag = parse_scenario_tag(request);
  const std::string stage = tag ? tag->stage : "guess";
  const std::string& text = last_user_text(request);
  if (stage == "think") {
    const auto range = parse_range(text).value_or(Interval{1, 100});
    return std::to_string(range.lo + static_cast<int>(text_hash(text) % static_cast<std::uint64_t>(range.hi - range.lo + 1)));
  }
  if (stage == "judge") {
    static const std::regex kJudge(R"(You decided (-?\d+) as the answer\. Your opponent had made a guess of (-?\d+))");
    std::smatch m;
    if (!std::regex_search(text, m, kJudge)) return "I cannot tell.";
    return feedback_text(adjudicate(std::stoi(m[1].str()), std::stoi(m[2].str())));
  }
  if (stage == "hint") {
    static const std::regex kTarget(R"(You decided (-?\d+) as the answer)");
    std::smatch m;
    if (!std::regex_search(text, m, kTarget)) return "No hint.";
    const int t = std::stoi(m[1].str());
    return "between " + std::to_string(t - 5) + " and " + std::to_string(t + 5);
  }
  if (stage == "plan") {
    const auto range = parse_range(text).value_or(Interval{1, 100});
    const Interval iv = feasible_interval(range.lo, range.hi, parse_history(text));
    return "Guess the midpoint of the remaining range " + std::to_string(iv.lo) + "-" + std::to_string(iv.hi) +
           " and halve the range after each answer.";
  }
  if (stage == "explain") return "It is the midpoint of the range that is still possible.";
  const int g = oracle_guess(text);
  if (text.find("reason for your guess in the first line") != std::string::npos) {
    return "I chose " + std::to_string(g) + " because it splits the remaining range in half.\n" + std::to_string(g);
  }
  return std::to_string(g);
}

// ---------------------------------------------------------------------------
// Scenario

namespace {

class GuessScenario final : public Scenario {
 public:
  GuessScenario(GuessParams params, const TemplateRegistry& templates)
      : p_(std::move(params)), templates_(templates) {
    guesser_.agent_id = "guesser";
    guesser_.settings = p_.settings;
    guesser_.capacity = 1000;
    if (p_.persona != "none") guesser_.persona = render_id(templates_, p_.variants, "guess.persona." + p_.persona);
    adjudicator_.agent_id = "adjudicator";
    adjudicator_.settings = p_.settings;
    even_only_ = has_selection(p_.variants, "guess.rules", "even_only");
  }

  std::string name() const override { return "guess"; }
  std::vector<std::string> stages() const override { return {"think", "hint", "plan", "guess", "judge", "explain"}; }
  int default_max_rounds() const override { return 100; }

  void init(RunContext& ctx) override {
    if (p_.target) {
      target_ = *p_.target;
    } else if (p_.random_target) {
      target_ = draw_target(ctx, "guess.target");
    } else {
      ctx.set_stage("think");
      const auto res = act_text(adjudicator_,
                                render_id(templates_, p_.variants, "guess.adjudicator.think", range_bindings()),
                                ParserSpec::integer(), ctx);
      const auto v = res.action.number();
      if (v && *v >= p_.range_begin && *v <= p_.range_end) {
        target_ = static_cast<int>(*v);
      } else {
        anomaly(ctx, "adjudicator target unusable", res.action.raw);
        target_ = draw_target(ctx, "guess.target.fallback");
      }
    }
    ctx.set_stage("think");
    ctx.record(EventKind::world, json{{"event", "target"}, {"target", target_}}, "adjudicator");
    if (p_.hint_conversation) {
      ctx.set_stage("hint");
      const auto res = act_text(adjudicator_,
                                render_id(templates_, p_.variants, "guess.adjudicator.hint",
                                          {{"target number", std::to_string(target_)}}),
                                ParserSpec::free_text(), ctx);
      hint_ = res.action.conforming ? res.action.raw : "";
      while (!hint_.empty() && (hint_.back() == '\n' || hint_.back() == ' ')) hint_.pop_back();
    }
  }

  void step(RunContext& ctx) override {
    if (p_.planning_after >= 0 && !planned_ && static_cast<int>(history_.size()) >= p_.planning_after) {
      ctx.set_stage("plan");
      guesser_ = reflect(guesser_, plan_prompt(history_), ctx);
      planned_ = true;
    }

    ctx.set_stage("guess");
    const ParserSpec parser = p_.reasoning ? ParserSpec::two_line() : ParserSpec::integer();
    const ActResult res = act_text(guesser_, guess_prompt(history_, guesser_), parser, ctx);
    int g = 0;
    const auto v = res.action.number();
    if (res.action.conforming && v && std::floor(*v) == *v) {
      g = static_cast<int>(*v);
    } else {
      anomaly(ctx, "unparseable guess", res.action.raw);
      g = p_.range_begin + static_cast<int>(ctx.below(static_cast<std::uint64_t>(p_.range_end - p_.range_begin + 1),
                                                      "guess.fallback"));
    }
    if (g < p_.range_begin || g > p_.range_end) anomaly(ctx, "guess out of range", std::to_string(g));
    for (const auto& h : history_) {
      if (h.guess == g) {
        anomaly(ctx, "repeated guess", std::to_string(g));
        break;
      }
    }

    ctx.set_stage("judge");
    Feedback fb = adjudicate(target_, g);
    std::string said = feedback_text(fb);
    if (p_.llm_adjudicator) {
      const auto jr = act_text(adjudicator_,
                               render_id(templates_, p_.variants, "guess.adjudicator.judge",
                                         {{"target number", std::to_string(target_)}, {"guess", std::to_string(g)}}),
                               ParserSpec::free_text(), ctx);
      said = jr.action.raw;
      if (said.find("Congratulations!") != std::string::npos) fb = Feedback::correct;
      else if (said.find("higher") != std::string::npos) fb = Feedback::higher;
      else if (said.find("lower") != std::string::npos) fb = Feedback::lower;
      else anomaly(ctx, "adjudicator reply unclear", said);
      if (fb != adjudicate(target_, g)) anomaly(ctx, "adjudicator feedback inconsistent with target", said);
    }
    history_.push_back({g, fb});
    ctx.record(EventKind::world, json{{"event", "guess"}, {"guess", g}, {"feedback", to_string(fb)}, {"said", said}},
               "adjudicator");
    guesser_ = observe(guesser_, {ctx.round(), ObservationKind::own_action, std::to_string(g), {double(g)}});
    guesser_ = observe(guesser_, {ctx.round(), ObservationKind::feedback, said, {}});
    if (said.find("Congratulations!") != std::string::npos) endpoint_ = "Congratulations!";

    if (p_.explain) {
      ctx.set_stage("explain");
      explain(guesser_, res, explain_question(g), ctx);
    }
  }

  std::optional<std::string> endpoint() const override { return endpoint_; }

  json metrics() const override {
    std::vector<int> guesses;
    for (const auto& h : history_) guesses.push_back(h.guess);
    return {{"target", target_},
            {"guess_count", history_.size()},
            {"guesses", guesses},
            {"solved", endpoint_.has_value()},
            {"behavior_label", behavior_label(p_.range_begin, p_.range_end, history_)},
            {"anomalies", anomalies_},
            {"hint", hint_}};
  }

  json save_state() const override {
    json h = json::array();
    for (const auto& r : history_) h.push_back({{"guess", r.guess}, {"feedback", to_string(r.feedback)}});
    json j = {{"target", target_},  {"history", h},          {"hint", hint_},
              {"planned", planned_}, {"anomalies", anomalies_}, {"guesser", to_json_value(guesser_)}};
    j["endpoint"] = endpoint_ ? json(*endpoint_) : json(nullptr);
    return j;
  }

  void load_state(const json& s) override {
    target_ = s.at("target").get<int>();
    history_.clear();
    for (const auto& r : s.at("history")) {
      history_.push_back({r.at("guess").get<int>(), feedback_from_string(r.at("feedback").get<std::string>())});
    }
    hint_ = s.value("hint", "");
    planned_ = s.value("planned", false);
    anomalies_ = s.value("anomalies", 0);
    guesser_ = agent_from_json(s.at("guesser"));
    endpoint_.reset();
    if (s.contains("endpoint") && !s["endpoint"].is_null()) endpoint_ = s["endpoint"].get<std::string>();
  }

  ProbeReport probe(const json& agent_spec, const json& observations, RunContext& ctx) override {
    AgentState agent = guesser_;
    if (agent_spec.contains("persona")) agent.persona = agent_spec["persona"].get<std::string>();
    if (agent_spec.contains("plan")) agent.plan = agent_spec["plan"].get<std::string>();
    std::vector<GuessRecord> history;
    for (const auto& o : observations.value("history", json::array())) {
      if (o.is_array()) history.push_back({o.at(0).get<int>(), feedback_from_string(o.at(1).get<std::string>())});
      else history.push_back({o.at("guess").get<int>(), feedback_from_string(o.at("feedback").get<std::string>())});
    }
    ProbeReport report;
    ctx.set_stage("guess");
    const ParserSpec parser = p_.reasoning ? ParserSpec::two_line() : ParserSpec::integer();
    const ActResult res = act_text(agent, guess_prompt(history, agent), parser, ctx);
    ProbeEntry e{"guess", res.prompt, res.action.raw, to_json_value(res.action), {}};
    if (agent_spec.value("explain", false) && res.action.number()) {
      ctx.set_stage("explain");
      e.explanation = explain(agent, res, explain_question(static_cast<int>(*res.action.number())), ctx);
    }
    report.entries.push_back(std::move(e));
    if (auto n = res.action.number()) report.summary["guess"] = *n;
    return report;
  }

 private:
  Bindings range_bindings() const {
    return {{"range begin", std::to_string(p_.range_begin)}, {"range end", std::to_string(p_.range_end)}};
  }

  std::string t(const std::string& id, const Bindings& b = {}) const { return render_id(templates_, p_.variants, id, b); }

  std::string guess_prompt(const std::vector<GuessRecord>& history, const AgentState& agent) const {
    const std::string format = t(p_.reasoning ? "guess.format.reasoning" : "guess.format.number");
    const std::string hint = hint_.empty() ? "" : t("guess.hint", {{"hint", escape_braces(hint_)}});
    const std::string knowledge = p_.bsearch_hint ? t("guess.knowledge") : "";
    const std::string oneshot = p_.one_shot ? t("guess.oneshot") : "";
    const std::string plan = agent.plan ? t("guess.plan.use", {{"strategy", *agent.plan}}) : "";
    if (history.empty()) {
      return join_sentences({t("guess.intro.first"), t("guess.rules", range_bindings()), t("guess.feedback_rule"),
                             hint, plan, agent.persona, t("guess.first_call"), format, knowledge, oneshot});
    }
    return join_sentences({t("guess.intro.next"), t("guess.rules", range_bindings()), hint,
                           t("guess.previous", {{"previous guess", std::to_string(history.back().guess)},
                                                {"guess history", format_history(history)}}),
                           plan, agent.persona, format, knowledge, oneshot});
  }

  std::string plan_prompt(const std::vector<GuessRecord>& history) const {
    const std::string prev = history.empty() ? "none" : std::to_string(history.back().guess);
    return join_sentences({t("guess.intro.next"), t("guess.rules", range_bindings()),
                           t("guess.previous", {{"previous guess", prev}, {"guess history", format_history(history)}}),
                           t("guess.plan.ask")});
  }

  std::string explain_question(int g) const {
    return join_sentences({t("guess.intro.next"), t("guess.rules", range_bindings()),
                           t("guess.history_only", {{"guess history", format_history(history_)}}),
                           t("guess.explain", {{"previous guess", std::to_string(g)}})});
  }

  int draw_target(RunContext& ctx, std::string_view purpose) {
    if (even_only_) {
      const int lo = (p_.range_begin % 2 == 0) ? p_.range_begin : p_.range_begin + 1;
      const int hi = (p_.range_end % 2 == 0) ? p_.range_end : p_.range_end - 1;
      if (lo > hi) throw ConfigError("range holds no even integer");
      return lo + 2 * static_cast<int>(ctx.below(static_cast<std::uint64_t>((hi - lo) / 2 + 1), purpose));
    }
    return p_.range_begin +
           static_cast<int>(ctx.below(static_cast<std::uint64_t>(p_.range_end - p_.range_begin + 1), purpose));
  }

  void anomaly(RunContext& ctx, const std::string& what, const std::string& detail) {
    ++anomalies_;
    ctx.record(EventKind::world, json{{"event", "anomaly"}, {"what", what}, {"detail", detail}});
  }

  GuessParams p_;
  const TemplateRegistry& templates_;
  AgentState guesser_;
  AgentState adjudicator_;
  bool even_only_ = false;
  int target_ = 0;
  std::vector<GuessRecord> history_;
  std::string hint_;
  bool planned_ = false;
  int anomalies_ = 0;
  std::optional<std::string> endpoint_;
};

}  // namespace

std::unique_ptr<Scenario> make_scenario(const json& params, const TemplateRegistry& templates) {
  return std::make_unique<GuessScenario>(GuessParams::from_json(params), templates);
}

}  // namespace sabm::guess
