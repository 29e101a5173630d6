#include "sabm/agent.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>

#include "sabm/error.hpp"
#include "sabm/runtime.hpp"

namespace sabm {

using nlohmann::json;

std::string_view to_string(ObservationKind kind) {
  switch (kind) {
    case ObservationKind::own_action: return "own_action";
    case ObservationKind::feedback: return "feedback";
    case ObservationKind::heard_message: return "heard_message";
    case ObservationKind::world_info: return "world_info";
  }
  return "world_info";
}

ObservationKind observation_kind_from_string(std::string_view text) {
  for (auto k : {ObservationKind::own_action, ObservationKind::feedback, ObservationKind::heard_message,
                 ObservationKind::world_info}) {
    if (to_string(k) == text) return k;
  }
  throw SerializationError("unknown observation kind '" + std::string(text) + "'");
}

json to_json_value(const AgentState& a) {
  json history = json::array();
  for (const auto& o : a.history) {
    history.push_back({{"round", o.round}, {"kind", to_string(o.kind)}, {"text", o.text}, {"numbers", o.numbers}});
  }
  json j = {{"agent_id", a.agent_id}, {"persona", a.persona}, {"settings", a.settings},
            {"capacity", a.capacity}, {"history", history},   {"attrs", a.attrs}};
  j["plan"] = a.plan ? json(*a.plan) : json(nullptr);
  return j;
}

AgentState agent_from_json(const json& j) {
  AgentState a;
  a.agent_id = j.at("agent_id").get<std::string>();
  a.persona = j.value("persona", "");
  a.settings = j.at("settings").get<LlmSettings>();
  a.capacity = j.value("capacity", std::size_t{20});
  for (const auto& o : j.at("history")) {
    a.history.push_back({o.at("round").get<int>(), observation_kind_from_string(o.at("kind").get<std::string>()),
                         o.value("text", ""), o.value("numbers", std::vector<double>{})});
  }
  if (j.contains("plan") && !j["plan"].is_null()) a.plan = j["plan"].get<std::string>();
  a.attrs = j.value("attrs", json::object());
  return a;
}

AgentState observe(AgentState agent, Observation obs) {
  if (!agent.history.empty() && obs.round < agent.history.back().round) {
    throw DomainError("observation for round " + std::to_string(obs.round) + " after round " +
                      std::to_string(agent.history.back().round));
  }
  agent.history.push_back(std::move(obs));
  while (agent.history.size() > agent.capacity) agent.history.pop_front();
  return agent;
}

AgentState personalize(AgentState agent, std::string persona) {
  agent.persona = std::move(persona);
  return agent;
}

// ---------------------------------------------------------------------------
// Parsing

ParserSpec ParserSpec::integer() {
  ParserSpec s;
  s.kind = Kind::integer;
  return s;
}

ParserSpec ParserSpec::decimal(int decimals) {
  ParserSpec s;
  s.kind = Kind::decimal;
  s.decimals = decimals;
  return s;
}

ParserSpec ParserSpec::choice(std::vector<std::string> allowed) {
  if (allowed.empty()) throw ConfigError("choice parser needs at least one option");
  ParserSpec s;
  s.kind = Kind::choice;
  s.choices = std::move(allowed);
  return s;
}

ParserSpec ParserSpec::two_line(std::vector<std::string> allowed) {
  ParserSpec s;
  s.kind = Kind::two_line;
  s.choices = std::move(allowed);
  return s;
}

ParserSpec ParserSpec::free_text() { return ParserSpec{}; }

std::string ParserSpec::format_reminder() const {
  if (!reminder.empty()) return reminder;
  auto options = [&] {
    std::string out;
    for (std::size_t i = 0; i < choices.size(); ++i) out += (i ? ", " : "") + choices[i];
    return out;
  };
  switch (kind) {
    case Kind::integer: return "Please only reply with an integer number and nothing else.";
    case Kind::decimal: return "Please only reply with a number and nothing else.";
    case Kind::choice: return "Please only reply with exactly one of: " + options() + ".";
    case Kind::two_line:
      return choices.empty() ? "Please reply in two lines: your reason on the first line and only a number on the "
                               "second line."
                             : "Please reply in two lines: your reason on the first line and exactly one of " +
                                   options() + " on the second line.";
    case Kind::free_text: return "Please reply with a short text.";
  }
  return {};
}

std::optional<double> ParsedAction::number() const {
  if (auto* d = std::get_if<double>(&value)) return *d;
  if (auto* t = std::get_if<TwoLine>(&value)) return t->number;
  return std::nullopt;
}

std::optional<std::string> ParsedAction::choice() const {
  if (auto* c = std::get_if<Choice>(&value)) return c->token;
  if (auto* t = std::get_if<TwoLine>(&value); t && !t->number) return t->decision;
  return std::nullopt;
}

json to_json_value(const ParsedAction& a) {
  json value = nullptr;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) value = {{"number", v}};
        else if constexpr (std::is_same_v<T, Choice>) value = {{"choice", v.token}};
        else if constexpr (std::is_same_v<T, TwoLine>) {
          value = {{"reason", v.reason}, {"decision", v.decision}};
          if (v.number) value["number"] = *v.number;
        } else if constexpr (std::is_same_v<T, FreeText>) value = {{"text", v.text}};
      },
      a.value);
  return {{"raw", a.raw}, {"value", value}, {"conforming", a.conforming}, {"attempts", a.attempts}};
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<std::string> match_choice(std::string_view text, const std::vector<std::string>& allowed) {
  const std::string t = lower(text);
  std::set<std::string> words;
  std::size_t i = 0;
  while (i < t.size()) {
    if (!is_word_char(t[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < t.size() && is_word_char(t[j])) ++j;
    words.insert(t.substr(i, j - i));
    i = j;
  }
  std::optional<std::string> found;
  int hits = 0;
  for (const auto& option : allowed) {
    if (words.count(lower(option))) {
      ++hits;
      found = option;
    }
  }
  if (hits != 1) return std::nullopt;
  return found;
}

std::vector<std::string> nonempty_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(start, end - start));
    if (!line.empty()) out.push_back(std::move(line));
    start = end + 1;
  }
  return out;
}

}  // namespace

std::optional<double> first_number(std::string_view text) {
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) continue;
    std::size_t start = i;
    if (start > 0 && text[start - 1] == '-' && (start < 2 || !is_word_char(text[start - 2]))) --start;
    const bool glued_left = start > 0 && (is_word_char(text[start - 1]) || text[start - 1] == '.');
    std::size_t j = i;
    while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    if (j + 1 < n && text[j] == '.' && std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
      ++j;
      while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    }
    const bool glued_right = j < n && is_word_char(text[j]);
    if (glued_left || glued_right) {
      i = j;
      continue;
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data() + start, text.data() + j, v);
    if (ec == std::errc()) return v;
    i = j;
  }
  return std::nullopt;
}

ParsedAction parse_action(std::string_view raw, const ParserSpec& spec) {
  ParsedAction out;
  out.raw = std::string(raw);
  switch (spec.kind) {
    case ParserSpec::Kind::integer: {
      auto v = first_number(raw);
      if (v && std::floor(*v) == *v) {
        out.value = *v;
        out.conforming = true;
      }
      break;
    }
    case ParserSpec::Kind::decimal: {
      if (auto v = first_number(raw)) {
        const double scale = std::pow(10.0, spec.decimals);
        out.value = std::round(*v * scale) / scale;
        out.conforming = true;
      }
      break;
    }
    case ParserSpec::Kind::choice: {
      if (auto c = match_choice(raw, spec.choices)) {
        out.value = Choice{*c};
        out.conforming = true;
      }
      break;
    }
    case ParserSpec::Kind::two_line: {
      const auto lines = nonempty_lines(raw);
      if (lines.size() < 2) break;
      TwoLine t;
      t.reason = lines.front();
      if (spec.choices.empty()) {
        auto v = first_number(lines.back());
        if (!v) break;
        t.number = v;
        t.decision = lines.back();
      } else {
        auto c = match_choice(lines.back(), spec.choices);
        if (!c) break;
        t.decision = *c;
      }
      out.value = std::move(t);
      out.conforming = true;
      break;
    }
    case ParserSpec::Kind::free_text: {
      std::string t = trim(raw);
      if (!t.empty()) {
        out.value = FreeText{std::move(t)};
        out.conforming = true;
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompting

std::string compose_prompt(const AgentState& agent, const PromptTemplate& tmpl, Bindings bindings) {
  std::string prefix;
  if (tmpl.has_placeholder("persona")) {
    bindings["persona"] = agent.persona;
  } else if (!agent.persona.empty()) {
    prefix += agent.persona + "\n\n";
  }
  if (tmpl.has_placeholder("plan")) {
    bindings["plan"] = agent.plan.value_or("");
  } else if (agent.plan) {
    prefix += "Your current strategy: " + *agent.plan + "\n\n";
  }
  return prefix + render(tmpl, bindings);
}

ChatRequest make_request(const AgentState& agent, const ScenarioTag& tag, const std::string& user_text) {
  ChatRequest req;
  req.settings = agent.settings;
  req.messages.push_back({Role::system, make_system_message(tag, agent.agent_id)});
  req.messages.push_back({Role::user, user_text});
  return req;
}

ActResult act_text(const AgentState& agent, const std::string& prompt, const ParserSpec& parser, RunContext& ctx) {
  ActResult result;
  result.agent = agent;
  result.prompt = prompt;
  ChatRequest req = make_request(agent, {ctx.scenario(), ctx.stage()}, prompt);
  ChatResponse resp = ctx.complete(req, agent.agent_id);
  result.prompt_seq = ctx.last_prompt_seq();
  ParsedAction parsed = parse_action(resp.content, parser);
  if (!parsed.conforming) {
    req.messages.push_back({Role::assistant, resp.content});
    req.messages.push_back({Role::user, parser.format_reminder()});
    resp = ctx.complete(req, agent.agent_id);
    parsed = parse_action(resp.content, parser);
    parsed.attempts = 2;
  }
  ctx.record(EventKind::parsed, to_json_value(parsed), agent.agent_id);
  result.action = std::move(parsed);
  return result;
}

ActResult act(const AgentState& agent, const PromptTemplate& tmpl, const Bindings& bindings,
              const ParserSpec& parser, RunContext& ctx) {
  return act_text(agent, compose_prompt(agent, tmpl, bindings), parser, ctx);
}

AgentState reflect(const AgentState& agent, const std::string& evidence_prompt, RunContext& ctx) {
  std::string prompt = agent.persona.empty() ? evidence_prompt : agent.persona + "\n\n" + evidence_prompt;
  const ChatResponse resp = ctx.complete(make_request(agent, {ctx.scenario(), ctx.stage()}, prompt), agent.agent_id);
  AgentState out = agent;
  std::string plan = trim(resp.content);
  if (!plan.empty()) out.plan = std::move(plan);
  ctx.record(EventKind::parsed, json{{"plan", out.plan ? json(*out.plan) : json(nullptr)}}, agent.agent_id);
  return out;
}

std::string explain(const AgentState& agent, const ActResult& decision, const std::string& question,
                    RunContext& ctx) {
  ChatRequest req = make_request(agent, {ctx.scenario(), "explain"}, decision.prompt);
  req.messages.push_back({Role::assistant, decision.action.raw});
  req.messages.push_back({Role::user, question});
  const ChatResponse resp = ctx.complete(req, agent.agent_id);
  const std::string text = trim(resp.content);
  ctx.record(EventKind::world, json{{"event", "explanation"}, {"decision_seq", decision.prompt_seq}, {"text", text}},
             agent.agent_id);
  return text;
}

}  // namespace sabm
