#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sabm/promptkit.hpp"
#include "sabm/provider.hpp"

namespace sabm {

class RunContext;

enum class ObservationKind { own_action, feedback, heard_message, world_info };

std::string_view to_string(ObservationKind kind);
ObservationKind observation_kind_from_string(std::string_view text);

struct Observation {
  int round = 0;
  ObservationKind kind = ObservationKind::world_info;
  std::string text;
  std::vector<double> numbers;

  bool operator==(const Observation&) const = default;
};

struct AgentState {
  std::string agent_id;
  std::string persona;
  LlmSettings settings;
  std::size_t capacity = 20;
  std::deque<Observation> history;
  std::optional<std::string> plan;
  nlohmann::json attrs = nlohmann::json::object();

  bool operator==(const AgentState&) const = default;
};

nlohmann::json to_json_value(const AgentState& agent);
AgentState agent_from_json(const nlohmann::json& j);

/// Appends `obs`, evicting the oldest entry beyond capacity. Throws
/// DomainError if `obs` is older than the newest stored observation.
AgentState observe(AgentState agent, Observation obs);

AgentState personalize(AgentState agent, std::string persona);

// ---------------------------------------------------------------------------
// Parsing

struct ParserSpec {
  enum class Kind { integer, decimal, choice, two_line, free_text };
  Kind kind = Kind::free_text;
  std::vector<std::string> choices;  // choice, and the decision line of two_line when non-empty
  int decimals = 2;
  std::string reminder;  // empty: a default per kind

  static ParserSpec integer();
  static ParserSpec decimal(int decimals = 2);
  static ParserSpec choice(std::vector<std::string> allowed);
  /// First line = reason, last line = decision (a choice, or a number when
  /// `allowed` is empty).
  static ParserSpec two_line(std::vector<std::string> allowed = {});
  static ParserSpec free_text();

  std::string format_reminder() const;
};

struct Choice {
  std::string token;
  bool operator==(const Choice&) const = default;
};

struct TwoLine {
  std::string reason;
  std::string decision;          // the matched choice token or the number text
  std::optional<double> number;  // set for numeric decisions
  bool operator==(const TwoLine&) const = default;
};

struct FreeText {
  std::string text;
  bool operator==(const FreeText&) const = default;
};

struct ParsedAction {
  std::string raw;
  std::variant<std::monostate, double, Choice, TwoLine, FreeText> value;
  bool conforming = false;
  int attempts = 1;

  std::optional<double> number() const;
  std::optional<std::string> choice() const;  // also the decision of a two-line answer
  const TwoLine* two_line() const { return std::get_if<TwoLine>(&value); }
};

nlohmann::json to_json_value(const ParsedAction& action);

/// First standalone number in `text` (not glued to letters or digits).
std::optional<double> first_number(std::string_view text);

/// Pure parse of one response, no retry.
ParsedAction parse_action(std::string_view raw, const ParserSpec& spec);

// ---------------------------------------------------------------------------
// Prompting

/// Persona and plan are bound to {persona} / {plan} when the template has
/// them; otherwise the persona is prefixed, then the plan, then the body.
std::string compose_prompt(const AgentState& agent, const PromptTemplate& tmpl, Bindings bindings);

ChatRequest make_request(const AgentState& agent, const ScenarioTag& tag, const std::string& user_text);

struct ActResult {
  ParsedAction action;
  AgentState agent;
  std::string prompt;
  std::uint64_t prompt_seq = 0;
};

/// Renders, calls the backend, parses; one retry with a format reminder.
/// Stage tag comes from ctx.stage().
ActResult act(const AgentState& agent, const PromptTemplate& tmpl, const Bindings& bindings,
              const ParserSpec& parser, RunContext& ctx);

/// Same as act but with an already-rendered prompt.
ActResult act_text(const AgentState& agent, const std::string& prompt, const ParserSpec& parser, RunContext& ctx);

/// Stores the reply as the new plan; an empty reply keeps the old one.
AgentState reflect(const AgentState& agent, const std::string& evidence_prompt, RunContext& ctx);

/// Asks why a journaled decision was made. Journals the explanation with
/// the decision's prompt sequence number and leaves the agent untouched.
std::string explain(const AgentState& agent, const ActResult& decision, const std::string& question,
                    RunContext& ctx);

}  // namespace sabm
