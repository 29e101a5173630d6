#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sabm/agent.hpp"
#include "sabm/promptkit.hpp"
#include "sabm/provider.hpp"
#include "sabm/runtime.hpp"

namespace sabm::guess {

enum class Feedback { higher, lower, correct };

Feedback adjudicate(int target, int guess);
/// What the rule-based adjudicator says, e.g. "The guess is higher than the answer."
std::string feedback_text(Feedback feedback);
std::string_view to_string(Feedback feedback);

struct GuessRecord {
  int guess = 0;
  Feedback feedback = Feedback::higher;
};

/// "50 (higher than the answer), 25 (lower than the answer)"
std::string format_history(const std::vector<GuessRecord>& history);

struct Interval {
  int lo = 0;
  int hi = 0;
};

/// Range still consistent with the feedback so far.
Interval feasible_interval(int lo, int hi, const std::vector<GuessRecord>& history);

int floor_midpoint(Interval interval);

/// binary_search when every guess was inside the interval still feasible at
/// the time it was made, otherwise other.
std::string behavior_label(int lo, int hi, const std::vector<GuessRecord>& history);

struct GuessParams {
  int range_begin = 1;
  int range_end = 100;
  std::optional<int> target;  // nullopt: asked from the adjudicator
  bool random_target = false;  // draw from the run RNG
  bool bsearch_hint = false;
  bool one_shot = false;
  bool reasoning = false;
  int planning_after = -1;  // reflect once this many guesses have been made; -1 disables
  std::string persona = "none";
  bool hint_conversation = false;
  bool explain = false;
  bool llm_adjudicator = false;
  std::vector<VariantSelection> variants;
  LlmSettings settings;

  static GuessParams from_json(const nlohmann::json& params);
};

/// Scripted guesser/adjudicator. The guesser plays floor-midpoint binary
/// search over the interval implied by the history in the prompt. When the
/// prompt forbids binary search it picks a pseudo-random point of the
/// interval (seeded by the prompt text); when it asks for even integers it
/// plays the nearest even value to the midpoint.
class GuessOracle final : public ScenarioOracle {
 public:
  std::string respond(const ChatRequest& request) const override;
};

void register_templates(TemplateRegistry& registry);
std::unique_ptr<Scenario> make_scenario(const nlohmann::json& params, const TemplateRegistry& templates);

}  // namespace sabm::guess
