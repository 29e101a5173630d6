#pragma once

#include <array>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sabm/promptkit.hpp"
#include "sabm/provider.hpp"
#include "sabm/runtime.hpp"

namespace sabm::plea {

// ---------------------------------------------------------------------------
// Personas

struct Dimension {
  std::string name;
  std::vector<std::pair<std::string, double>> categories;  // weights sum to 1
};

struct DemographicsTable {
  std::vector<Dimension> dimensions;

  void validate() const;  // throws MalformedTable
  /// SHA-256 of the canonical JSON form, reported with every result.
  std::string checksum() const;
  nlohmann::json to_json() const;
  static DemographicsTable from_json(const nlohmann::json& j);
  /// Built-in default; identical to data/demographics.json.
  static DemographicsTable defaults();
};

struct PleaPersona {
  std::vector<std::pair<std::string, std::string>> attributes;  // dimension -> category, table order
  bool adjusted = false;  // risk-taking & social support adjustment
  double temperature = 1.0;

  /// "[female, Asian, bachelor's degree, employed, suburban]"
  std::string describe() const;
};

/// t = clamp(1 + (x - 1) / 3, 0, 2) for x ~ N(1, 1).
double temperature_from_normal(double x);
double sample_temperature(RunContext& ctx);

struct PersonaOptions {
  bool personas = true;
  bool temperature = true;
  bool adjustment = true;
  double fixed_temperature = 1.0;
};

/// Independent categorical draw per dimension (by cumulative weight),
/// temperature draw and a fair coin for the adjustment.
PleaPersona sample_persona(const DemographicsTable& table, RunContext& ctx, const PersonaOptions& options = {});

// ---------------------------------------------------------------------------
// TCU-style social functioning questionnaire

enum class Scale { hostility, risk_taking, social_support };
std::string_view to_string(Scale scale);

enum class Likert { disagree_strongly = 1, disagree, uncertain, agree, agree_strongly };
std::string_view to_string(Likert answer);
/// Matches the longest option phrase in the text ("agree strongly" before "agree").
std::optional<Likert> likert_from_text(std::string_view text);

struct TcuItem {
  std::string text;
  Scale scale = Scale::hostility;
};

struct KeyEntry {
  Scale scale = Scale::hostility;
  bool reversed = false;
};

/// 36 statements, 12 per scale, interleaved.
const std::vector<TcuItem>& tcu_items();
/// Every item positively keyed on its scale.
std::vector<KeyEntry> default_key();
std::vector<KeyEntry> key_from_json(const nlohmann::json& j);

struct TcuAnswerSheet {
  std::vector<Likert> answers;       // 36 after normalization
  std::set<std::size_t> declined;    // 0-based items recorded as uncertain
};

/// Parses one batch reply covering items [first, first + count). Numbered
/// lines ("19. agree") are matched by number, otherwise lines are taken in
/// order. Missing or unreadable items become uncertain and are declined.
void parse_tcu_batch(const std::string& reply, std::size_t first, std::size_t count, TcuAnswerSheet& sheet);

struct TcuScores {
  double hostility = 0.0;
  double risk_taking = 0.0;
  double social_support = 0.0;
};

/// Likert 1-5, reversed items 6 - x, scale score = mean item score * 10.
/// Throws KeyMismatch when the key does not cover the sheet.
TcuScores score_tcu(const TcuAnswerSheet& sheet, const std::vector<KeyEntry>& key);

// ---------------------------------------------------------------------------
// Plea cases

enum class SelfPerception { guilty, innocent, uncertain };
std::string_view to_string(SelfPerception s);
std::optional<SelfPerception> self_perception_from_string(std::string_view text);

enum class Comparative { none, better, similar, worse };
std::string_view to_string(Comparative c);

struct PleaCase {
  SelfPerception self = SelfPerception::guilty;
  int period_months = 30;
  int probability_percent = 50;
  Comparative comparative = Comparative::none;

  /// Column label in the WTAP table, e.g. "30@50%" or "better".
  std::string label() const;
};

/// Typical sentence quoted for a comparative condition: 45, 30 or 15 months.
int typical_sentence(Comparative c);

/// Concatenated few-shot examples, e.g. {"ex1", "ex3"}; empty for none.
std::string few_shot_block(const std::vector<std::string>& selected);

/// Scripted expected-value defendant: accepts iff
/// period <= probability * 60 + slack, with slack +6 months for guilty,
/// -6 for innocent, 0 for uncertain, shifted by +3 (better than typical) or
/// -3 (worse than typical). Answers the questionnaire with "uncertain".
class PleaOracle final : public ScenarioOracle {
 public:
  std::string respond(const ChatRequest& request) const override;
  static bool accepts(SelfPerception self, int period, int probability_percent, Comparative comparative);
};

void register_templates(TemplateRegistry& registry);
std::unique_ptr<Scenario> make_scenario(const nlohmann::json& params, const TemplateRegistry& templates);

}  // namespace sabm::plea
