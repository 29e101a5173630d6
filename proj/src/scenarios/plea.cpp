#include "sabm/scenarios/plea.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "sabm/agent.hpp"
#include "sabm/analysis.hpp"
#include "sabm/error.hpp"
#include "sabm/export.hpp"
#include "sabm/scenarios/common.hpp"

namespace sabm::plea {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Demographics

void DemographicsTable::validate() const {
  if (dimensions.empty()) throw MalformedTable("demographics table has no dimensions");
  for (const auto& d : dimensions) {
    if (d.name.empty()) throw MalformedTable("dimension without a name");
    if (d.categories.empty()) throw MalformedTable("dimension '" + d.name + "' has no categories");
    double sum = 0.0;
    for (const auto& [label, w] : d.categories) {
      if (label.empty()) throw MalformedTable("empty category in '" + d.name + "'");
      if (!(w >= 0.0)) throw MalformedTable("negative weight in '" + d.name + "'");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw MalformedTable("weights of '" + d.name + "' sum to " + std::to_string(sum) + ", expected 1");
    }
  }
}

json DemographicsTable::to_json() const {
  json dims = json::array();
  for (const auto& d : dimensions) {
    json cats = json::array();
    for (const auto& [label, w] : d.categories) cats.push_back(json::array({label, w}));
    dims.push_back({{"name", d.name}, {"categories", cats}});
  }
  return {{"dimensions", dims}};
}

std::string DemographicsTable::checksum() const { return sha256_hex(to_json().dump()); }

DemographicsTable DemographicsTable::from_json(const json& j) {
  DemographicsTable t;
  try {
    for (const auto& d : j.at("dimensions")) {
      Dimension dim;
      dim.name = d.at("name").get<std::string>();
      for (const auto& c : d.at("categories")) {
        dim.categories.emplace_back(c.at(0).get<std::string>(), c.at(1).get<double>());
      }
      t.dimensions.push_back(std::move(dim));
    }
  } catch (const json::exception& e) {
    throw MalformedTable(std::string("demographics table: ") + e.what());
  }
  t.validate();
  return t;
}

DemographicsTable DemographicsTable::defaults() {
  // Rounded US population shares; a calibration knob, not a claim of precision.
  DemographicsTable t;
  t.dimensions = {
      {"gender", {{"female", 0.51}, {"male", 0.49}}},
      {"ethnicity",
       {{"White", 0.59}, {"Hispanic", 0.19}, {"Black", 0.12}, {"Asian", 0.06}, {"Multiracial", 0.03},
        {"Native American", 0.01}}},
      {"education",
       {{"less than high school", 0.10}, {"high school diploma", 0.28}, {"some college", 0.15},
        {"associate degree", 0.10}, {"bachelor's degree", 0.23}, {"master's degree", 0.10},
        {"doctoral or professional degree", 0.04}}},
      {"occupation",
       {{"employed", 0.60}, {"unemployed", 0.04}, {"retired", 0.18}, {"student", 0.08}, {"homemaker", 0.10}}},
      {"location", {{"urban", 0.31}, {"suburban", 0.55}, {"rural", 0.14}}},
  };
  return t;
}

std::string PleaPersona::describe() const {
  std::string s = "[";
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (i) s += ", ";
    s += attributes[i].second;
  }
  return s + "]";
}

double temperature_from_normal(double x) { return std::clamp(1.0 + (x - 1.0) / 3.0, 0.0, 2.0); }

double sample_temperature(RunContext& ctx) { return temperature_from_normal(ctx.normal(1.0, 1.0, "plea.temperature")); }

PleaPersona sample_persona(const DemographicsTable& table, RunContext& ctx, const PersonaOptions& options) {
  PleaPersona p;
  if (options.personas) {
    for (const auto& d : table.dimensions) {
      const double u = ctx.uniform("plea.persona." + d.name);
      double acc = 0.0;
      std::string pick = d.categories.back().first;
      for (const auto& [label, w] : d.categories) {
        acc += w;
        if (u < acc) {
          pick = label;
          break;
        }
      }
      p.attributes.emplace_back(d.name, pick);
    }
  }
  p.temperature = options.temperature ? sample_temperature(ctx) : options.fixed_temperature;
  p.adjusted = options.adjustment && ctx.bernoulli(0.5, "plea.adjustment");
  return p;
}

// ---------------------------------------------------------------------------
// Questionnaire

std::string_view to_string(Scale s) {
  switch (s) {
    case Scale::hostility: return "hostility";
    case Scale::risk_taking: return "risk_taking";
    case Scale::social_support: return "social_support";
  }
  return "hostility";
}

std::string_view to_string(Likert a) {
  switch (a) {
    case Likert::disagree_strongly: return "disagree strongly";
    case Likert::disagree: return "disagree";
    case Likert::uncertain: return "uncertain";
    case Likert::agree: return "agree";
    case Likert::agree_strongly: return "agree strongly";
  }
  return "uncertain";
}

std::optional<Likert> likert_from_text(std::string_view text) {
  std::string s;
  for (char c : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  // "strongly disagree" is a common inversion of the option wording.
  for (auto [phrase, value] : std::initializer_list<std::pair<const char*, Likert>>{
           {"disagree strongly", Likert::disagree_strongly},
           {"strongly disagree", Likert::disagree_strongly},
           {"agree strongly", Likert::agree_strongly},
           {"strongly agree", Likert::agree_strongly},
           {"disagree", Likert::disagree},
           {"uncertain", Likert::uncertain},
           {"agree", Likert::agree}}) {
    if (s.find(phrase) != std::string::npos) return value;
  }
  return std::nullopt;
}

const std::vector<TcuItem>& tcu_items() {
  static const std::vector<TcuItem> items = [] {
    const std::array<const char*, 12> hostility{
        "You get annoyed quickly when people disagree with you.",
        "You often feel like picking a fight.",
        "People who cross you usually regret it.",
        "You hold grudges for a long time.",
        "You lose your temper over small things.",
        "You enjoy making others uneasy.",
        "You think most people are out to get you.",
        "You shout at people when you are upset.",
        "You find it hard to forgive an insult.",
        "You get into arguments more than most people do.",
        "You feel angry when you do not get your way.",
        "You like to intimidate people who bother you."};
    const std::array<const char*, 12> risk{
        "You like doing things that are a little dangerous.",
        "You often act on impulse without thinking it through.",
        "You enjoy the thrill of taking chances.",
        "You would try something new even if it might hurt you.",
        "You prefer excitement over safety.",
        "You make quick decisions without weighing the risks.",
        "You like driving fast.",
        "You would bet money on an uncertain outcome.",
        "You get bored with a safe and steady routine.",
        "You take risks that other people would avoid.",
        "You break rules just to see what happens.",
        "You seek out situations with an element of danger."};
    const std::array<const char*, 12> social{
        "You have people you can count on when things go wrong.",
        "Your family is there for you when you need help.",
        "You have a close friend you can talk to about anything.",
        "People in your life care about what happens to you.",
        "You could find someone to lend you money in an emergency.",
        "You feel accepted by the people around you.",
        "Someone would take care of you if you were sick.",
        "You have friends who encourage you to do well.",
        "You belong to a group that supports you.",
        "You can ask for advice when you face a hard choice.",
        "Others would stand by you if you were in trouble.",
        "You spend time with people who make you feel valued."};
    std::vector<TcuItem> out;
    for (std::size_t i = 0; i < 12; ++i) {
      out.push_back({hostility[i], Scale::hostility});
      out.push_back({risk[i], Scale::risk_taking});
      out.push_back({social[i], Scale::social_support});
    }
    return out;
  }();
  return items;
}

std::vector<KeyEntry> default_key() {
  std::vector<KeyEntry> key;
  for (const auto& item : tcu_items()) key.push_back({item.scale, false});
  return key;
}

std::vector<KeyEntry> key_from_json(const json& j) {
  std::vector<KeyEntry> key;
  for (const auto& e : j.at("items")) {
    KeyEntry k;
    const std::string s = e.at("scale").get<std::string>();
    if (s == "hostility") k.scale = Scale::hostility;
    else if (s == "risk_taking") k.scale = Scale::risk_taking;
    else if (s == "social_support") k.scale = Scale::social_support;
    else throw KeyMismatch("unknown scale in key: " + s);
    k.reversed = e.value("reversed", false);
    key.push_back(k);
  }
  return key;
}

void parse_tcu_batch(const std::string& reply, std::size_t first, std::size_t count, TcuAnswerSheet& sheet) {
  if (sheet.answers.size() < first + count) sheet.answers.resize(first + count, Likert::uncertain);
  std::vector<std::string> lines;
  std::istringstream in(reply);
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  static const std::regex kNumbered(R"(^\s*(?:Q(?:uestion)?\s*)?(\d+)\s*[.):\-]\s*(.*)$)", std::regex::icase);
  std::map<std::size_t, Likert> by_number;
  bool numbered = false;
  for (const auto& line : lines) {
    std::smatch m;
    if (!std::regex_match(line, m, kNumbered)) continue;
    numbered = true;
    const std::size_t n = std::stoul(m[1].str());
    if (auto a = likert_from_text(m[2].str())) by_number.emplace(n, *a);
  }
  for (std::size_t k = 0; k < count; ++k) {
    std::optional<Likert> a;
    if (numbered) {
      // Numbers may be global (19..36) or restart at 1 inside the batch.
      if (auto it = by_number.find(first + k + 1); it != by_number.end()) {
        a = it->second;
      } else if (auto it2 = by_number.find(k + 1); it2 != by_number.end() && first > 0 &&
                                                   !by_number.count(first + 1)) {
        a = it2->second;
      }
    } else if (k < lines.size()) {
      a = likert_from_text(lines[k]);
    }
    if (a) {
      sheet.answers[first + k] = *a;
      sheet.declined.erase(first + k);
    } else {
      sheet.answers[first + k] = Likert::uncertain;
      sheet.declined.insert(first + k);
    }
  }
}

TcuScores score_tcu(const TcuAnswerSheet& sheet, const std::vector<KeyEntry>& key) {
  if (key.size() != sheet.answers.size()) {
    throw KeyMismatch("key covers " + std::to_string(key.size()) + " items, sheet has " +
                      std::to_string(sheet.answers.size()));
  }
  std::array<double, 3> sum{0, 0, 0};
  std::array<int, 3> n{0, 0, 0};
  for (std::size_t i = 0; i < key.size(); ++i) {
    const double x = static_cast<int>(sheet.answers[i]);
    const int s = static_cast<int>(key[i].scale);
    sum[s] += key[i].reversed ? 6.0 - x : x;
    ++n[s];
  }
  for (int s = 0; s < 3; ++s) {
    if (n[s] == 0) throw KeyMismatch("key has no item for scale " + std::string(to_string(static_cast<Scale>(s))));
  }
  return {sum[0] / n[0] * 10.0, sum[1] / n[1] * 10.0, sum[2] / n[2] * 10.0};
}

// ---------------------------------------------------------------------------
// Cases

std::string_view to_string(SelfPerception s) {
  switch (s) {
    case SelfPerception::guilty: return "guilty";
    case SelfPerception::innocent: return "innocent";
    case SelfPerception::uncertain: return "uncertain";
  }
  return "guilty";
}

std::optional<SelfPerception> self_perception_from_string(std::string_view t) {
  for (auto s : {SelfPerception::guilty, SelfPerception::innocent, SelfPerception::uncertain}) {
    if (to_string(s) == t) return s;
  }
  return std::nullopt;
}

std::string_view to_string(Comparative c) {
  switch (c) {
    case Comparative::none: return "none";
    case Comparative::better: return "better";
    case Comparative::similar: return "similar";
    case Comparative::worse: return "worse";
  }
  return "none";
}

std::string PleaCase::label() const {
  if (comparative != Comparative::none) return std::string(to_string(comparative));
  return std::to_string(period_months) + "@" + std::to_string(probability_percent) + "%";
}

int typical_sentence(Comparative c) {
  switch (c) {
    case Comparative::better: return 45;
    case Comparative::similar: return 30;
    case Comparative::worse: return 15;
    case Comparative::none: break;
  }
  throw DomainError("no typical sentence without a comparison");
}

namespace {

const char* self_phrase(SelfPerception s) {
  switch (s) {
    case SelfPerception::guilty: return "are aware that you did exceed";
    case SelfPerception::innocent: return "are aware that you did not exceed";
    case SelfPerception::uncertain: return "are uncertain whether you exceeded";
  }
  return "";
}

const char* compared_phrase(Comparative c) {
  switch (c) {
    case Comparative::better: return "shorter than";
    case Comparative::similar: return "similar to";
    case Comparative::worse: return "longer than";
    case Comparative::none: break;
  }
  return "";
}

struct FewShot {
  const char* id;
  const char* self;
  const char* probability;
  const char* period;
  const char* answer;
};

const std::array<FewShot, 3> kFewShots{{
    {"ex1", "don't remember whether you left", "80%", "9",
     "Answer 1: Despite the uncertainty, it is the prosecutor's liability to prove the guilt. I would take the 20% "
     "chance of acquittal in a trial.\nreject"},
    {"ex2", "don't remember whether you left", "90%", "3",
     "Answer 2: As a risk-taker and being uncertain of my guilt, I am willing to challenge 10% odds in hoping to be "
     "acquitted.\nreject"},
    {"ex3", "remember whether you left", "95%", "2",
     "Answer 3: (I did not leave the heater turned on) Despite my innocence, the 95% probability of conviction is too "
     "risky, and accepting the plea bargain results in a reduced sentence.\naccept\nOR\n"
     "Answer 3: (I did leave the heater turned on) Given that I am aware of my guilt and the plea bargain reduces my "
     "penalty, it is a safer option.\naccept"},
}};

}  // namespace

std::string few_shot_block(const std::vector<std::string>& selected) {
  if (selected.empty()) return {};
  for (const auto& s : selected) {
    if (std::none_of(kFewShots.begin(), kFewShots.end(), [&](const FewShot& f) { return s == f.id; })) {
      throw ConfigError("unknown few-shot example '" + s + "' (expected ex1, ex2 or ex3)");
    }
  }
  std::string out = "Some examples of plea bargain:";
  int eid = 0;
  for (const auto& f : kFewShots) {
    if (std::find(selected.begin(), selected.end(), f.id) == selected.end()) continue;
    ++eid;
    out += "\nQuestion " + std::to_string(eid) +
           ": While you were taking a class, a fire started in your apartment and caused the death of a neighbor. "
           "The police think you left the space heater on, which caused the fire. You " +
           f.self +
           " the space heater turned on when you left the apartment. You are now standing on trial. The current "
           "charges carry a 12-month jail sentence. Your conviction odds are " +
           f.probability +
           ". Before the trial, the prosecutor offers a non-negotiable plea bargain: You will be convicted based on "
           "your admission, and you will be sentenced only to " +
           f.period + " months in jail. Will you accept or reject the plea bargain?\n" + f.answer;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scripted defendant

bool PleaOracle::accepts(SelfPerception self, int period, int probability_percent, Comparative comparative) {
  int slack = 0;
  if (self == SelfPerception::guilty) slack = 6;
  if (self == SelfPerception::innocent) slack = -6;
  if (comparative == Comparative::better) slack += 3;
  if (comparative == Comparative::worse) slack -= 3;
  // period <= p/100 * 60 + slack, in integers: 100 * period <= 60 * p + 100 * slack
  return 100 * period <= 60 * probability_percent + 100 * slack;
}

std::string PleaOracle::respond(const ChatRequest& request) const {
  const auto tag = parse_scenario_tag(request);
  const std::string& text = last_user_text(request);
  if (tag && tag->stage == "tcu") {
    static const std::regex kItem(R"((?:^|\n)(\d+)\. )");
    std::string out;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), kItem); it != std::sregex_iterator(); ++it) {
      out += (*it)[1].str() + ". uncertain\n";
    }
    return out;
  }
  if (tag && tag->stage == "explain") return "The offer compared with the expected sentence at trial decided it.";

  static const std::regex kSelf(
      R"(In your heart, you (are aware that you did exceed|are aware that you did not exceed|are uncertain whether you exceeded))");
  static const std::regex kPeriod(R"(you will instead face a (\d+)-month suspension)");
  static const std::regex kProb(R"(The probability of conviction stands at (\d+)%)");
  static const std::regex kComp(R"(is (shorter than|similar to|longer than) the sentence typically offered)");
  std::smatch m;
  SelfPerception self = SelfPerception::uncertain;
  if (std::regex_search(text, m, kSelf)) {
    const std::string s = m[1].str();
    self = s == self_phrase(SelfPerception::guilty)     ? SelfPerception::guilty
           : s == self_phrase(SelfPerception::innocent) ? SelfPerception::innocent
                                                        : SelfPerception::uncertain;
  }
  if (!std::regex_search(text, m, kPeriod)) return "I cannot tell what is offered.";
  const int period = std::stoi(m[1].str());
  if (!std::regex_search(text, m, kProb)) return "I cannot tell the odds.";
  const int prob = std::stoi(m[1].str());
  Comparative comp = Comparative::none;
  if (std::regex_search(text, m, kComp)) {
    comp = m[1].str() == "shorter than" ? Comparative::better
           : m[1].str() == "similar to" ? Comparative::similar
                                        : Comparative::worse;
  }
  const bool ok = accepts(self, period, prob, comp);
  const int offer = 100 * period, trial = 60 * prob;
  const char* reason = offer == trial  ? "Expected trial loss equals offer."
                       : offer < trial ? "Offer is lighter than the expected trial loss."
                                       : "Expected trial loss is lighter than the offer.";
  return std::string(reason) + "\n" + (ok ? "accept" : "reject");
}

// ---------------------------------------------------------------------------
// Templates

void register_templates(TemplateRegistry& r) {
  r.add({"plea.instruction",
         "This is a plea bargaining assessment. Please give your decision towards the plea bargain (given below) in "
         "two lines. In the first line, please briefly provide the reasons for your decision (no longer than 30 "
         "words). In the second line, please answer either 'accept' or 'reject' the plea bargain offered by the "
         "prosecutor. Make sure you answer is in two lines.\n\n"
         "{few_shot}\n\n"
         "Now assume that you are a volunteer participating our experiment on plea bargain. Please answer the "
         "question below based on your persona: {persona}. {adjustment}\n"
         "{crime}\n\n"
         "{plea}"});
  r.add({"plea.instruction.nopersona",
         "This is a plea bargaining assessment. Please give your decision towards the plea bargain (given below) in "
         "two lines. In the first line, please briefly provide the reasons for your decision (no longer than 30 "
         "words). In the second line, please answer either 'accept' or 'reject' the plea bargain offered by the "
         "prosecutor. Make sure you answer is in two lines.\n\n"
         "{few_shot}\n\n"
         "Now assume that you are a volunteer participating our experiment on plea bargain. Please answer the "
         "question below. {adjustment}\n"
         "{crime}\n\n"
         "{plea}"});
  r.add({"plea.adjustment",
         "You should behave like a real person who is not that cautious (i.e., try to take more risk), and you should "
         "be more social-supportive."});
  r.add({"plea.crime",
         "You are currently facing criminal charges for striking a pedestrian after navigating a sharp turn. The "
         "outcome of your trial hinges on the prosecution's ability to demonstrate that you were exceeding the speed "
         "limit. If proven, you will be convicted, resulting in the suspension of your driver's license; if not, you "
         "will be acquitted. In your heart, you {self_perception} the speed limit."});
  r.add({"plea.bargain",
         "Just before the trial, the prosecutor presents you with a plea bargain. In exchange for pleading guilty to "
         "a lesser offense, the current charges that carry a 60-month suspension of your driver's license will be "
         "dropped, and you will instead face a {period}-month suspension. The offer is non-negotiable and available "
         "only once; if you decline the plea bargain, the trial will commence immediately. The probability of "
         "conviction stands at {probability}.\n"
         "{comparative}\n"
         "Will you accept or reject the plea bargain?"});
  r.add({"plea.comparative",
         "Will you accept or reject the plea bargain if the sentence offered by the prosecutor (30-month suspension) "
         "is {compared_to} the sentence typically offered by the prosecution in similar cases ({typical_sentence})?"});
  r.add({"plea.tcu",
         "Now assume that you are a volunteer taking a questionnaire. Please answer based on your persona: {persona}. "
         "{adjustment}\n"
         "For each statement below, tell me how much you agree with it using exactly one of: disagree strongly, "
         "disagree, uncertain, agree, agree strongly. Reply with one line per statement in the form "
         "'<number>. <answer>'.\n"
         "{statements}"});
}

// ---------------------------------------------------------------------------
// Scenario

namespace {

struct Family {
  std::string name;
  std::vector<PleaCase> cases;  // self perception filled in per group
};

std::vector<PleaCase> family_cases(const std::string& name) {
  if (name == "substantive") return {{SelfPerception::guilty, 30, 50, Comparative::none}};
  if (name == "comparative") {
    return {{SelfPerception::guilty, 30, 50, Comparative::better},
            {SelfPerception::guilty, 30, 50, Comparative::similar},
            {SelfPerception::guilty, 30, 50, Comparative::worse}};
  }
  if (name == "risk") {
    std::vector<PleaCase> out;
    for (auto [period, prob] : {std::pair{3, 5}, {18, 30}, {30, 50}, {42, 70}, {57, 95}}) {
      out.push_back({SelfPerception::guilty, period, prob, Comparative::none});
    }
    return out;
  }
  throw ConfigError("unknown plea family '" + name + "' (expected substantive, comparative or risk)");
}

struct PleaParams {
  std::string task = "battery";  // battery | tcu
  int n_agents = 200;
  std::vector<std::string> families{"substantive", "comparative", "risk"};
  std::vector<SelfPerception> groups{SelfPerception::guilty, SelfPerception::innocent, SelfPerception::uncertain};
  std::vector<std::string> few_shot;
  PersonaOptions persona;
  DemographicsTable demographics = DemographicsTable::defaults();
  std::vector<KeyEntry> key = default_key();
  LlmSettings settings;
  std::vector<VariantSelection> variants;

  static PleaParams from_json(const json& p) {
    PleaParams o;
    o.task = p.value("task", o.task);
    if (o.task != "battery" && o.task != "tcu") throw ConfigError("plea task must be battery or tcu");
    o.n_agents = p.value("n_agents", o.n_agents);
    if (o.n_agents < 1) throw ConfigError("n_agents must be >= 1");
    if (p.contains("families")) o.families = p["families"].get<std::vector<std::string>>();
    for (const auto& f : o.families) family_cases(f);
    if (p.contains("groups")) {
      o.groups.clear();
      for (const auto& g : p["groups"]) {
        auto s = self_perception_from_string(g.get<std::string>());
        if (!s) throw ConfigError("unknown group " + g.dump());
        o.groups.push_back(*s);
      }
    }
    if (p.contains("few_shot")) o.few_shot = p["few_shot"].get<std::vector<std::string>>();
    few_shot_block(o.few_shot);  // validates names
    o.persona.personas = p.value("personas", true);
    o.persona.temperature = p.value("temperature_adjustment", true);
    o.persona.adjustment = p.value("risk_adjustment", true);
    o.settings = settings_from_params(p, LlmSettings{"gpt-4-0314", 1.0, 64});
    o.persona.fixed_temperature = o.settings.temperature;
    if (p.contains("demographics")) o.demographics = DemographicsTable::from_json(p["demographics"]);
    if (p.contains("demographics_file")) o.demographics = DemographicsTable::from_json(read_json(p["demographics_file"]));
    if (p.contains("tcu_key_file")) o.key = key_from_json(read_json(p["tcu_key_file"]));
    if (o.key.size() != tcu_items().size()) throw KeyMismatch("TCU key must cover all 36 items");
    o.variants = selections_from_params(p);
    return o;
  }

  static json read_json(const json& path) {
    std::ifstream in(path.get<std::string>());
    if (!in) throw IoError("cannot read " + path.get<std::string>());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("bad JSON in " + path.get<std::string>() + ": " + e.what());
    }
  }
};

struct Decision {
  std::string family;
  std::string group;
  int agent = 0;
  std::string label;
  bool accept = false;
  bool conforming = false;
  double temperature = 1.0;
  std::string persona;
  bool adjusted = false;
};

struct TcuRow {
  int agent = 0;
  TcuScores scores;
  std::size_t declined = 0;
  double temperature = 1.0;
  bool adjusted = false;
  std::string persona;
};

class PleaScenario final : public Scenario {
 public:
  PleaScenario(PleaParams params, const TemplateRegistry& templates) : p_(std::move(params)), templates_(templates) {
    if (p_.task == "battery") {
      for (const auto& f : p_.families) {
        for (auto g : p_.groups) cells_.push_back({f, g});
      }
    }
  }

  std::string name() const override { return "plea"; }
  std::vector<std::string> stages() const override { return {"persona", "plea", "tcu"}; }
  int default_max_rounds() const override {
    return p_.task == "tcu" ? p_.n_agents : static_cast<int>(std::max<std::size_t>(1, cells_.size()));
  }

  void init(RunContext& ctx) override {
    ctx.record(EventKind::world, json{{"event", "setup"},
                                      {"task", p_.task},
                                      {"demographics_checksum", p_.demographics.checksum()},
                                      {"few_shot", p_.few_shot}});
  }

  void step(RunContext& ctx) override {
    const int r = ctx.round();
    if (p_.task == "tcu") {
      tcu_agent(r, ctx);
      done_ = r >= p_.n_agents;
      return;
    }
    if (r > static_cast<int>(cells_.size())) {
      done_ = true;
      return;
    }
    const auto& [family, group] = cells_[r - 1];
    auto cases = family_cases(family);
    for (auto& c : cases) c.self = group;
    for (int k = 0; k < p_.n_agents; ++k) {
      ctx.set_stage("persona");
      const PleaPersona persona = sample_persona(p_.demographics, ctx, p_.persona);
      AgentState agent;
      agent.agent_id = "defendant" + std::to_string(r) + "-" + std::to_string(k);
      agent.settings = p_.settings;
      agent.settings.temperature = persona.temperature;
      ctx.set_stage("plea");
      for (const auto& c : cases) {
        Decision d{family, std::string(to_string(group)), k, c.label(), false, false, persona.temperature,
                   persona.describe(), persona.adjusted};
        try {
          const ActResult res = act_text(agent, plea_prompt(persona, c), ParserSpec::two_line({"accept", "reject"}), ctx);
          d.conforming = res.action.conforming;
          // Non-conforming answers count as rejections.
          d.accept = res.action.conforming && res.action.choice() == std::optional<std::string>("accept");
        } catch (const TransportError& e) {
          ctx.record(EventKind::world, json{{"event", "excluded"}, {"case", c.label()}, {"error", e.what()}},
                     agent.agent_id);
          continue;
        }
        ctx.record(EventKind::world,
                   json{{"event", "decision"}, {"family", family}, {"group", d.group}, {"case", d.label},
                        {"accept", d.accept}, {"conforming", d.conforming}},
                   agent.agent_id);
        decisions_.push_back(std::move(d));
      }
    }
    done_ = r >= static_cast<int>(cells_.size());
  }

  std::optional<std::string> endpoint() const override {
    if (done_) return std::string(p_.task == "tcu" ? "questionnaire complete" : "battery complete");
    return std::nullopt;
  }

  json metrics() const override {
    json m = {{"task", p_.task}, {"demographics_checksum", p_.demographics.checksum()}, {"few_shot", p_.few_shot}};
    if (p_.task == "tcu") {
      json rows = json::array();
      std::array<std::vector<double>, 3> cols;
      std::size_t declined = 0;
      for (const auto& t : tcu_) {
        cols[0].push_back(t.scores.hostility);
        cols[1].push_back(t.scores.risk_taking);
        cols[2].push_back(t.scores.social_support);
        declined += t.declined;
      }
      json summary = json::object();
      for (int s = 0; s < 3; ++s) {
        if (cols[s].empty()) continue;
        summary[std::string(to_string(static_cast<Scale>(s)))] = {{"mean", mean(cols[s])},
                                                                   {"median", median(cols[s])}};
      }
      m["tcu"] = summary;
      m["agents"] = tcu_.size();
      m["declined_items"] = declined;
      return m;
    }
    const auto table = wtap_table();
    json wt = json::object();
    for (const auto& [key, cell] : table) {
      wt[key.first][key.second] = {{"accept", cell.first},
                                   {"n", cell.second},
                                   {"wtap", cell.second ? static_cast<double>(cell.first) / cell.second : 0.0}};
    }
    m["wtap"] = wt;
    json tests = json::array();
    std::map<std::string, std::vector<std::string>> labels_by_group;
    for (const auto& [key, cell] : table) labels_by_group[key.first].push_back(key.second);
    for (std::size_t a = 0; a < p_.groups.size(); ++a) {
      for (std::size_t b = a + 1; b < p_.groups.size(); ++b) {
        const std::string ga(to_string(p_.groups[a])), gb(to_string(p_.groups[b]));
        for (const auto& label : labels_by_group[ga]) {
          const auto ia = table.find({ga, label});
          const auto ib = table.find({gb, label});
          if (ib == table.end() || ia->second.second == 0 || ib->second.second == 0) continue;
          const auto t = two_proportion_test(ia->second.first, ia->second.second, ib->second.first, ib->second.second);
          tests.push_back({{"case", label}, {"a", ga}, {"b", gb}, {"p", t.p_two_sided}, {"exact", t.exact}});
        }
      }
    }
    m["tests"] = tests;
    m["decisions"] = decisions_.size();
    return m;
  }

  json save_state() const override {
    json ds = json::array();
    for (const auto& d : decisions_) {
      ds.push_back({d.family, d.group, d.agent, d.label, d.accept, d.conforming, d.temperature, d.persona, d.adjusted});
    }
    json ts = json::array();
    for (const auto& t : tcu_) {
      ts.push_back({t.agent, t.scores.hostility, t.scores.risk_taking, t.scores.social_support, t.declined,
                    t.temperature, t.adjusted, t.persona});
    }
    return {{"decisions", ds}, {"tcu", ts}, {"done", done_}};
  }

  void load_state(const json& s) override {
    decisions_.clear();
    for (const auto& d : s.at("decisions")) {
      decisions_.push_back({d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8]});
    }
    tcu_.clear();
    for (const auto& t : s.at("tcu")) {
      tcu_.push_back({t[0], {t[1], t[2], t[3]}, t[4], t[5], t[6], t[7]});
    }
    done_ = s.at("done");
  }

  ProbeReport probe(const json& agent_spec, const json& observations, RunContext& ctx) override {
    PleaPersona persona;
    if (agent_spec.contains("persona")) {
      for (const auto& [k, v] : agent_spec["persona"].items()) persona.attributes.emplace_back(k, v.get<std::string>());
    }
    persona.adjusted = agent_spec.value("adjusted", false);
    persona.temperature = agent_spec.value("temperature", p_.settings.temperature);
    PleaCase c;
    auto self = self_perception_from_string(observations.value("self_perception", std::string("guilty")));
    if (!self) throw ConfigError("self_perception must be guilty, innocent or uncertain");
    c.self = *self;
    c.period_months = observations.value("period", 30);
    c.probability_percent = observations.value("probability", 50);
    const std::string comp = observations.value("comparative", std::string("none"));
    for (auto x : {Comparative::none, Comparative::better, Comparative::similar, Comparative::worse}) {
      if (to_string(x) == comp) c.comparative = x;
    }
    AgentState agent;
    agent.agent_id = "defendant-probe";
    agent.settings = p_.settings;
    agent.settings.temperature = persona.temperature;
    ctx.set_stage("plea");
    const ActResult res = act_text(agent, plea_prompt(persona, c), ParserSpec::two_line({"accept", "reject"}), ctx);
    ProbeEntry e{"plea", res.prompt, res.action.raw, to_json_value(res.action), {}};
    if (agent_spec.value("explain", false)) {
      e.explanation = explain(agent, res, "Can you explain your decision in more detail?", ctx);
    }
    ProbeReport report;
    report.entries.push_back(std::move(e));
    report.summary = {{"decision", res.action.conforming ? json(res.action.choice().value_or("reject")) : json("reject")},
                      {"conforming", res.action.conforming}};
    return report;
  }

  std::vector<fs::path> export_results(const fs::path& dir, const std::string& run_id) const override {
    const fs::path out = dir / ("run-" + run_id);
    std::vector<fs::path> files;
    if (p_.task == "tcu") {
      std::vector<std::vector<std::string>> rows;
      for (const auto& t : tcu_) {
        rows.push_back({std::to_string(t.agent), csv_number(t.scores.hostility), csv_number(t.scores.risk_taking),
                        csv_number(t.scores.social_support), std::to_string(t.declined), csv_number(t.temperature),
                        t.adjusted ? "1" : "0", t.persona});
      }
      files.push_back(out / "tcu.csv");
      write_csv(files.back(),
                {"agent", "hostility", "risk_taking", "social_support", "declined", "temperature", "adjusted", "persona"},
                rows);
      return files;
    }
    // One row per self-perception group, one column per condition cell.
    const auto table = wtap_table();
    std::vector<std::string> header{"group"};
    for (const auto& f : p_.families) {
      for (const auto& c : family_cases(f)) header.push_back(f + ":" + c.label());
    }
    std::vector<std::vector<std::string>> rows;
    for (auto g : p_.groups) {
      std::vector<std::string> row{std::string(to_string(g))};
      for (const auto& f : p_.families) {
        for (const auto& c : family_cases(f)) {
          const auto it = table.find({std::string(to_string(g)), f + ":" + c.label()});
          row.push_back(it == table.end() || it->second.second == 0
                            ? ""
                            : csv_number(static_cast<double>(it->second.first) / it->second.second));
        }
      }
      rows.push_back(std::move(row));
    }
    files.push_back(out / "wtap.csv");
    write_csv(files.back(), header, rows);
    std::vector<std::vector<std::string>> drows;
    for (const auto& d : decisions_) {
      drows.push_back({d.family, d.group, std::to_string(d.agent), d.label, d.accept ? "accept" : "reject",
                       d.conforming ? "1" : "0", csv_number(d.temperature), d.adjusted ? "1" : "0", d.persona});
    }
    files.push_back(out / "decisions.csv");
    write_csv(files.back(),
              {"family", "group", "agent", "case", "decision", "conforming", "temperature", "adjusted", "persona"},
              drows);
    return files;
  }

 private:
  std::string t(const std::string& id, const Bindings& b = {}) const { return render_id(templates_, p_.variants, id, b); }

  std::string plea_prompt(const PleaPersona& persona, const PleaCase& c) const {
    std::string comparative;
    if (c.comparative != Comparative::none) {
      comparative = t("plea.comparative", {{"compared_to", compared_phrase(c.comparative)},
                                           {"typical_sentence", std::to_string(typical_sentence(c.comparative)) +
                                                                    "-month suspension"}});
    }
    const std::string crime = t("plea.crime", {{"self_perception", self_phrase(c.self)}});
    const std::string plea = t("plea.bargain", {{"period", std::to_string(c.period_months)},
                                                {"probability", std::to_string(c.probability_percent) + "%"},
                                                {"comparative", comparative}});
    Bindings b{{"few_shot", few_shot_block(p_.few_shot)},
               {"adjustment", persona.adjusted ? t("plea.adjustment") : ""},
               {"crime", crime},
               {"plea", plea}};
    if (persona.attributes.empty()) return t("plea.instruction.nopersona", b);
    b["persona"] = persona.describe();
    return t("plea.instruction", b);
  }

  void tcu_agent(int r, RunContext& ctx) {
    ctx.set_stage("persona");
    const PleaPersona persona = sample_persona(p_.demographics, ctx, p_.persona);
    AgentState agent;
    agent.agent_id = "respondent" + std::to_string(r);
    agent.settings = p_.settings;
    agent.settings.temperature = persona.temperature;
    ctx.set_stage("tcu");
    TcuAnswerSheet sheet;
    const auto& items = tcu_items();
    const std::size_t half = items.size() / 2;
    for (std::size_t first : {std::size_t{0}, half}) {
      std::string statements;
      for (std::size_t i = first; i < first + half; ++i) {
        statements += std::to_string(i + 1) + ". " + items[i].text + "\n";
      }
      const std::string prompt = t("plea.tcu", {{"persona", persona.attributes.empty() ? "none" : persona.describe()},
                                                {"adjustment", persona.adjusted ? t("plea.adjustment") : ""},
                                                {"statements", statements}});
      const ActResult res = act_text(agent, prompt, ParserSpec::free_text(), ctx);
      parse_tcu_batch(res.action.raw, first, half, sheet);
    }
    const TcuScores s = score_tcu(sheet, p_.key);
    json answers = json::array();
    for (auto a : sheet.answers) answers.push_back(static_cast<int>(a));
    ctx.record(EventKind::world,
               json{{"event", "tcu"},
                    {"answers", answers},
                    {"declined", sheet.declined},
                    {"scores", {{"hostility", s.hostility}, {"risk_taking", s.risk_taking},
                                {"social_support", s.social_support}}}},
               agent.agent_id);
    tcu_.push_back({r, s, sheet.declined.size(), persona.temperature, persona.adjusted, persona.describe()});
  }

  // (group, family:label) -> (accepted, n)
  std::map<std::pair<std::string, std::string>, std::pair<long, long>> wtap_table() const {
    std::map<std::pair<std::string, std::string>, std::pair<long, long>> out;
    for (const auto& d : decisions_) {
      auto& cell = out[{d.group, d.family + ":" + d.label}];
      cell.first += d.accept ? 1 : 0;
      cell.second += 1;
    }
    return out;
  }

  PleaParams p_;
  const TemplateRegistry& templates_;
  std::vector<std::pair<std::string, SelfPerception>> cells_;
  std::vector<Decision> decisions_;
  std::vector<TcuRow> tcu_;
  bool done_ = false;
};

}  // namespace

std::unique_ptr<Scenario> make_scenario(const json& params, const TemplateRegistry& templates) {
  return std::make_unique<PleaScenario>(PleaParams::from_json(params), templates);
}

}  // namespace sabm::plea
