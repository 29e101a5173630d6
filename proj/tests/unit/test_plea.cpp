#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "sabm/error.hpp"
#include "sabm/scenarios/all.hpp"
#include "sabm/scenarios/plea.hpp"
#include "support.hpp"

using namespace sabm;
using namespace sabm::plea;
using nlohmann::json;
using testing::FnBackend;
using testing::Gen;
using testing::TempDir;

namespace {

const std::filesystem::path kData = SABM_DATA_DIR;

json read_data(const char* name) {
  std::ifstream in(kData / name);
  REQUIRE(in);
  return json::parse(in);
}

TcuAnswerSheet uniform_sheet(Likert x) {
  TcuAnswerSheet s;
  s.answers.assign(36, x);
  return s;
}

// Per-scale means times ten, written out by hand.
std::array<double, 3> score_oracle(const std::vector<int>& answers, const std::vector<KeyEntry>& key) {
  std::array<double, 3> sum{}, n{};
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const int s = static_cast<int>(key[i].scale);
    sum[s] += key[i].reversed ? 6 - answers[i] : answers[i];
    n[s] += 1;
  }
  return {10 * sum[0] / n[0], 10 * sum[1] / n[1], 10 * sum[2] / n[2]};
}

struct Sandbox {
  EventLog log;
  FnBackend backend{[](const ChatRequest&) { return std::string(); }};
  RunContext ctx;
  explicit Sandbox(std::uint64_t seed) : ctx("t", "plea", seed, log, backend) {}
};

RunResult battery(const std::filesystem::path& out, json params, Backend* backend = nullptr) {
  auto scripted = make_scripted_backend();
  RunConfig c;
  c.scenario = "plea";
  c.seed = 11;
  c.output_dir = out;
  c.scenario_params = std::move(params);
  c.export_results = true;
  return run(c, backend ? *backend : *scripted, default_scenarios(), default_templates());
}

double wtap(const RunResult& r, const std::string& group, const std::string& cell) {
  return r.metrics["wtap"][group][cell]["wtap"];
}

}  // namespace

TEST_CASE("shipped data files match the built-in defaults") {
  const json demo = read_data("demographics.json");
  CHECK(demo == DemographicsTable::defaults().to_json());
  CHECK(DemographicsTable::from_json(demo).checksum() == DemographicsTable::defaults().checksum());

  const auto key = key_from_json(read_data("tcu_key.json"));
  const auto def = default_key();
  REQUIRE(key.size() == 36);
  for (std::size_t i = 0; i < 36; ++i) {
    CHECK(key[i].scale == def[i].scale);
    CHECK(key[i].reversed == def[i].reversed);
  }
  const json items = read_data("tcu_items.json")["items"];
  REQUIRE(items.size() == tcu_items().size());
  std::array<int, 3> per_scale{};
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(items[i]["text"] == tcu_items()[i].text);
    CHECK(items[i]["scale"] == to_string(tcu_items()[i].scale));
    ++per_scale[static_cast<int>(tcu_items()[i].scale)];
  }
  CHECK(per_scale == std::array<int, 3>{12, 12, 12});
}

TEST_CASE("demographic tables are validated") {
  json bad = DemographicsTable::defaults().to_json();
  bad["dimensions"][0]["categories"][0][1] = 0.9;
  CHECK_THROWS_AS(DemographicsTable::from_json(bad), MalformedTable);
  CHECK_THROWS_AS(DemographicsTable::from_json(json{{"dimensions", 3}}), MalformedTable);
  json changed = DemographicsTable::defaults().to_json();
  changed["dimensions"][0]["categories"][0][1] = 0.5;
  changed["dimensions"][0]["categories"][1][1] = 0.5;
  CHECK(DemographicsTable::from_json(changed).checksum() != DemographicsTable::defaults().checksum());
}

TEST_CASE("temperature mapping and sampler") {
  CHECK(temperature_from_normal(1.0) == 1.0);
  CHECK(temperature_from_normal(-2.0) == 0.0);
  CHECK(temperature_from_normal(4.0) == 2.0);
  CHECK(temperature_from_normal(-50.0) == 0.0);
  CHECK(temperature_from_normal(2.5) == doctest::Approx(1.5));
  Sandbox s(3);
  double sum = 0;
  int inside = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_temperature(s.ctx);
    REQUIRE((t >= 0.0 && t <= 2.0));
    sum += t;
    inside += t > 0.0 && t < 2.0;
  }
  CHECK(std::abs(sum / n - 1.0) < 0.05);
  CHECK(inside >= 0.995 * n);
}

TEST_CASE("persona draws follow the table weights") {
  Sandbox s(4);
  const auto table = DemographicsTable::defaults();
  std::map<std::pair<std::string, std::string>, int> counts;
  int adjusted = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_persona(table, s.ctx);
    REQUIRE(p.attributes.size() == table.dimensions.size());
    for (const auto& a : p.attributes) ++counts[a];
    adjusted += p.adjusted;
  }
  for (const auto& d : table.dimensions) {
    for (const auto& [label, w] : d.categories) {
      const double f = static_cast<double>(counts[{d.name, label}]) / n;
      // Four binomial standard errors.
      CHECK(std::abs(f - w) < 4 * std::sqrt(w * (1 - w) / n) + 1e-3);
    }
  }
  CHECK(std::abs(adjusted / double(n) - 0.5) < 0.02);

  const auto plain = sample_persona(table, s.ctx, {false, false, false, 0.7});
  CHECK(plain.attributes.empty());
  CHECK(plain.temperature == 0.7);
  CHECK_FALSE(plain.adjusted);
  PleaPersona shown;
  shown.attributes = {{"gender", "female"}, {"ethnicity", "Asian"}};
  CHECK(shown.describe() == "[female, Asian]");
}

TEST_CASE("likert answers parse with the longest phrase first") {
  CHECK(likert_from_text("I agree strongly") == Likert::agree_strongly);
  CHECK(likert_from_text("Strongly disagree.") == Likert::disagree_strongly);
  CHECK(likert_from_text("disagree") == Likert::disagree);
  CHECK(likert_from_text("Agree") == Likert::agree);
  CHECK(likert_from_text("no opinion") == std::nullopt);
}

TEST_CASE("TCU scoring") {
  const auto s = score_tcu(uniform_sheet(Likert::uncertain), default_key());
  CHECK(s.hostility == 30.0);
  CHECK(s.risk_taking == 30.0);
  CHECK(s.social_support == 30.0);
  auto reversed = default_key();
  for (auto& k : reversed) k.reversed = true;
  CHECK(score_tcu(uniform_sheet(Likert::agree_strongly), reversed).risk_taking == 10.0);
  CHECK(score_tcu(uniform_sheet(Likert::agree_strongly), default_key()).risk_taking == 50.0);
  TcuAnswerSheet short_sheet;
  short_sheet.answers.assign(35, Likert::agree);
  CHECK_THROWS_AS(score_tcu(short_sheet, default_key()), KeyMismatch);
}

TEST_CASE("property: scores match the oracle and survive joint permutation") {
  Gen g(71);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<KeyEntry> key = default_key();
    for (auto& k : key) k.reversed = g.coin();
    std::vector<int> answers(36);
    for (auto& a : answers) a = g.integer(1, 5);
    TcuAnswerSheet sheet;
    for (int a : answers) sheet.answers.push_back(static_cast<Likert>(a));
    const auto got = score_tcu(sheet, key);
    const auto want = score_oracle(answers, key);
    CHECK(got.hostility == doctest::Approx(want[0]));
    CHECK(got.risk_taking == doctest::Approx(want[1]));
    CHECK(got.social_support == doctest::Approx(want[2]));

    std::vector<std::size_t> order(36);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 35; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(g.integer(0, static_cast<int>(i)))]);
    TcuAnswerSheet shuffled;
    std::vector<KeyEntry> shuffled_key;
    for (std::size_t i : order) {
      shuffled.answers.push_back(sheet.answers[i]);
      shuffled_key.push_back(key[i]);
    }
    const auto again = score_tcu(shuffled, shuffled_key);
    CHECK(again.hostility == doctest::Approx(got.hostility));
    CHECK(again.risk_taking == doctest::Approx(got.risk_taking));
    CHECK(again.social_support == doctest::Approx(got.social_support));
  }
}

TEST_CASE("two batches with gaps parse into 36 answers") {
  std::string first, second;
  for (int i = 1; i <= 18; ++i) {
    if (i == 4) continue;  // skipped
    first += std::to_string(i) + ". " + (i % 2 ? "agree" : "disagree") + "\n";
  }
  for (int i = 1; i <= 18; ++i) {
    if (i == 7) second += "7. I would rather not say\n";
    else second += std::to_string(i) + ") agree strongly\n";
  }
  TcuAnswerSheet sheet;
  parse_tcu_batch(first, 0, 18, sheet);
  parse_tcu_batch(second, 18, 18, sheet);
  REQUIRE(sheet.answers.size() == 36);
  CHECK(sheet.answers[0] == Likert::agree);
  CHECK(sheet.answers[1] == Likert::disagree);
  CHECK(sheet.answers[3] == Likert::uncertain);
  CHECK(sheet.answers[24] == Likert::uncertain);
  CHECK(sheet.answers[35] == Likert::agree_strongly);
  CHECK(sheet.declined == std::set<std::size_t>{3, 24});

  TcuAnswerSheet positional;
  parse_tcu_batch("agree\n\nuncertain\nwhatever", 0, 4, positional);
  CHECK(positional.answers[0] == Likert::agree);
  CHECK(positional.answers[1] == Likert::uncertain);
  CHECK(positional.declined == std::set<std::size_t>{2, 3});
}

TEST_CASE("cases, few-shot examples and the expected-value oracle") {
  CHECK(PleaCase{SelfPerception::guilty, 30, 50, Comparative::none}.label() == "30@50%");
  CHECK(PleaCase{SelfPerception::guilty, 30, 50, Comparative::worse}.label() == "worse");
  CHECK(typical_sentence(Comparative::better) == 45);
  CHECK(typical_sentence(Comparative::worse) == 15);
  CHECK_THROWS_AS(typical_sentence(Comparative::none), DomainError);
  CHECK(few_shot_block({}).empty());
  CHECK(few_shot_block({"ex1", "ex3"}).find("Question 2") != std::string::npos);
  CHECK_THROWS_AS(few_shot_block({"ex9"}), ConfigError);

  CHECK(PleaOracle::accepts(SelfPerception::guilty, 30, 50, Comparative::none));
  CHECK_FALSE(PleaOracle::accepts(SelfPerception::innocent, 30, 50, Comparative::none));
  CHECK(PleaOracle::accepts(SelfPerception::uncertain, 30, 50, Comparative::none));
  CHECK_FALSE(PleaOracle::accepts(SelfPerception::uncertain, 30, 50, Comparative::worse));
}

TEST_CASE("property: oracle acceptance is monotone in conviction probability") {
  Gen g(72);
  const SelfPerception selves[] = {SelfPerception::guilty, SelfPerception::innocent, SelfPerception::uncertain};
  const Comparative comps[] = {Comparative::none, Comparative::better, Comparative::similar, Comparative::worse};
  for (int trial = 0; trial < 2000; ++trial) {
    const auto self = selves[g.integer(0, 2)];
    const auto comp = comps[g.integer(0, 3)];
    const int period = g.integer(0, 80);
    const int p1 = g.integer(0, 100), p2 = g.integer(p1, 100);
    if (PleaOracle::accepts(self, period, p1, comp)) CHECK(PleaOracle::accepts(self, period, p2, comp));
    // Decision rule restated with exact rationals: 5 * (period - slack) <= 3 * p.
    int slack = self == SelfPerception::guilty ? 6 : self == SelfPerception::innocent ? -6 : 0;
    slack += comp == Comparative::better ? 3 : comp == Comparative::worse ? -3 : 0;
    CHECK(PleaOracle::accepts(self, period, p1, comp) == (5 * (period - slack) <= 3 * p1));
  }
}

TEST_CASE("battery separates guilty and innocent defendants") {
  TempDir dir("plea");
  const RunResult r = battery(dir.path(), {{"families", {"substantive", "comparative"}}, {"n_agents", 60}});
  CHECK(r.exit_reason.kind == "endpoint");
  CHECK(wtap(r, "guilty", "substantive:30@50%") == 1.0);
  CHECK(wtap(r, "innocent", "substantive:30@50%") == 0.0);
  CHECK(wtap(r, "uncertain", "substantive:30@50%") == 1.0);
  CHECK(wtap(r, "uncertain", "comparative:worse") == 0.0);
  CHECK(wtap(r, "uncertain", "comparative:better") == 1.0);
  CHECK(r.metrics["decisions"] == 60 * 3 * 4);
  bool found = false;
  for (const auto& t : r.metrics["tests"]) {
    if (t["case"] == "substantive:30@50%" && t["a"] == "guilty" && t["b"] == "innocent") {
      found = true;
      CHECK(t["p"].get<double>() < 1e-6);
    }
  }
  CHECK(found);
  CHECK(r.metrics["demographics_checksum"] == DemographicsTable::defaults().checksum());
  CHECK(std::filesystem::exists(dir / "run-plea-s11" / "wtap.csv"));
  CHECK(canonical_metric("plea", r.metrics).label == "accept");
}

TEST_CASE("a provider failure excludes the respondent and the battery continues") {
  TempDir dir("plea-fail");
  auto scripted = make_scripted_backend();
  int calls = 0;
  FnBackend flaky([&](const ChatRequest& req) -> std::string {
    if (++calls == 5) throw TransportError("connection reset");
    return scripted->complete(req).content;
  });
  const RunResult r = battery(dir.path(), {{"families", {"substantive"}}, {"groups", {"guilty"}}, {"n_agents", 10}}, &flaky);
  CHECK_FALSE(r.aborted);
  CHECK(r.metrics["wtap"]["guilty"]["substantive:30@50%"]["n"] == 9);
  int excluded = 0;
  for (const auto& rec : EventLog::read_file(r.log_path)) excluded += rec.kind == EventKind::world && rec.payload["event"] == "excluded";
  CHECK(excluded == 1);
}

TEST_CASE("questionnaire mode scores every respondent") {
  TempDir dir("plea-tcu");
  const RunResult r = battery(dir.path(), {{"task", "tcu"}, {"n_agents", 8},
                                           {"tcu_key_file", (kData / "tcu_key.json").string()},
                                           {"demographics_file", (kData / "demographics.json").string()}});
  CHECK(r.rounds == 8);
  CHECK(r.metrics["agents"] == 8);
  CHECK(r.metrics["tcu"]["risk_taking"]["mean"] == 30.0);
  CHECK(r.metrics["declined_items"] == 0);
  CHECK(std::filesystem::exists(dir / "run-plea-s11" / "tcu.csv"));
}

TEST_CASE("plea parameters are checked") {
  const auto& reg = default_scenarios();
  const auto tpl = default_templates();
  CHECK_THROWS_AS(reg.make("plea", {{"task", "poll"}}, tpl), ConfigError);
  CHECK_THROWS_AS(reg.make("plea", {{"families", {"civil"}}}, tpl), ConfigError);
  CHECK_THROWS_AS(reg.make("plea", {{"groups", {"maybe"}}}, tpl), ConfigError);
  CHECK_THROWS_AS(reg.make("plea", {{"few_shot", {"ex7"}}}, tpl), ConfigError);
  CHECK_THROWS_AS(reg.make("plea", {{"tcu_key_file", "/nonexistent/key.json"}}, tpl), IoError);
}

TEST_CASE("probe asks one defendant") {
  auto backend = make_scripted_backend();
  const ProbeReport r = probe("plea", json::object(), {{"persona", {{"gender", "male"}}}, {"explain", true}},
                              {{"self_perception", "innocent"}, {"period", 3}, {"probability", 95}}, *backend,
                              default_scenarios(), default_templates());
  CHECK(r.summary["decision"] == "accept");
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].prompt.find("[male]") != std::string::npos);
  CHECK_FALSE(r.entries[0].explanation.empty());
}
