#include <doctest.h>

#include "sabm/error.hpp"
#include "sabm/promptkit.hpp"
#include "sabm/scenarios/all.hpp"
#include "support.hpp"

using namespace sabm;
using testing::Gen;

TEST_CASE("render substitutes every placeholder exactly") {
  const PromptTemplate t("t", "Guess an integer from {range begin} to {range end}. {range begin}!");
  CHECK(t.placeholders() == std::set<std::string>{"range begin", "range end"});
  CHECK(render(t, {{"range begin", "1"}, {"range end", "100"}, {"unused", "x"}}) == "Guess an integer from 1 to 100. 1!");
  CHECK_THROWS_AS(render(t, {{"range begin", "1"}}), MissingBinding);
}

TEST_CASE("escaped braces and malformed openers stay literal") {
  const PromptTemplate t("t", "{{literal}} {x} {not closed and {} }}");
  CHECK(t.placeholders() == std::set<std::string>{"x"});
  CHECK(render(t, {{"x", "X"}}) == "{literal} X {not closed and {} }");
  CHECK(PromptTemplate::scan("{a}{b}{a}") == std::vector<std::string>{"a", "b", "a"});
}

TEST_CASE("declared placeholder sets are enforced") {
  CHECK_THROWS_AS(PromptTemplate("t", "{a} {b}", {"a"}), UnknownPlaceholder);
  CHECK_NOTHROW(PromptTemplate("t", "{a}", {"a", "b"}));
}

TEST_CASE("property: rendering is idempotent once fully bound") {
  Gen g(3);
  for (int i = 0; i < 500; ++i) {
    std::string body;
    Bindings b;
    const int parts = g.integer(0, 6);
    for (int k = 0; k < parts; ++k) {
      if (g.coin()) {
        const std::string name = "n" + std::to_string(g.integer(0, 3));
        body += "{" + name + "}";
        b[name] = g.word();
      } else {
        body += escape_braces(g.word());
      }
    }
    const PromptTemplate t("p", body);
    const std::string once = render(t, b);
    const PromptTemplate again("q", escape_braces(once));
    CHECK(again.placeholders().empty());
    CHECK(render(again, {}) == once);
  }
}

TEST_CASE("variants resolve by base, kind and id") {
  TemplateRegistry r;
  r.add({"greet", "Hello {name}."});
  r.add_variant({"greet", VariantKind::paraphrase, "v1", "Hi there, {name}."});
  r.add_variant({"greet", VariantKind::objectives, "rude", "Go away, {name}."});
  CHECK(render(r.select_variant("greet", VariantKind::paraphrase, "v1"), {{"name", "Ann"}}) == "Hi there, Ann.");
  CHECK(r.select_variant("greet", VariantKind::paraphrase, "v1").id() == "greet");
  CHECK_THROWS_AS(r.select_variant("greet", VariantKind::elements, "v1"), UnknownVariant);
  CHECK_THROWS_AS(r.get("missing"), UnknownVariant);
  CHECK(r.variants_of("greet").size() == 2);

  const auto sel = VariantSelection::parse("greet:objectives:rude");
  CHECK(sel.str() == "greet:objectives:rude");
  CHECK(render(resolve_template(r, "greet", {sel}), {{"name", "Bo"}}) == "Go away, Bo.");
  CHECK(render(resolve_template(r, "greet", {}), {{"name", "Bo"}}) == "Hello Bo.");
  CHECK_THROWS_AS(VariantSelection::parse("greet:rude"), ConfigError);
  CHECK_THROWS_AS(VariantSelection::parse("greet:tone:rude"), ConfigError);
}

TEST_CASE("template directories round trip, variants included") {
  testing::TempDir dir("tpl");
  const TemplateRegistry all = default_templates();
  all.save_directory(dir.path());
  TemplateRegistry loaded;
  loaded.load_directory(dir.path());
  CHECK(loaded.ids() == all.ids());
  for (const auto& id : all.ids()) {
    CHECK(loaded.get(id).body() == all.get(id).body());
    CHECK(loaded.variants_of(id).size() == all.variants_of(id).size());
  }
  CHECK_THROWS_AS(loaded.load_directory(dir / "nope"), IoError);
}

TEST_CASE("every shipped template renders with its own placeholders bound") {
  const TemplateRegistry all = default_templates();
  for (const auto& id : all.ids()) {
    Bindings b;
    for (const auto& n : all.get(id).placeholders()) b[n] = "<" + n + ">";
    CHECK_NOTHROW(render(all.get(id), b));
  }
}

TEST_CASE("modal label ties go to the smallest label") {
  CHECK(modal_label({"b", "a", "b", "a"}) == "a");
  CHECK(modal_label({"z", "y", "z"}) == "z");
}

TEST_CASE("variation classifier levels") {
  const MetricSample base{{5, 6, 6, 7, 5, 6, 7, 6}, std::vector<std::string>(8, "binary_search")};
  SUBCASE("identical arms are low") {
    const auto v = classify_variation(base, base);
    CHECK(v.level == VariationLevel::low);
    REQUIRE(v.p_value);
    CHECK(*v.p_value == doctest::Approx(1.0));
  }
  SUBCASE("shifted values with the same label are medium") {
    const MetricSample shifted{{9, 10, 11, 9, 10, 12, 11, 10}, std::vector<std::string>(8, "binary_search")};
    CHECK(classify_variation(base, shifted).level == VariationLevel::medium);
  }
  SUBCASE("different modal labels are high even when values coincide") {
    const MetricSample other{base.values, std::vector<std::string>(8, "other")};
    const auto v = classify_variation(base, other);
    CHECK(v.level == VariationLevel::high);
    CHECK(v.statistic == "modal_label");
  }
  CHECK_THROWS_AS(classify_variation({{}, {"a"}}, base), EmptySample);
}

TEST_CASE("property: a low verdict is symmetric") {
  Gen g(17);
  int lows = 0;
  for (int i = 0; i < 300; ++i) {
    MetricSample a, b;
    const int na = g.integer(1, 7), nb = g.integer(1, 7);
    const double shift = g.coin() ? 0.0 : g.real(0, 5);
    for (int k = 0; k < na; ++k) a.values.push_back(g.integer(0, 6)), a.labels.push_back(g.coin() ? "x" : "y");
    for (int k = 0; k < nb; ++k) b.values.push_back(g.integer(0, 6) + shift), b.labels.push_back(g.coin() ? "x" : "y");
    const auto ab = classify_variation(a, b);
    const auto ba = classify_variation(b, a);
    if (ab.level == VariationLevel::low) {
      ++lows;
      CHECK(ba.level == VariationLevel::low);
    }
    // High is decided by labels alone.
    CHECK((ab.level == VariationLevel::high) == (modal_label(a.labels) != modal_label(b.labels)));
  }
  CHECK(lows > 20);
}
