#include <doctest.h>

#include <cstdlib>

#include "sabm/error.hpp"
#include "sabm/provider.hpp"
#include "sabm/scenarios/all.hpp"
#include "support.hpp"

using namespace sabm;
using testing::Gen;
using testing::TempDir;

namespace {

ChatRequest tagged(const std::string& scenario, const std::string& stage, const std::string& user) {
  ChatRequest r;
  r.settings = {"gpt-4-0314", 0.7, 64};
  r.messages = {{Role::system, make_system_message({scenario, stage}, "a1")}, {Role::user, user}};
  return r;
}

// Independent rendering of the documented key format: each field is an
// 8-byte big-endian length followed by its bytes.
std::string field(const std::string& s) {
  std::string out;
  const std::uint64_t n = s.size();
  for (int i = 7; i >= 0; --i) out += static_cast<char>((n >> (8 * i)) & 0xFF);
  return out + s;
}

ChatRequest random_request(Gen& g) {
  ChatRequest r;
  r.settings.model_type = g.pick(std::vector<std::string>{"gpt-4-0314", "gpt-4-0613", "gpt-3.5-turbo-0613"});
  r.settings.temperature = g.pick(std::vector<double>{0.0, 0.5, 0.7, 1.0, 1.3});
  r.settings.max_tokens = g.integer(1, 4);
  const int n = g.integer(1, 3);
  for (int i = 0; i < n; ++i) r.messages.push_back({g.pick(std::vector<Role>{Role::system, Role::user, Role::assistant}), g.word(3)});
  return r;
}

struct FakeTransport final : HttpTransport {
  std::vector<HttpResult> script;
  std::size_t next = 0;
  int posts = 0;
  std::string last_body;
  std::map<std::string, std::string> last_headers;
  HttpResult post(const std::string&, const std::string&, const std::map<std::string, std::string>& headers,
                  const std::string& body) override {
    ++posts;
    last_body = body;
    last_headers = headers;
    return script.at(std::min(next++, script.size() - 1));
  }
};

const char* kOk = R"({"choices":[{"message":{"role":"assistant","content":"50"},"finish_reason":"stop"}],
                     "usage":{"prompt_tokens":10,"completion_tokens":2}})";

LiveConfig live_config(Budget budget = {10, 1000}) {
  LiveConfig c;
  c.api_key = "k";
  c.budget = budget;
  c.base_url = "http://unit.test";
  return c;
}

}  // namespace

TEST_CASE("sha256 matches the FIPS 180-2 test vectors") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("canonical serialization follows the length-prefixed layout") {
  ChatRequest r;
  r.settings = {"m", 0.7, 5};
  r.messages = {{Role::user, "hi"}};
  const std::string expected = field("sabm.chat.v1") + field("m") + field("0.7") + field("5") + field("1") +
                               field("user") + field("hi");
  CHECK(canonical_serialization(r) == expected);
  CHECK(cache_key(r).hex() == sha256_hex(expected));
}

TEST_CASE("cache keys: identical, temperature and order sensitivity") {
  ChatRequest a;
  a.settings = {"gpt-4-0314", 0.5, 32};
  a.messages = {{Role::system, "s"}, {Role::user, "u"}};
  ChatRequest b = a;
  CHECK(cache_key(a) == cache_key(b));
  b.settings.temperature = 0.7;
  CHECK_FALSE(cache_key(a) == cache_key(b));
  ChatRequest c = a;
  std::swap(c.messages[0], c.messages[1]);
  CHECK_FALSE(cache_key(a) == cache_key(c));
  // Field boundaries are unambiguous.
  ChatRequest d = a, e = a;
  d.messages = {{Role::user, "ab"}, {Role::user, "c"}};
  e.messages = {{Role::user, "a"}, {Role::user, "bc"}};
  CHECK_FALSE(cache_key(d) == cache_key(e));
}

TEST_CASE("property: key equality iff request equality") {
  Gen g(11);
  int equal_pairs = 0;
  for (int i = 0; i < 2000; ++i) {
    const ChatRequest a = random_request(g);
    const ChatRequest b = g.coin() ? a : random_request(g);
    if (a == b) ++equal_pairs;
    CHECK((cache_key(a) == cache_key(b)) == (a == b));
    CHECK(CacheKey::from_hex(cache_key(a).hex()) == cache_key(a));
  }
  CHECK(equal_pairs > 500);
}

TEST_CASE("request and response JSON round trip") {
  Gen g(5);
  for (int i = 0; i < 100; ++i) {
    const ChatRequest r = random_request(g);
    CHECK(nlohmann::json(r).get<ChatRequest>() == r);
  }
  ChatResponse resp{"x", FinishReason::length, Usage{3, 4}};
  CHECK(nlohmann::json(resp).get<ChatResponse>() == resp);
}

TEST_CASE("request validation") {
  ChatRequest r = tagged("guess", "guess", "x");
  r.settings.temperature = 2.5;
  CHECK_THROWS_AS(r.validate(), ConfigError);
  r.settings.temperature = 1.0;
  r.settings.max_tokens = 0;
  CHECK_THROWS_AS(r.validate(), ConfigError);
}

TEST_CASE("scenario tags route scripted requests") {
  const auto tag = parse_scenario_tag(tagged("firm", "price", "x"));
  REQUIRE(tag);
  CHECK(tag->scenario == "firm");
  CHECK(tag->stage == "price");

  auto backend = make_scripted_backend();
  ChatRequest untagged;
  untagged.messages = {{Role::user, "hello"}};
  CHECK_THROWS_AS(backend->complete(untagged), UnknownScenarioTag);
  CHECK_THROWS_AS(backend->complete(tagged("chess", "move", "x")), UnknownScenarioTag);
}

TEST_CASE("scripted oracles answer in the parser's format") {
  auto backend = make_scripted_backend();
  SUBCASE("guesser opens with the floor midpoint") {
    const auto r = backend->complete(tagged("guess", "guess",
                                            "You are playing a number guessing game. Guess an integer from 1 to 100."));
    CHECK(r.content == "50");
  }
  SUBCASE("plea defendant at the expected-value boundary") {
    const std::string prompt =
        "In your heart, you are aware that you did exceed the speed limit. ... you will instead face a 30-month "
        "suspension. ... The probability of conviction stands at 50%.";
    CHECK(backend->complete(tagged("plea", "plea", prompt)).content == "Expected trial loss equals offer.\naccept");
  }
  SUBCASE("scripted answers are pure") {
    const auto req = tagged("guess", "guess", "Guess an integer from 1 to 100. Your previous guesses: 50 (higher than the answer)");
    CHECK(backend->complete(req) == backend->complete(req));
  }
}

TEST_CASE("replay store round trip, dedupe and read-only") {
  TempDir dir("store");
  const auto path = dir / "cache.jsonl";
  const ChatRequest req = tagged("guess", "guess", "q");
  {
    ReplayStore store(path);
    CHECK(store.append({cache_key(req), req, {"50", FinishReason::stop, std::nullopt}}));
    CHECK_FALSE(store.append({cache_key(req), req, {"51", FinishReason::stop, std::nullopt}}));
    CHECK(store.size() == 1);
  }
  ReplayStore again(path, true);
  REQUIRE(again.find(cache_key(req)));
  CHECK(again.find(cache_key(req))->content == "50");
  CHECK_THROWS_AS(again.append({cache_key(req), req, {}}), IoError);
  CHECK_THROWS_AS(ReplayStore(dir / "missing.jsonl", true), IoError);

  testing::spit(dir / "bad.jsonl", "{not json}\n");
  CHECK_THROWS_AS(ReplayStore(dir / "bad.jsonl", true), SerializationError);
}

TEST_CASE("record then replay: zero inner calls and an unchanged store") {
  TempDir dir("rr");
  const auto path = dir / "cache.jsonl";
  auto inner = std::make_shared<testing::FnBackend>([](const ChatRequest& r) { return "echo:" + r.messages.back().content; });
  {
    CachingBackend rec(std::make_shared<ReplayStore>(path), inner);
    CHECK(rec.complete(tagged("x", "y", "a")).content == "echo:a");
    CHECK(rec.complete(tagged("x", "y", "a")).content == "echo:a");
    CHECK(rec.inner_calls() == 1);
    CHECK(rec.hits() == 1);
  }
  const std::string before = testing::slurp(path);
  CachingBackend replay(std::make_shared<ReplayStore>(path, true), nullptr);
  CHECK(replay.complete(tagged("x", "y", "a")).content == "echo:a");
  CHECK_THROWS_AS(replay.complete(tagged("x", "y", "b")), CacheMiss);
  CHECK(inner->calls == 1);
  CHECK(testing::slurp(path) == before);

  CachingBackend passthrough(std::make_shared<ReplayStore>(path, true), inner, MissPolicy::passthrough);
  CHECK(passthrough.complete(tagged("x", "y", "b")).content == "echo:b");
  CHECK(testing::slurp(path) == before);
}

TEST_CASE("live backend: request body, usage and budget") {
  auto t = std::make_unique<FakeTransport>();
  auto* tp = t.get();
  tp->script = {{200, kOk, ""}};
  LiveBackend live(live_config({2, 1000}), std::move(t));
  live.sleeper = [](int) {};
  const auto r = live.complete(tagged("guess", "guess", "q"));
  CHECK(r.content == "50");
  REQUIRE(r.usage);
  CHECK(live.tokens() == 12);
  const auto body = nlohmann::json::parse(tp->last_body);
  CHECK(body["model"] == "gpt-4-0314");
  CHECK(body["max_tokens"] == 64);
  CHECK(body["messages"].size() == 2);
  CHECK(tp->last_headers.at("Authorization") == "Bearer k");
  live.complete(tagged("guess", "guess", "q"));
  CHECK_THROWS_AS(live.complete(tagged("guess", "guess", "q")), BudgetExceeded);
  CHECK(tp->posts == 2);
}

TEST_CASE("live backend: retries transient failures with exponential backoff") {
  auto t = std::make_unique<FakeTransport>();
  auto* tp = t.get();
  tp->script = {{503, "", ""}, {0, "", "connection reset"}, {200, kOk, ""}};
  LiveBackend live(live_config(), std::move(t));
  std::vector<int> sleeps;
  live.sleeper = [&](int ms) { sleeps.push_back(ms); };
  CHECK(live.complete(tagged("g", "s", "q")).content == "50");
  CHECK(tp->posts == 3);
  CHECK(sleeps == std::vector<int>{500, 1000});

  auto t2 = std::make_unique<FakeTransport>();
  t2->script = {{500, "", ""}};
  auto* tp2 = t2.get();
  LiveBackend down(live_config(), std::move(t2));
  down.sleeper = [](int) {};
  CHECK_THROWS_AS(down.complete(tagged("g", "s", "q")), TransportError);
  CHECK(tp2->posts == 3);
}

TEST_CASE("live backend: auth and malformed responses are not retried") {
  for (int status : {401, 403}) {
    auto t = std::make_unique<FakeTransport>();
    auto* tp = t.get();
    t->script = {{status, "", ""}};
    LiveBackend live(live_config(), std::move(t));
    live.sleeper = [](int) {};
    CHECK_THROWS_AS(live.complete(tagged("g", "s", "q")), AuthError);
    CHECK(tp->posts == 1);
  }
  auto t = std::make_unique<FakeTransport>();
  t->script = {{200, R"({"choices":[]})", ""}};
  LiveBackend live(live_config(), std::move(t));
  CHECK_THROWS_AS(live.complete(tagged("g", "s", "q")), ProviderError);
}

TEST_CASE("live configuration guards") {
  ::unsetenv("SABM_API_KEY");
  CHECK_THROWS_AS(LiveConfig::from_environment({1, 1}), AuthError);
  ::setenv("SABM_API_KEY", "secret", 1);
  ::setenv("SABM_API_BASE", "http://example.invalid", 1);
  const auto cfg = LiveConfig::from_environment({1, 1});
  CHECK(cfg.api_key == "secret");
  CHECK(cfg.base_url == "http://example.invalid");
  ::unsetenv("SABM_API_KEY");
  ::unsetenv("SABM_API_BASE");
  CHECK_THROWS_AS(LiveBackend(live_config({0, 0}), std::make_unique<FakeTransport>()), ConfigError);
}
