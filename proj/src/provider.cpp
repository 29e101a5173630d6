#include "sabm/provider.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "sabm/error.hpp"

namespace sabm {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view text) {
  if (text == "system") return Role::system;
  if (text == "user") return Role::user;
  if (text == "assistant") return Role::assistant;
  throw ConfigError("unknown message role '" + std::string(text) + "'");
}

std::string_view to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

FinishReason finish_reason_from_string(std::string_view text) {
  if (text == "stop") return FinishReason::stop;
  if (text == "length") return FinishReason::length;
  return FinishReason::error;
}

void LlmSettings::validate() const {
  if (model_type.empty()) throw ConfigError("model_type must not be empty");
  if (!(temperature >= 0.0 && temperature <= 2.0))
    throw ConfigError("temperature must lie in [0, 2]");
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

void ChatRequest::validate() const {
  settings.validate();
  if (messages.empty()) throw ConfigError("chat request has no messages");
}

void to_json(json& j, const LlmSettings& s) {
  j = json{{"model_type", s.model_type}, {"temperature", s.temperature}, {"max_tokens", s.max_tokens}};
}

void from_json(const json& j, LlmSettings& s) {
  s.model_type = j.at("model_type").get<std::string>();
  s.temperature = j.at("temperature").get<double>();
  s.max_tokens = j.at("max_tokens").get<int>();
}

void to_json(json& j, const ChatRequest& r) {
  json msgs = json::array();
  for (const auto& m : r.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  j = json{{"settings", r.settings}, {"messages", std::move(msgs)}};
}

void from_json(const json& j, ChatRequest& r) {
  r.settings = j.at("settings").get<LlmSettings>();
  r.messages.clear();
  for (const auto& m : j.at("messages")) {
    r.messages.push_back({role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  }
}

void to_json(json& j, const ChatResponse& r) {
  j = json{{"content", r.content}, {"finish_reason", to_string(r.finish_reason)}};
  if (r.usage) {
    j["usage"] = {{"prompt_tokens", r.usage->prompt_tokens}, {"completion_tokens", r.usage->completion_tokens}};
  }
}

void from_json(const json& j, ChatResponse& r) {
  r.content = j.at("content").get<std::string>();
  r.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
  r.usage.reset();
  if (j.contains("usage")) {
    r.usage = Usage{j["usage"].at("prompt_tokens").get<int>(), j["usage"].at("completion_tokens").get<int>()};
  }
}

// ---------------------------------------------------------------------------

namespace {

void put_field(std::string& out, std::string_view field) {
  const std::uint64_t n = field.size();
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((n >> shift) & 0xFF));
  out.append(field);
}

std::string shortest_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::array<std::uint8_t, 32> sha256(std::string_view data) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
    throw Error("SHA-256 digest failed");
  }
  return out;
}

std::string to_hex(const std::uint8_t* p, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(kDigits[p[i] >> 4]);
    s.push_back(kDigits[p[i] & 0xF]);
  }
  return s;
}

}  // namespace

std::string canonical_serialization(const ChatRequest& request) {
  std::string out;
  put_field(out, "sabm.chat.v1");
  put_field(out, request.settings.model_type);
  put_field(out, shortest_double(request.settings.temperature));
  put_field(out, std::to_string(request.settings.max_tokens));
  put_field(out, std::to_string(request.messages.size()));
  for (const auto& m : request.messages) {
    put_field(out, to_string(m.role));
    put_field(out, m.content);
  }
  return out;
}

CacheKey cache_key(const ChatRequest& request) {
  return CacheKey{sha256(canonical_serialization(request))};
}

std::string sha256_hex(std::string_view data) {
  auto d = sha256(data);
  return to_hex(d.data(), d.size());
}

std::string CacheKey::hex() const { return to_hex(digest.data(), digest.size()); }

CacheKey CacheKey::from_hex(std::string_view hex) {
  if (hex.size() != 64) throw SerializationError("cache key must be 64 hex digits");
  CacheKey key;
  for (std::size_t i = 0; i < 32; ++i) {
    unsigned value = 0;
    auto res = std::from_chars(hex.data() + 2 * i, hex.data() + 2 * i + 2, value, 16);
    if (res.ec != std::errc{} || res.ptr != hex.data() + 2 * i + 2)
      throw SerializationError("cache key is not hex");
    key.digest[i] = static_cast<std::uint8_t>(value);
  }
  return key;
}

// ---------------------------------------------------------------------------
// Scenario tags and the scripted backend

std::string make_system_message(const ScenarioTag& tag, std::string_view agent_id) {
  std::string s = "You are an agent in a simulation. Follow the output format exactly.\n";
  s += "[sabm scenario=" + tag.scenario + " stage=" + tag.stage + " agent=" + std::string(agent_id) + "]";
  return s;
}

std::optional<ScenarioTag> parse_scenario_tag(const ChatRequest& request) {
  static const std::regex kTag(R"(\[sabm scenario=([^\s\]]+) stage=([^\s\]]+))");
  for (const auto& m : request.messages) {
    if (m.role != Role::system) continue;
    std::smatch match;
    if (std::regex_search(m.content, match, kTag)) return ScenarioTag{match[1].str(), match[2].str()};
  }
  return std::nullopt;
}

ChatResponse scripted_complete(const ChatRequest& request, const ScenarioOracle& oracle) {
  request.validate();
  ChatResponse r;
  r.content = oracle.respond(request);
  r.finish_reason = FinishReason::stop;
  return r;
}

void ScriptedBackend::register_oracle(std::string scenario, std::shared_ptr<const ScenarioOracle> oracle) {
  oracles_[std::move(scenario)] = std::move(oracle);
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  auto tag = parse_scenario_tag(request);
  if (!tag) throw UnknownScenarioTag("request carries no scenario tag");
  auto it = oracles_.find(tag->scenario);
  if (it == oracles_.end()) throw UnknownScenarioTag("no oracle for scenario '" + tag->scenario + "'");
  ++calls_;
  return scripted_complete(request, *it->second);
}

// ---------------------------------------------------------------------------
// Replay store

ReplayStore::ReplayStore(std::filesystem::path path, bool read_only)
    : path_(std::move(path)), read_only_(read_only) {
  std::ifstream in(path_);
  if (!in) {
    if (read_only_) throw IoError("replay store not found: " + path_.string());
    return;
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      entries_.emplace(j.at("key").get<std::string>(), j.at("response").get<ChatResponse>());
    } catch (const json::exception& e) {
      throw SerializationError(path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::optional<ChatResponse> ReplayStore::find(const CacheKey& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key.hex());
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool ReplayStore::append(const ReplayRecord& record) {
  if (read_only_) throw IoError("replay store opened read-only");
  std::lock_guard lock(mu_);
  const std::string hex = record.key.hex();
  if (entries_.count(hex)) return false;
  json j = {{"key", hex}, {"request", record.request}, {"response", record.response}};
  std::string line = j.dump() + "\n";
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to replay store " + path_.string());
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.flush();
  if (!out) throw IoError("write failed on replay store " + path_.string());
  entries_.emplace(hex, record.response);
  return true;
}

std::size_t ReplayStore::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

CachingBackend::CachingBackend(std::shared_ptr<ReplayStore> store, std::shared_ptr<Backend> inner,
                               MissPolicy policy)
    : store_(std::move(store)), inner_(std::move(inner)), policy_(policy) {
  if (!store_) throw ConfigError("caching backend needs a replay store");
}

ChatResponse CachingBackend::complete(const ChatRequest& request) {
  request.validate();
  const CacheKey key = cache_key(request);
  if (auto hit = store_->find(key)) {
    ++hits_;
    return *hit;
  }
  if (!inner_) throw CacheMiss("no recorded response for key " + key.hex());
  if (!store_->read_only() || policy_ == MissPolicy::passthrough) {
    ++inner_calls_;
    ChatResponse response = inner_->complete(request);
    if (!store_->read_only() && response.finish_reason != FinishReason::error) {
      store_->append({key, request, response});
    }
    return response;
  }
  throw CacheMiss("no recorded response for key " + key.hex());
}

// ---------------------------------------------------------------------------
// Live backend

LiveConfig LiveConfig::from_environment(Budget budget) {
  LiveConfig cfg;
  const char* key = std::getenv("SABM_API_KEY");
  if (key == nullptr || *key == '\0') throw AuthError("SABM_API_KEY is not set");
  cfg.api_key = key;
  if (const char* base = std::getenv("SABM_API_BASE"); base != nullptr && *base != '\0') cfg.base_url = base;
  cfg.budget = budget;
  return cfg;
}

LiveBackend::LiveBackend(LiveConfig config, std::unique_ptr<HttpTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  if (config_.api_key.empty()) throw AuthError("live backend has no credential");
  if (config_.budget.max_calls == 0 || config_.budget.max_tokens == 0)
    throw ConfigError("live mode requires a call and token budget");
  if (!transport_) throw ConfigError("live backend has no transport");
  if (config_.max_attempts < 1) config_.max_attempts = 1;
  sleeper = [](int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); };
  while (!config_.base_url.empty() && config_.base_url.back() == '/') config_.base_url.pop_back();
}

std::uint64_t LiveBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::uint64_t LiveBackend::tokens() const {
  std::lock_guard lock(mu_);
  return tokens_;
}

ChatResponse LiveBackend::complete(const ChatRequest& request) {
  request.validate();
  {
    std::lock_guard lock(mu_);
    if (calls_ >= config_.budget.max_calls) throw BudgetExceeded("call budget exhausted");
    if (tokens_ >= config_.budget.max_tokens) throw BudgetExceeded("token budget exhausted");
    ++calls_;
  }

  json body = {{"model", request.settings.model_type},
               {"temperature", request.settings.temperature},
               {"max_tokens", request.settings.max_tokens}};
  body["messages"] = json::array();
  std::size_t prompt_chars = 0;
  for (const auto& m : request.messages) {
    body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
    prompt_chars += m.content.size();
  }
  const std::map<std::string, std::string> headers = {{"Authorization", "Bearer " + config_.api_key},
                                                      {"Content-Type", "application/json"}};
  const std::string payload = body.dump();

  std::string last_error;
  int delay = config_.backoff_initial_ms;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    HttpResult res = transport_->post(config_.base_url, "/v1/chat/completions", headers, payload);
    if (res.error.empty() && (res.status == 401 || res.status == 403)) {
      throw AuthError("provider rejected credential (HTTP " + std::to_string(res.status) + ")");
    }
    const bool transient = !res.error.empty() || res.status >= 500 || res.status == 429;
    if (!transient) {
      if (res.status < 200 || res.status >= 300) {
        throw ProviderError("provider returned HTTP " + std::to_string(res.status) + ": " + res.body);
      }
      ChatResponse out;
      std::uint64_t used = 0;
      try {
        const json j = json::parse(res.body);
        const auto& choice = j.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        out.content = content.is_string() ? content.get<std::string>() : std::string();
        out.finish_reason = finish_reason_from_string(choice.value("finish_reason", "stop"));
        if (j.contains("usage")) {
          Usage u{j["usage"].value("prompt_tokens", 0), j["usage"].value("completion_tokens", 0)};
          out.usage = u;
          used = static_cast<std::uint64_t>(u.prompt_tokens + u.completion_tokens);
        } else {
          used = prompt_chars / 4 + static_cast<std::uint64_t>(request.settings.max_tokens);
        }
      } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
      }
      std::lock_guard lock(mu_);
      tokens_ += used;
      return out;
    }
    last_error = res.error.empty() ? "HTTP " + std::to_string(res.status) : res.error;
    if (attempt < config_.max_attempts) {
      sleeper(delay);
      delay *= 2;
    }
  }
  throw TransportError("provider unreachable after " + std::to_string(config_.max_attempts) +
                       " attempts: " + last_error);
}

}  // namespace sabm
