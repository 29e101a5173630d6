#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace sabm {

enum class Role { system, user, assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct Message {
  Role role = Role::user;
  std::string content;

  bool operator==(const Message&) const = default;
};

struct LlmSettings {
  std::string model_type = "gpt-4-0613";
  double temperature = 0.7;
  int max_tokens = 128;

  void validate() const;
  bool operator==(const LlmSettings&) const = default;
};

struct ChatRequest {
  LlmSettings settings;
  std::vector<Message> messages;

  void validate() const;
  bool operator==(const ChatRequest&) const = default;
};

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason reason);
FinishReason finish_reason_from_string(std::string_view text);

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
  bool operator==(const Usage&) const = default;
};

struct ChatResponse {
  std::string content;
  FinishReason finish_reason = FinishReason::stop;
  std::optional<Usage> usage;

  bool operator==(const ChatResponse&) const = default;
};

void to_json(nlohmann::json& j, const LlmSettings& s);
void from_json(const nlohmann::json& j, LlmSettings& s);
void to_json(nlohmann::json& j, const ChatRequest& r);
void from_json(const nlohmann::json& j, ChatRequest& r);
void to_json(nlohmann::json& j, const ChatResponse& r);
void from_json(const nlohmann::json& j, ChatResponse& r);

// ---------------------------------------------------------------------------
// Cache keys

struct CacheKey {
  std::array<std::uint8_t, 32> digest{};

  std::string hex() const;
  static CacheKey from_hex(std::string_view hex);
  bool operator==(const CacheKey&) const = default;
  auto operator<=>(const CacheKey&) const = default;
};

/// Length-prefixed UTF-8 serialization of (model_type, temperature,
/// max_tokens, messages). Every field is written as an 8-byte big-endian
/// length followed by its bytes; temperature uses the shortest round-trip
/// decimal form so 0.7 and 0.70000000000000007 stay distinct only when the
/// doubles differ.
std::string canonical_serialization(const ChatRequest& request);

CacheKey cache_key(const ChatRequest& request);

std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// Backends

/// A chat-completion backend. Implementations are safe to share between
/// runs; any mutable bookkeeping is internally synchronized.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string name() const = 0;
};

/// Scripted stand-in for one scenario. Given the full request it returns
/// text in the exact format that scenario's parser expects.
class ScenarioOracle {
 public:
  virtual ~ScenarioOracle() = default;
  virtual std::string respond(const ChatRequest& request) const = 0;
};

/// Tag embedded in every scenario system message; the scripted backend uses
/// it to route a request to its oracle.
struct ScenarioTag {
  std::string scenario;
  std::string stage;
};

std::string make_system_message(const ScenarioTag& tag, std::string_view agent_id);
std::optional<ScenarioTag> parse_scenario_tag(const ChatRequest& request);

ChatResponse scripted_complete(const ChatRequest& request, const ScenarioOracle& oracle);

class ScriptedBackend final : public Backend {
 public:
  void register_oracle(std::string scenario, std::shared_ptr<const ScenarioOracle> oracle);

  ChatResponse complete(const ChatRequest& request) override;
  std::string name() const override { return "scripted"; }

  std::uint64_t calls() const { return calls_.load(); }

 private:
  std::map<std::string, std::shared_ptr<const ScenarioOracle>> oracles_;
  std::atomic<std::uint64_t> calls_{0};
};

struct ReplayRecord {
  CacheKey key;
  ChatRequest request;
  ChatResponse response;
};

/// JSON Lines store of (key, request, response). Readers may run
/// concurrently; appends are serialized by a mutex and written with a single
/// write per record so concurrent processes interleave at line granularity.
class ReplayStore {
 public:
  explicit ReplayStore(std::filesystem::path path, bool read_only = false);

  std::optional<ChatResponse> find(const CacheKey& key) const;
  /// Appends unless the key is already present. Returns true when written.
  bool append(const ReplayRecord& record);

  std::size_t size() const;
  bool read_only() const { return read_only_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  bool read_only_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, ChatResponse> entries_;
};

enum class MissPolicy { strict, passthrough };

/// Record/replay wrapper. With an inner backend it records every miss
/// (record mode); without one it only replays and throws CacheMiss.
class CachingBackend final : public Backend {
 public:
  CachingBackend(std::shared_ptr<ReplayStore> store, std::shared_ptr<Backend> inner,
                 MissPolicy policy = MissPolicy::strict);

  ChatResponse complete(const ChatRequest& request) override;
  std::string name() const override { return inner_ ? "record" : "replay"; }

  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t inner_calls() const { return inner_calls_.load(); }

 private:
  std::shared_ptr<ReplayStore> store_;
  std::shared_ptr<Backend> inner_;
  MissPolicy policy_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> inner_calls_{0};
};

/// Call and token ceilings. Live mode refuses to start without one.
struct Budget {
  std::uint64_t max_calls = 0;
  std::uint64_t max_tokens = 0;
};

struct HttpResult {
  int status = 0;
  std::string body;
  std::string error;  // non-empty when the transport itself failed
};

/// Minimal POST transport so the live backend can be exercised without a
/// network in tests.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post(const std::string& base_url, const std::string& path,
                          const std::map<std::string, std::string>& headers,
                          const std::string& body) = 0;
};

std::unique_ptr<HttpTransport> make_httplib_transport(int timeout_seconds = 60);

struct LiveConfig {
  std::string base_url = "https://api.openai.com";
  std::string api_key;
  Budget budget;
  int max_attempts = 3;
  int backoff_initial_ms = 500;

  /// Reads SABM_API_KEY and SABM_API_BASE. Throws AuthError when the key is
  /// missing or empty.
  static LiveConfig from_environment(Budget budget);
};

class LiveBackend final : public Backend {
 public:
  LiveBackend(LiveConfig config, std::unique_ptr<HttpTransport> transport);

  ChatResponse complete(const ChatRequest& request) override;
  std::string name() const override { return "live"; }

  std::uint64_t calls() const;
  std::uint64_t tokens() const;

  /// Overridable so tests do not sleep.
  std::function<void(int ms)> sleeper;

 private:
  LiveConfig config_;
  std::unique_ptr<HttpTransport> transport_;
  mutable std::mutex mu_;
  std::uint64_t calls_ = 0;
  std::uint64_t tokens_ = 0;
};

}  // namespace sabm
