#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sabm/event_log.hpp"
#include "sabm/promptkit.hpp"
#include "sabm/provider.hpp"
#include "sabm/rng.hpp"

namespace sabm {

/// Per-run services: the journal, the single RNG stream and the backend.
/// Every provider call and every random draw passes through here so that
/// the event log fully describes the run.
class RunContext {
 public:
  RunContext(std::string run_id, std::string scenario, std::uint64_t seed, EventLog& log, Backend& backend);

  const std::string& run_id() const { return run_id_; }
  const std::string& scenario() const { return scenario_; }
  int round() const { return round_; }
  void set_round(int round) { round_ = round; }
  const std::string& stage() const { return stage_; }
  void set_stage(std::string stage) { stage_ = std::move(stage); }

  EventLog& log() { return log_; }
  Backend& backend() { return backend_; }

  const EventRecord& record(EventKind kind, nlohmann::json payload, std::string agent_id = {},
                            std::string prompt_digest = {});

  /// Journals the request (kind=prompt) and the reply (kind=response).
  ChatResponse complete(const ChatRequest& request, const std::string& agent_id);
  std::uint64_t provider_calls() const { return provider_calls_; }
  /// Sequence number of the most recent prompt record.
  std::uint64_t last_prompt_seq() const { return last_prompt_seq_; }

  // Random draws. Each raw 64-bit draw is journaled with its purpose.
  std::uint64_t draw(std::string_view purpose);
  double uniform(std::string_view purpose) { return to_unit(draw(purpose)); }
  std::uint64_t below(std::uint64_t n, std::string_view purpose);
  bool bernoulli(double p, std::string_view purpose) { return uniform(purpose) < p; }
  double normal(double mean, double sd, std::string_view purpose);

  template <typename T>
  void shuffle(std::vector<T>& items, std::string_view purpose) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i, purpose));
      std::swap(items[i - 1], items[j]);
    }
  }

  const CounterRng& rng() const { return rng_; }
  void restore_rng(std::uint64_t seed, std::uint64_t counter) { rng_ = CounterRng(seed, counter); }

  struct TapeEntry {
    std::string purpose;
    std::uint64_t raw = 0;
  };
  /// Replay draws from a recorded journal instead of the generator.
  void set_rng_tape(std::vector<TapeEntry> tape);

 private:
  std::string run_id_;
  std::string scenario_;
  EventLog& log_;
  Backend& backend_;
  CounterRng rng_;
  int round_ = 0;
  std::string stage_ = "init";
  std::uint64_t provider_calls_ = 0;
  std::uint64_t last_prompt_seq_ = 0;
  std::optional<std::deque<TapeEntry>> tape_;
};

/// Extracts the rng records of a journal as a replay tape.
std::vector<RunContext::TapeEntry> rng_tape_from_log(const std::vector<EventRecord>& records);

// ---------------------------------------------------------------------------
// Conversation mediation

struct Utterance {
  int turn = 0;
  std::string speaker;
  std::string text;
  std::vector<std::string> audience;
};

using Transcript = std::vector<Utterance>;

enum class SpeakingOrder { fixed, random };

struct ConversationPolicy {
  double speak_probability = 1.0;
  int max_utterances_per_speaker = 1;
  SpeakingOrder order = SpeakingOrder::fixed;
  /// Deliver only to participants whose turn comes later in this round.
  bool later_turns_only = false;
  /// Audience rule; empty means everyone else.
  std::function<bool(const std::string& speaker, const std::string& hearer)> audience;
};

/// Returns the text to say, or nullopt to stay silent.
using SpeakFn = std::function<std::optional<std::string>(const std::string& speaker, const Transcript& heard)>;
/// Called once per participant in turn order after its first speaking slot,
/// with everything delivered to it so far.
using TurnHook = std::function<void(const std::string& participant, const Transcript& heard)>;

Transcript mediate_conversation(const std::vector<std::string>& participants, const ConversationPolicy& policy,
                                RunContext& ctx, const SpeakFn& speak, const TurnHook& after_turn = {});

/// Utterances of `transcript` whose audience includes `hearer`.
Transcript heard_by(const Transcript& transcript, const std::string& hearer);

// ---------------------------------------------------------------------------
// Scenarios, exit conditions and runs

using SeriesRegistry = std::map<std::string, std::span<const double>>;

struct ExitSpec {
  enum class Kind { max_iterations, endpoint_predicate, convergence, bounded_oscillation, composite_any };
  Kind kind = Kind::max_iterations;
  int max_rounds = 0;
  std::vector<std::string> series;  // detector fires only if it fires on every listed series
  double p_monopoly = 0.0;
  double p_bertrand = 0.0;
  std::size_t span = 0;
  double theta = 0.01;
  double bound = 0.0;
  std::vector<ExitSpec> any;

  static ExitSpec max_iterations(int rounds);
  static ExitSpec endpoint();
  static ExitSpec convergence(std::vector<std::string> series, double p_monopoly, double p_bertrand,
                              std::size_t span = 400, double theta = 0.01);
  static ExitSpec oscillation(std::vector<std::string> series, double bound, std::size_t span = 800);
  static ExitSpec composite(std::vector<ExitSpec> children);
};

struct ExitReason {
  std::string kind;  // round_cap, endpoint, convergence, bounded_oscillation
  nlohmann::json detail = nlohmann::json::object();
};

/// First satisfied spec in declaration order.
std::optional<ExitReason> check_exit(int round, const std::optional<std::string>& endpoint,
                                     const std::vector<ExitSpec>& specs, const SeriesRegistry& series);

struct ProbeEntry {
  std::string stage;
  std::string prompt;
  std::string raw;
  nlohmann::json parsed;
  std::string explanation;
};

struct ProbeReport {
  std::string scenario;
  std::vector<ProbeEntry> entries;
  nlohmann::json summary = nlohmann::json::object();
};

nlohmann::json to_json_value(const ProbeReport& report);

class Scenario {
 public:
  virtual ~Scenario() = default;

  virtual std::string name() const = 0;
  virtual std::vector<std::string> stages() const = 0;
  virtual int default_max_rounds() const = 0;
  virtual void init(RunContext& ctx) = 0;
  /// Plays round ctx.round().
  virtual void step(RunContext& ctx) = 0;

  virtual std::optional<std::string> endpoint() const { return std::nullopt; }
  virtual SeriesRegistry series() const { return {}; }
  virtual std::vector<ExitSpec> exit_specs(int max_rounds) const;

  virtual nlohmann::json metrics() const = 0;
  virtual nlohmann::json save_state() const = 0;
  virtual void load_state(const nlohmann::json& state) = 0;

  /// Single-agent harness: one agent against injected observations.
  virtual ProbeReport probe(const nlohmann::json& agent_spec, const nlohmann::json& observations,
                            RunContext& ctx) = 0;

  /// Scenario-specific CSV/SVG exports into `dir`. Returns written files.
  virtual std::vector<std::filesystem::path> export_results(const std::filesystem::path& dir,
                                                            const std::string& run_id) const {
    (void)dir;
    (void)run_id;
    return {};
  }
};

using ScenarioFactory =
    std::function<std::unique_ptr<Scenario>(const nlohmann::json& params, const TemplateRegistry& templates)>;

class ScenarioRegistry {
 public:
  void add(std::string name, ScenarioFactory factory);
  std::unique_ptr<Scenario> make(const std::string& name, const nlohmann::json& params,
                                 const TemplateRegistry& templates) const;
  bool contains(const std::string& name) const { return factories_.count(name) > 0; }

 private:
  std::map<std::string, ScenarioFactory> factories_;
};

struct RunConfig {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string provider_mode = "scripted";
  int max_rounds = 0;  // 0 selects the scenario default
  nlohmann::json scenario_params = nlohmann::json::object();
  std::filesystem::path output_dir = "out";
  std::string run_id;         // empty: "{scenario}-s{seed}"
  int checkpoint_every = 100;  // 0 disables periodic checkpoints
  std::optional<std::filesystem::path> resume_from;
  std::optional<std::filesystem::path> rng_tape_log;
  bool export_results = false;

  std::string effective_run_id() const;
  void validate() const;
};

nlohmann::json to_json_value(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

struct RunResult {
  std::string run_id;
  ExitReason exit_reason;
  int rounds = 0;
  bool aborted = false;
  std::string error;
  nlohmann::json metrics;
  std::filesystem::path log_path;
  std::filesystem::path metrics_path;
  std::vector<std::filesystem::path> exports;
  std::uint64_t provider_calls = 0;
};

inline constexpr const char* kCheckpointSchema = "sabm.checkpoint.v1";

struct Checkpoint {
  std::string schema = kCheckpointSchema;
  RunConfig config;
  int round = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  std::uint64_t log_next_seq = 0;
  std::uint64_t log_bytes = 0;
  std::filesystem::path log_path;
  nlohmann::json state;
};

void checkpoint_save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint checkpoint_load(const std::filesystem::path& path);

RunResult run(const RunConfig& config, Backend& backend, const ScenarioRegistry& scenarios,
              const TemplateRegistry& templates);

ProbeReport probe(const std::string& scenario, const nlohmann::json& params, const nlohmann::json& agent_spec,
                  const nlohmann::json& observations, Backend& backend, const ScenarioRegistry& scenarios,
                  const TemplateRegistry& templates, std::uint64_t seed = 0);

}  // namespace sabm
