#include "sabm/runtime.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sabm/analysis.hpp"
#include "sabm/error.hpp"

namespace sabm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw SerializationError("bad rng value '" + s + "'");
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunContext

RunContext::RunContext(std::string run_id, std::string scenario, std::uint64_t seed, EventLog& log,
                       Backend& backend)
    : run_id_(std::move(run_id)), scenario_(std::move(scenario)), log_(log), backend_(backend), rng_(seed) {}

const EventRecord& RunContext::record(EventKind kind, json payload, std::string agent_id,
                                      std::string prompt_digest) {
  EventRecord rec;
  rec.run_id = run_id_;
  rec.round = round_;
  rec.stage = stage_;
  rec.agent_id = std::move(agent_id);
  rec.kind = kind;
  rec.payload = std::move(payload);
  rec.prompt_digest = std::move(prompt_digest);
  return log_.append(std::move(rec));
}

ChatResponse RunContext::complete(const ChatRequest& request, const std::string& agent_id) {
  request.validate();
  const std::string digest = cache_key(request).hex();
  last_prompt_seq_ = record(EventKind::prompt, json{{"request", request}}, agent_id, digest).seq;
  ChatResponse response = backend_.complete(request);
  ++provider_calls_;
  record(EventKind::response, json{{"response", response}}, agent_id, digest);
  return response;
}

std::uint64_t RunContext::draw(std::string_view purpose) {
  std::uint64_t raw = rng_.next_u64();
  if (tape_) {
    if (tape_->empty()) throw SerializationError("rng tape exhausted at purpose '" + std::string(purpose) + "'");
    const TapeEntry entry = std::move(tape_->front());
    tape_->pop_front();
    if (entry.purpose != purpose) {
      throw SerializationError("rng tape purpose mismatch: expected '" + entry.purpose + "', run asked for '" +
                               std::string(purpose) + "'");
    }
    raw = entry.raw;
  }
  record(EventKind::rng, json{{"purpose", purpose}, {"counter", rng_.counter()}, {"raw", hex64(raw)}});
  return raw;
}

std::uint64_t RunContext::below(std::uint64_t n, std::string_view purpose) {
  if (n == 0) throw DomainError("below(0)");
  return to_below(draw(purpose), n);
}

double RunContext::normal(double mean, double sd, std::string_view purpose) {
  const std::uint64_t a = draw(purpose);
  const std::uint64_t b = draw(purpose);
  return mean + sd * to_standard_normal(a, b);
}

void RunContext::set_rng_tape(std::vector<TapeEntry> tape) {
  tape_.emplace(std::make_move_iterator(tape.begin()), std::make_move_iterator(tape.end()));
}

std::vector<RunContext::TapeEntry> rng_tape_from_log(const std::vector<EventRecord>& records) {
  std::vector<RunContext::TapeEntry> out;
  for (const auto& rec : records) {
    if (rec.kind != EventKind::rng) continue;
    out.push_back({rec.payload.at("purpose").get<std::string>(), parse_hex64(rec.payload.at("raw").get<std::string>())});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conversation

Transcript heard_by(const Transcript& transcript, const std::string& hearer) {
  Transcript out;
  for (const auto& u : transcript) {
    if (std::find(u.audience.begin(), u.audience.end(), hearer) != u.audience.end()) out.push_back(u);
  }
  return out;
}

Transcript mediate_conversation(const std::vector<std::string>& participants, const ConversationPolicy& policy,
                                RunContext& ctx, const SpeakFn& speak, const TurnHook& after_turn) {
  std::vector<std::string> order = participants;
  if (policy.order == SpeakingOrder::random) ctx.shuffle(order, "conversation.order");

  Transcript transcript;
  int turn = 0;
  for (int pass = 0; pass < policy.max_utterances_per_speaker; ++pass) {
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::string& speaker = order[pos];
      bool eligible = policy.speak_probability >= 1.0;
      if (policy.speak_probability > 0.0 && policy.speak_probability < 1.0) {
        eligible = ctx.bernoulli(policy.speak_probability, "conversation.speak");
      }
      if (eligible) {
        if (auto text = speak(speaker, heard_by(transcript, speaker)); text && !text->empty()) {
          Utterance u;
          u.turn = turn++;
          u.speaker = speaker;
          u.text = *text;
          const std::size_t first = policy.later_turns_only ? pos + 1 : 0;
          for (std::size_t h = first; h < order.size(); ++h) {
            if (h == pos) continue;
            if (policy.audience && !policy.audience(speaker, order[h])) continue;
            u.audience.push_back(order[h]);
          }
          ctx.record(EventKind::world,
                     json{{"event", "utterance"}, {"turn", u.turn}, {"text", u.text}, {"audience", u.audience}},
                     speaker);
          transcript.push_back(std::move(u));
        }
      }
      if (pass == 0 && after_turn) after_turn(speaker, heard_by(transcript, speaker));
    }
  }
  return transcript;
}

// ---------------------------------------------------------------------------
// Exit conditions

ExitSpec ExitSpec::max_iterations(int rounds) {
  ExitSpec s;
  s.kind = Kind::max_iterations;
  s.max_rounds = rounds;
  return s;
}

ExitSpec ExitSpec::endpoint() {
  ExitSpec s;
  s.kind = Kind::endpoint_predicate;
  return s;
}

ExitSpec ExitSpec::convergence(std::vector<std::string> series, double p_monopoly, double p_bertrand,
                               std::size_t span, double theta) {
  ExitSpec s;
  s.kind = Kind::convergence;
  s.series = std::move(series);
  s.p_monopoly = p_monopoly;
  s.p_bertrand = p_bertrand;
  s.span = span;
  s.theta = theta;
  return s;
}

ExitSpec ExitSpec::oscillation(std::vector<std::string> series, double bound, std::size_t span) {
  ExitSpec s;
  s.kind = Kind::bounded_oscillation;
  s.series = std::move(series);
  s.bound = bound;
  s.span = span;
  return s;
}

ExitSpec ExitSpec::composite(std::vector<ExitSpec> children) {
  if (children.empty()) throw ConfigError("composite exit spec needs at least one child");
  ExitSpec s;
  s.kind = Kind::composite_any;
  s.any = std::move(children);
  return s;
}

namespace {

std::span<const double> lookup(const SeriesRegistry& reg, const std::string& name) {
  auto it = reg.find(name);
  if (it == reg.end()) throw UnknownSeries("unknown series '" + name + "'");
  return it->second;
}

std::optional<ExitReason> check_one(int round, const std::optional<std::string>& endpoint, const ExitSpec& spec,
                                    const SeriesRegistry& series) {
  switch (spec.kind) {
    case ExitSpec::Kind::max_iterations:
      if (round >= spec.max_rounds) return ExitReason{"round_cap", json{{"max_rounds", spec.max_rounds}}};
      return std::nullopt;
    case ExitSpec::Kind::endpoint_predicate:
      if (endpoint) return ExitReason{"endpoint", json{{"message", *endpoint}}};
      return std::nullopt;
    case ExitSpec::Kind::convergence:
    case ExitSpec::Kind::bounded_oscillation: {
      if (spec.series.empty()) throw ConfigError("detector exit spec lists no series");
      const bool conv = spec.kind == ExitSpec::Kind::convergence;
      json detail = json::object();
      for (const auto& name : spec.series) {
        const auto values = lookup(series, name);
        const DetectorVerdict v = conv ? converged(values, spec.p_monopoly, spec.p_bertrand, spec.span, spec.theta)
                                       : bounded_oscillation(values, spec.bound, spec.span);
        if (!v.fired) return std::nullopt;
        detail[name] = {{conv ? "p" : "width", *v.detail}, {"window", {v.window_start, v.window_end}}};
      }
      return ExitReason{conv ? "convergence" : "bounded_oscillation", detail};
    }
    case ExitSpec::Kind::composite_any:
      for (const auto& child : spec.any) {
        if (auto r = check_one(round, endpoint, child, series)) return r;
      }
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

std::optional<ExitReason> check_exit(int round, const std::optional<std::string>& endpoint,
                                     const std::vector<ExitSpec>& specs, const SeriesRegistry& series) {
  for (const auto& spec : specs) {
    if (auto r = check_one(round, endpoint, spec, series)) return r;
  }
  return std::nullopt;
}

std::vector<ExitSpec> Scenario::exit_specs(int max_rounds) const {
  return {ExitSpec::endpoint(), ExitSpec::max_iterations(max_rounds)};
}

json to_json_value(const ProbeReport& report) {
  json entries = json::array();
  for (const auto& e : report.entries) {
    json j = {{"stage", e.stage}, {"prompt", e.prompt}, {"raw", e.raw}, {"parsed", e.parsed}};
    if (!e.explanation.empty()) j["explanation"] = e.explanation;
    entries.push_back(std::move(j));
  }
  return {{"scenario", report.scenario}, {"entries", entries}, {"summary", report.summary}};
}

// ---------------------------------------------------------------------------
// Registry and config

void ScenarioRegistry::add(std::string name, ScenarioFactory factory) {
  factories_[std::move(name)] = std::move(factory);
}

std::unique_ptr<Scenario> ScenarioRegistry::make(const std::string& name, const json& params,
                                                 const TemplateRegistry& templates) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) throw ConfigError("unknown scenario '" + name + "'");
  return it->second(params, templates);
}

std::string RunConfig::effective_run_id() const {
  return run_id.empty() ? scenario + "-s" + std::to_string(seed) : run_id;
}

void RunConfig::validate() const {
  if (scenario.empty()) throw ConfigError("scenario not set");
  if (max_rounds < 0) throw ConfigError("max_rounds must be >= 1");
  if (provider_mode != "live" && provider_mode != "scripted" && provider_mode != "record" &&
      provider_mode != "replay") {
    throw ConfigError("unknown provider mode '" + provider_mode + "'");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!scenario_params.is_object()) throw ConfigError("scenario params must be an object");
}

json to_json_value(const RunConfig& c) {
  return {{"scenario", c.scenario},
          {"seed", c.seed},
          {"provider_mode", c.provider_mode},
          {"max_rounds", c.max_rounds},
          {"scenario_params", c.scenario_params},
          {"output_dir", c.output_dir.string()},
          {"run_id", c.run_id},
          {"checkpoint_every", c.checkpoint_every},
          {"export_results", c.export_results}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.scenario = j.at("scenario").get<std::string>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.provider_mode = j.value("provider_mode", std::string("scripted"));
  c.max_rounds = j.value("max_rounds", 0);
  c.scenario_params = j.value("scenario_params", json::object());
  c.output_dir = j.value("output_dir", std::string("out"));
  c.run_id = j.value("run_id", std::string());
  c.checkpoint_every = j.value("checkpoint_every", 100);
  c.export_results = j.value("export_results", false);
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

void checkpoint_save(const Checkpoint& ck, const fs::path& path) {
  json j = {{"schema", ck.schema},
            {"run_id", ck.config.effective_run_id()},
            {"scenario", ck.config.scenario},
            {"round", ck.round},
            {"rng", {{"seed", ck.rng_seed}, {"counter", ck.rng_counter}}},
            {"log", {{"next_seq", ck.log_next_seq}, {"bytes", ck.log_bytes}, {"path", ck.log_path.string()}}},
            {"config", to_json_value(ck.config)},
            {"state", ck.state}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed on checkpoint " + path.string());
}

Checkpoint checkpoint_load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SerializationError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  const std::string schema = j.value("schema", "");
  if (schema != kCheckpointSchema) {
    throw VersionMismatch("checkpoint schema '" + schema + "' is not " + kCheckpointSchema);
  }
  try {
    Checkpoint ck;
    ck.schema = schema;
    ck.config = run_config_from_json(j.at("config"));
    ck.round = j.at("round").get<int>();
    ck.rng_seed = j.at("rng").at("seed").get<std::uint64_t>();
    ck.rng_counter = j.at("rng").at("counter").get<std::uint64_t>();
    ck.log_next_seq = j.at("log").at("next_seq").get<std::uint64_t>();
    ck.log_bytes = j.at("log").at("bytes").get<std::uint64_t>();
    ck.log_path = j.at("log").at("path").get<std::string>();
    ck.state = j.at("state");
    return ck;
  } catch (const json::exception& e) {
    throw SerializationError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// run

namespace {

std::string read_prefix(const fs::path& path, std::uint64_t bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read event log " + path.string());
  std::string data(bytes, '\0');
  in.read(data.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::uint64_t>(in.gcount()) != bytes) {
    throw SerializationError("event log " + path.string() + " is shorter than the checkpoint cursor");
  }
  return data;
}

struct RoundSnapshot {
  int round = 0;
  json state;
  std::uint64_t rng_counter = 0;
  std::uint64_t log_seq = 0;
  std::uint64_t log_bytes = 0;
};

}  // namespace

RunResult run(const RunConfig& config, Backend& backend, const ScenarioRegistry& scenarios,
              const TemplateRegistry& templates) {
  config.validate();
  auto scenario = scenarios.make(config.scenario, config.scenario_params, templates);
  const int max_rounds = config.max_rounds > 0 ? config.max_rounds : scenario->default_max_rounds();

  RunResult result;
  result.run_id = config.effective_run_id();
  fs::create_directories(config.output_dir);
  const std::string stem = "run-" + result.run_id;
  result.log_path = config.output_dir / (stem + ".jsonl");
  result.metrics_path = config.output_dir / (stem + ".metrics.json");

  std::optional<Checkpoint> resumed;
  std::string prefix;
  if (config.resume_from) {
    resumed = checkpoint_load(*config.resume_from);
    if (resumed->config.scenario != config.scenario) {
      throw ConfigError("checkpoint belongs to scenario '" + resumed->config.scenario + "'");
    }
    fs::path src = resumed->log_path;
    if (src.is_relative()) src = config.resume_from->parent_path() / src;
    prefix = read_prefix(src, resumed->log_bytes);
  }

  std::vector<RunContext::TapeEntry> tape;
  const bool use_tape = config.rng_tape_log.has_value();
  if (use_tape) tape = rng_tape_from_log(EventLog::read_file(*config.rng_tape_log));

  EventLog log(result.log_path);
  RunContext ctx(result.run_id, config.scenario, config.seed, log, backend);

  int first_round = 1;
  if (resumed) {
    {
      std::ofstream out(result.log_path, std::ios::binary | std::ios::trunc);
      out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
      if (!out) throw IoError("cannot write event log " + result.log_path.string());
    }
    log.resume_from(resumed->log_next_seq, resumed->round, resumed->log_bytes);
    ctx.restore_rng(resumed->rng_seed, resumed->rng_counter);
    scenario->load_state(resumed->state);
    first_round = resumed->round + 1;
    if (use_tape) {
      const auto skip = std::min<std::size_t>(tape.size(), resumed->rng_counter);
      tape.erase(tape.begin(), tape.begin() + static_cast<std::ptrdiff_t>(skip));
    }
  }
  if (use_tape) ctx.set_rng_tape(std::move(tape));

  auto write_checkpoint = [&](const RoundSnapshot& snap) {
    Checkpoint ck;
    ck.config = config;
    ck.config.resume_from.reset();
    ck.config.rng_tape_log.reset();
    ck.round = snap.round;
    ck.rng_seed = config.seed;
    ck.rng_counter = snap.rng_counter;
    ck.log_next_seq = snap.log_seq;
    ck.log_bytes = snap.log_bytes;
    ck.log_path = result.log_path.filename();
    ck.state = snap.state;
    const fs::path path = config.output_dir / (stem + ".ckpt-" + std::to_string(snap.round));
    checkpoint_save(ck, path);
    return path;
  };

  const auto specs = scenario->exit_specs(max_rounds);
  int round = first_round - 1;
  try {
    if (!resumed) {
      ctx.set_round(0);
      ctx.set_stage("init");
      ctx.record(EventKind::world, json{{"event", "run_start"},
                                        {"scenario", config.scenario},
                                        {"seed", config.seed},
                                        {"max_rounds", max_rounds},
                                        {"params", config.scenario_params}});
      scenario->init(ctx);
    }
    RoundSnapshot snap;
    for (round = first_round; round <= max_rounds; ++round) {
      // Round-start snapshot backs the abort checkpoint.
      snap = {round - 1, scenario->save_state(), ctx.rng().counter(), log.next_seq(), log.bytes_written()};
      ctx.set_round(round);
      try {
        scenario->step(ctx);
      } catch (const Error& e) {
        log.flush();
        const fs::path path = write_checkpoint(snap);
        result.aborted = true;
        result.error = e.what();
        result.exit_reason = {"aborted", json{{"error", e.what()}, {"checkpoint", path.filename().string()}}};
        result.rounds = round - 1;
        break;
      }
      ctx.set_stage("exit");
      auto reason = check_exit(round, scenario->endpoint(), specs, scenario->series());
      if (reason) {
        ctx.record(EventKind::detector, json{{"exit", reason->kind}, {"detail", reason->detail}});
        result.exit_reason = *reason;
        result.rounds = round;
        break;
      }
      if (config.checkpoint_every > 0 && round % config.checkpoint_every == 0) {
        const std::string file = stem + ".ckpt-" + std::to_string(round);
        ctx.record(EventKind::checkpoint, json{{"file", file}});
        log.flush();
        write_checkpoint({round, scenario->save_state(), ctx.rng().counter(), log.next_seq(), log.bytes_written()});
      }
    }
    if (result.exit_reason.kind.empty()) {
      result.exit_reason = {"round_cap", json{{"max_rounds", max_rounds}}};
      result.rounds = max_rounds;
    }
  } catch (const Error& e) {
    // Failures outside a round (init, exit evaluation).
    result.aborted = true;
    result.error = e.what();
    result.exit_reason = {"aborted", json{{"error", e.what()}}};
    result.rounds = std::max(0, round - 1);
  }
  log.flush();

  result.provider_calls = ctx.provider_calls();
  result.metrics = scenario->metrics();
  json summary = {{"run_id", result.run_id},
                  {"scenario", config.scenario},
                  {"seed", config.seed},
                  {"rounds", result.rounds},
                  {"exit_reason", {{"kind", result.exit_reason.kind}, {"detail", result.exit_reason.detail}}},
                  {"provider_calls", result.provider_calls},
                  {"metrics", result.metrics}};
  {
    std::ofstream out(result.metrics_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write metrics " + result.metrics_path.string());
    out << summary.dump(2) << '\n';
  }
  if (config.export_results && !result.aborted) {
    result.exports = scenario->export_results(config.output_dir, result.run_id);
  }
  return result;
}

ProbeReport probe(const std::string& scenario_name, const json& params, const json& agent_spec,
                  const json& observations, Backend& backend, const ScenarioRegistry& scenarios,
                  const TemplateRegistry& templates, std::uint64_t seed) {
  auto scenario = scenarios.make(scenario_name, params, templates);
  EventLog log;
  RunContext ctx("probe-" + scenario_name, scenario_name, seed, log, backend);
  ctx.set_stage("probe");
  ProbeReport report = scenario->probe(agent_spec, observations, ctx);
  report.scenario = scenario_name;
  return report;
}

}  // namespace sabm
