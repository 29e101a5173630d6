#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "sabm/analysis.hpp"
#include "sabm/error.hpp"
#include "sabm/event_log.hpp"
#include "sabm/log_analysis.hpp"
#include "sabm/provider.hpp"
#include "sabm/runtime.hpp"
#include "sabm/scenarios/all.hpp"
#include "sabm/scenarios/common.hpp"

namespace sabm::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct Options {
  std::string scenario;
  std::string provider = "scripted";
  std::uint64_t seed = 1;
  int rounds = 0;
  std::string out = "out";
  int jobs = 1;
  std::uint64_t budget_calls = 0;
  std::uint64_t budget_tokens = 0;
  std::string cache;
  std::string record_inner = "live";
  std::vector<std::string> params;
  std::string params_file;
  std::vector<std::string> variants;
  std::optional<int> target;
  int checkpoint_every = 100;
  std::string run_id;
  bool export_results = false;
};

void add_provider_options(CLI::App* sub, Options& o) {
  sub->add_option("--provider", o.provider, "live, scripted, record or replay")
      ->check(CLI::IsMember({"live", "scripted", "record", "replay"}));
  sub->add_option("--budget-calls", o.budget_calls, "Maximum provider calls (live and record modes)");
  sub->add_option("--budget-tokens", o.budget_tokens, "Maximum tokens (live and record modes)");
  sub->add_option("--cache", o.cache, "Record/replay store (default: <out>/cache.jsonl)");
  sub->add_option("--record-inner", o.record_inner, "Backend wrapped in record mode")
      ->check(CLI::IsMember({"live", "scripted"}));
}

void add_scenario_options(CLI::App* sub, Options& o, bool need_scenario = true) {
  auto* s = sub->add_option("--scenario", o.scenario, "guess, firm, evac or plea");
  if (need_scenario) s->required();
  sub->add_option("--seed", o.seed, "Run seed");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--param", o.params, "Scenario parameter key=value (dotted keys nest, values parsed as JSON)");
  sub->add_option("--params-file", o.params_file, "JSON object of scenario parameters");
  sub->add_option("--variant", o.variants, "Prompt alteration base:kind:variant");
  sub->add_option("--target", o.target, "Guess scenario: the number to find");
}

void add_run_options(CLI::App* sub, Options& o) {
  sub->add_option("--rounds", o.rounds, "Round cap (0: scenario default)");
  sub->add_option("--checkpoint-every", o.checkpoint_every, "Checkpoint period in rounds (0 disables)");
  sub->add_option("--run-id", o.run_id, "Run id (default: <scenario>-s<seed>)");
  sub->add_flag("--export", o.export_results, "Write scenario CSV/SVG exports");
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("bad JSON in " + path + ": " + e.what());
  }
}

/// Inline JSON or @file.
json json_argument(const std::string& text) {
  if (text.empty()) return json::object();
  if (text[0] == '@') return load_json_file(text.substr(1));
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError("bad JSON argument: " + std::string(e.what()));
  }
}

json scenario_params(const Options& o) {
  json p = o.params_file.empty() ? json::object() : load_json_file(o.params_file);
  if (!p.is_object()) throw UsageError("params file must hold a JSON object");
  for (const auto& kv : o.params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--param expects key=value, got '" + kv + "'");
    json* node = &p;
    std::string key = kv.substr(0, eq);
    for (std::size_t dot; (dot = key.find('.')) != std::string::npos;) {
      node = &(*node)[key.substr(0, dot)];
      if (!node->is_object()) *node = json::object();
      key = key.substr(dot + 1);
    }
    (*node)[key] = parse_value(kv.substr(eq + 1));
  }
  if (o.target) p["target"] = *o.target;
  if (!o.variants.empty()) {
    json& list = p["variants"];
    if (!list.is_array()) list = json::array();
    for (const auto& v : o.variants) {
      VariantSelection::parse(v);
      list.push_back(v);
    }
  }
  return p;
}

std::string cache_path(const Options& o) { return o.cache.empty() ? (fs::path(o.out) / "cache.jsonl").string() : o.cache; }

std::shared_ptr<Backend> make_backend(const Options& o, const json& params) {
  const Budget budget{o.budget_calls, o.budget_tokens};
  auto live = [&]() -> std::shared_ptr<Backend> {
    return std::make_shared<LiveBackend>(LiveConfig::from_environment(budget), make_httplib_transport());
  };
  const json firm_params = params.is_object() ? params : json::object();
  if (o.provider == "scripted") return make_scripted_backend(firm_params);
  if (o.provider == "live") return live();
  if (o.provider == "record") {
    std::shared_ptr<Backend> inner =
        o.record_inner == "scripted" ? std::shared_ptr<Backend>(make_scripted_backend(firm_params)) : live();
    return std::make_shared<CachingBackend>(std::make_shared<ReplayStore>(cache_path(o)), inner);
  }
  return std::make_shared<CachingBackend>(std::make_shared<ReplayStore>(cache_path(o), true), nullptr);
}

RunConfig run_config(const Options& o, const json& params) {
  RunConfig c;
  c.scenario = o.scenario;
  c.seed = o.seed;
  c.provider_mode = o.provider;
  c.max_rounds = o.rounds;
  c.scenario_params = params;
  c.output_dir = o.out;
  c.run_id = o.run_id;
  c.checkpoint_every = o.checkpoint_every;
  c.export_results = o.export_results;
  return c;
}

std::string headline(const std::string& scenario, const json& m) {
  std::ostringstream s;
  if (scenario == "firm" && m.contains("firm1")) {
    for (const char* k : {"firm1", "firm2"}) {
      const json& f = m[k];
      if (!f.contains("final_price")) continue;
      s << k << ": final price " << format_fixed(f["final_price"].get<double>())
        << ", mean of last 50 " << format_fixed(f["mean_price_last50"].get<double>())
        << (f.value("converged", false) ? ", converged" : "") << "\n";
    }
  } else if (scenario == "guess") {
    s << "guesses:";
    for (const auto& g : m["guesses"]) s << ' ' << g.get<int>();
    s << " (" << m["guess_count"].get<int>() << " guesses, target " << m["target"].dump() << ")\n";
  } else if (scenario == "evac") {
    s << "escaped " << m["escaped"].get<int>() << " of " << m["n_agents"].get<int>() << ", disabled "
      << m["disabled"].get<int>() << ", stranded " << m["stranded"].get<int>() << "\n";
  } else if (scenario == "plea" && m.contains("wtap")) {
    for (const auto& [group, cells] : m["wtap"].items()) {
      s << group << ":";
      for (const auto& [label, cell] : cells.items()) s << ' ' << label << '=' << format_fixed(cell["wtap"].get<double>());
      s << "\n";
    }
  } else if (scenario == "plea" && m.contains("tcu")) {
    for (const auto& [scale, v] : m["tcu"].items()) s << scale << ": mean " << format_fixed(v["mean"].get<double>()) << "\n";
  }
  return s.str();
}

int report_run(const RunResult& r, const std::string& scenario, const Backend& backend, std::ostream& out,
               std::ostream& err) {
  out << "run_id: " << r.run_id << "\n";
  out << "exit: " << r.exit_reason.kind;
  if (!r.exit_reason.detail.empty()) out << ' ' << r.exit_reason.detail.dump();
  out << "\nrounds: " << r.rounds << "\nprovider_calls: " << r.provider_calls << "\n";
  if (const auto* cache = dynamic_cast<const CachingBackend*>(&backend)) {
    out << "cache: " << cache->hits() << " hits, " << cache->inner_calls() << " inner calls\n";
  }
  out << "log: " << r.log_path.string() << "\n";
  if (!r.aborted) {
    out << "metrics: " << r.metrics_path.string() << "\n" << headline(scenario, r.metrics);
    if (r.exports.size() > 6) {
      out << "exports: " << r.exports.size() << " files under " << r.exports.front().parent_path().string() << "\n";
    } else {
      for (const auto& f : r.exports) out << "export: " << f.string() << "\n";
    }
    return 0;
  }
  err << "run aborted: " << r.error << "\n";
  return 1;
}

int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
  const json params = scenario_params(o);
  auto backend = make_backend(o, params);
  const RunResult r = run(run_config(o, params), *backend, default_scenarios(), default_templates());
  return report_run(r, o.scenario, *backend, out, err);
}

int cmd_replay(const Options& o, const std::string& against, std::ostream& out, std::ostream& err) {
  Options ro = o;
  ro.provider = "replay";
  std::optional<std::string> reference;
  if (!against.empty()) {
    std::ifstream in(against, std::ios::binary);
    if (!in) throw UsageError("cannot read " + against);
    reference = std::string(std::istreambuf_iterator<char>(in), {});
  }
  const json params = scenario_params(ro);
  auto backend = make_backend(ro, params);
  const RunResult r = run(run_config(ro, params), *backend, default_scenarios(), default_templates());
  int code = report_run(r, ro.scenario, *backend, out, err);
  if (code == 0 && reference) {
    std::ifstream in(r.log_path, std::ios::binary);
    const std::string now(std::istreambuf_iterator<char>(in), {});
    if (now == *reference) {
      out << "log identical to " << against << "\n";
    } else {
      err << "log differs from " << against << "\n";
      code = 1;
    }
  }
  return code;
}

int cmd_resume(const Options& o, const std::string& checkpoint, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = checkpoint_load(checkpoint);
  RunConfig c = ck.config;
  c.resume_from = checkpoint;
  c.output_dir = fs::path(checkpoint).parent_path();
  if (c.output_dir.empty()) c.output_dir = ".";
  Options po = o;
  po.provider = c.provider_mode;
  if (po.cache.empty()) po.out = c.output_dir.string();
  if (!o.scenario.empty() && o.scenario != c.scenario) throw UsageError("checkpoint is for scenario " + c.scenario);
  if (o.provider != "scripted") po.provider = c.provider_mode = o.provider;
  auto backend = make_backend(po, c.scenario_params);
  const RunResult r = run(c, *backend, default_scenarios(), default_templates());
  return report_run(r, c.scenario, *backend, out, err);
}

int cmd_probe(const Options& o, const std::string& agent, const std::string& observations, const std::string& report_path,
              std::ostream& out) {
  const json params = scenario_params(o);
  auto backend = make_backend(o, params);
  const ProbeReport report = probe(o.scenario, params, json_argument(agent), json_argument(observations), *backend,
                                   default_scenarios(), default_templates(), o.seed);
  const fs::path path = report_path.empty() ? fs::path(o.out) / ("probe-" + o.scenario + ".json") : fs::path(report_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << to_json_value(report).dump(2) << "\n";
  if (!f) throw IoError("cannot write " + path.string());
  out << "report: " << path.string() << "\n";
  out << "summary: " << report.summary.dump() << "\n";
  for (const auto& e : report.entries) out << "[" << e.stage << "] " << e.raw << "\n";
  return 0;
}

int cmd_analyze(const std::string& log_path, std::string metrics_path, std::string out_dir, std::ostream& out) {
  const fs::path log(log_path);
  if (!fs::exists(log)) throw UsageError("no such log: " + log_path);
  if (metrics_path.empty()) {
    std::string stem = log.filename().string();
    if (stem.size() > 6 && stem.substr(stem.size() - 6) == ".jsonl") stem.resize(stem.size() - 6);
    const fs::path guess = log.parent_path() / (stem + ".metrics.json");
    if (fs::exists(guess)) metrics_path = guess.string();
  }
  json metrics = nullptr;
  if (!metrics_path.empty()) metrics = load_json_file(metrics_path);
  if (out_dir.empty()) out_dir = (log.parent_path() / ("analysis-" + log.stem().string())).string();
  const LogAnalysis a = analyze_log(EventLog::read_file(log), metrics, out_dir);
  out << "scenario: " << a.scenario << "\n";
  for (const auto& f : a.files) out << "export: " << f.string() << "\n";
  out << "summary: " << a.summary.dump() << "\n";
  return 0;
}

int cmd_validate(const Options& o, int runs, double alpha, std::ostream& out) {
  if (o.variants.empty()) throw UsageError("validate needs at least one --variant");
  Options base = o;
  base.variants.clear();
  const json params = scenario_params(base);
  auto backend = make_backend(o, params);
  ValidationBatch b;
  b.scenario = o.scenario;
  b.params = params;
  for (const auto& v : o.variants) b.variants.push_back(VariantSelection::parse(v));
  b.runs_per_arm = runs;
  b.first_seed = o.seed;
  b.max_rounds = o.rounds;
  b.jobs = o.jobs;
  b.alpha = alpha;
  b.output_dir = fs::path(o.out) / "validate";
  const ValidationReport r = run_validation(b, *backend, default_scenarios(), default_templates());
  const fs::path path = fs::path(o.out) / ("validation-" + o.scenario + ".json");
  std::ofstream f(path);
  f << to_json_value(r).dump(2) << "\n";
  out << "baseline: mean " << format_fixed(mean(r.baseline.values), 3) << ", mode " << modal_label(r.baseline.labels)
      << ", n=" << r.baseline.values.size() << "\n";
  for (std::size_t i = 0; i < r.arms.size(); ++i) {
    const auto& a = r.arms[i];
    const auto& v = r.verdicts[i];
    out << a.variant.str() << ": " << to_string(v.level) << " (mean " << format_fixed(mean(a.values), 3) << ", mode "
        << v.variant_mode << ", " << v.statistic << "=" << format_fixed(v.value, 3);
    if (v.p_value) out << ", p=" << format_fixed(*v.p_value, 4);
    out << ")\n";
  }
  out << "report: " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Agent-based simulations with language-model or scripted agents", "sabm"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML-syntax configuration file ([run], [validate], ... sections)");

  Options o;
  std::string against, checkpoint, agent, observations, report, log, metrics, analyze_out;
  int runs = 10;
  double alpha = 0.05;

  auto* run_cmd = app.add_subcommand("run", "Run a scenario");
  add_scenario_options(run_cmd, o);
  add_provider_options(run_cmd, o);
  add_run_options(run_cmd, o);

  auto* validate_cmd = app.add_subcommand("validate", "Prompt-alteration batch: baseline vs variant arms");
  add_scenario_options(validate_cmd, o);
  add_provider_options(validate_cmd, o);
  validate_cmd->add_option("--rounds", o.rounds, "Round cap per run (0: scenario default)");
  validate_cmd->add_option("--runs", runs, "Runs per arm")->check(CLI::PositiveNumber);
  validate_cmd->add_option("--jobs", o.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  validate_cmd->add_option("--alpha", alpha, "Significance level");

  auto* probe_cmd = app.add_subcommand("probe", "Run one agent against injected observations");
  add_scenario_options(probe_cmd, o);
  add_provider_options(probe_cmd, o);
  probe_cmd->add_option("--agent", agent, "Agent spec: JSON or @file");
  probe_cmd->add_option("--observations", observations, "Observations: JSON or @file");
  probe_cmd->add_option("--report", report, "Report path (default: <out>/probe-<scenario>.json)");

  auto* replay_cmd = app.add_subcommand("replay", "Re-run from the record/replay store without provider calls");
  add_scenario_options(replay_cmd, o);
  add_provider_options(replay_cmd, o);
  add_run_options(replay_cmd, o);
  replay_cmd->add_option("--against", against, "Recorded event log the replay must reproduce byte for byte");

  auto* resume_cmd = app.add_subcommand("resume", "Continue a run from a checkpoint");
  resume_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  add_provider_options(resume_cmd, o);
  resume_cmd->add_option("--scenario", o.scenario, "Expected scenario (checked)");

  auto* analyze_cmd = app.add_subcommand("analyze", "Export series, plots and detector verdicts from an event log");
  analyze_cmd->add_option("--log", log, "Event log (JSONL)")->required();
  analyze_cmd->add_option("--metrics", metrics, "Metrics file (default: next to the log)");
  analyze_cmd->add_option("--out", analyze_out, "Output directory");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (o.provider == "live" && (o.budget_calls == 0 || o.budget_tokens == 0)) {
      // Credentials are checked first so a missing key reports as such.
      LiveConfig::from_environment({o.budget_calls, o.budget_tokens});
      throw UsageError("live mode requires --budget-calls and --budget-tokens");
    }
    if (*run_cmd) return cmd_run(o, out, err);
    if (*validate_cmd) return cmd_validate(o, runs, alpha, out);
    if (*probe_cmd) return cmd_probe(o, agent, observations, report, out);
    if (*replay_cmd) return cmd_replay(o, against, out, err);
    if (*resume_cmd) return cmd_resume(o, checkpoint, out, err);
    if (*analyze_cmd) return cmd_analyze(log, metrics, analyze_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const AuthError& e) {
    err << "AuthError: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace sabm::cli
