#include "sabm/scenarios/all.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include "sabm/analysis.hpp"
#include "sabm/error.hpp"
#include "sabm/scenarios/evac.hpp"
#include "sabm/scenarios/firm.hpp"
#include "sabm/scenarios/guess.hpp"
#include "sabm/scenarios/plea.hpp"

namespace sabm {

using nlohmann::json;

TemplateRegistry default_templates() {
  TemplateRegistry r;
  guess::register_templates(r);
  firm::register_templates(r);
  evac::register_templates(r);
  plea::register_templates(r);
  return r;
}

ScenarioRegistry default_scenarios() {
  ScenarioRegistry r;
  r.add("guess", guess::make_scenario);
  r.add("firm", firm::make_scenario);
  r.add("evac", evac::make_scenario);
  r.add("plea", plea::make_scenario);
  return r;
}

std::shared_ptr<ScriptedBackend> make_scripted_backend(const json& firm_params) {
  auto b = std::make_shared<ScriptedBackend>();
  b->register_oracle("guess", std::make_shared<guess::GuessOracle>());
  b->register_oracle("firm", std::make_shared<firm::FirmOracle>(firm::MarketParams::from_json(firm_params)));
  b->register_oracle("evac", std::make_shared<evac::EvacOracle>());
  b->register_oracle("plea", std::make_shared<plea::PleaOracle>());
  return b;
}

CanonicalMetric canonical_metric(const std::string& scenario, const json& m) {
  if (scenario == "guess") {
    return {m.at("guess_count").get<double>(), m.at("behavior_label").get<std::string>()};
  }
  if (scenario == "firm") {
    double sum = 0.0;
    bool collusive = false;
    for (const char* k : {"firm1", "firm2"}) {
      sum += m.at(k).value("mean_price_last50", 0.0);
      if (m.at(k).contains("collusion_onset") && !m.at(k)["collusion_onset"].is_null()) collusive = true;
    }
    return {sum / 2.0, collusive ? "collusive" : "competitive"};
  }
  if (scenario == "evac") {
    std::string best = "none";
    int most = 0;
    for (const auto& [exit, n] : m.at("escaped_by_exit").items()) {
      if (n.get<int>() > most) {
        most = n.get<int>();
        best = exit;
      }
    }
    const json& last = m.at("last_escape_round");
    return {last.is_null() ? m.at("rounds").get<double>() : last.get<double>(), best};
  }
  if (scenario == "plea") {
    if (m.value("task", std::string("battery")) == "tcu") {
      return {m.at("tcu").at("risk_taking").at("mean").get<double>(), "tcu"};
    }
    double accept = 0.0, n = 0.0;
    for (const auto& [group, cells] : m.at("wtap").items()) {
      for (const auto& [label, cell] : cells.items()) {
        accept += cell.at("accept").get<double>();
        n += cell.at("n").get<double>();
      }
    }
    const double f = n > 0 ? accept / n : 0.0;
    return {f, f >= 0.5 ? "accept" : "reject"};
  }
  throw ConfigError("no canonical metric for scenario '" + scenario + "'");
}

ValidationReport run_validation(const ValidationBatch& batch, Backend& backend, const ScenarioRegistry& scenarios,
                                const TemplateRegistry& templates) {
  if (batch.runs_per_arm < 1) throw ConfigError("runs per arm must be >= 1");
  if (batch.jobs < 1) throw ConfigError("jobs must be >= 1");
  for (const auto& v : batch.variants) templates.select_variant(v.base_id, v.kind, v.variant_id);

  std::vector<VariantSelection> arms{VariantSelection{}};
  arms.insert(arms.end(), batch.variants.begin(), batch.variants.end());
  struct Slot {
    bool aborted = false;
    CanonicalMetric metric;
  };
  const std::size_t per_arm = static_cast<std::size_t>(batch.runs_per_arm);
  std::vector<Slot> slots(arms.size() * per_arm);

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < slots.size();) {
      const std::size_t arm = i / per_arm;
      const std::uint64_t seed = batch.first_seed + i % per_arm;
      try {
        RunConfig cfg;
        cfg.scenario = batch.scenario;
        cfg.seed = seed;
        cfg.max_rounds = batch.max_rounds;
        cfg.scenario_params = batch.params;
        cfg.checkpoint_every = 0;
        cfg.output_dir = batch.output_dir;
        std::string tag = "baseline";
        if (!arms[arm].empty()) {
          auto& list = cfg.scenario_params["variants"];
          if (!list.is_array()) list = json::array();
          list.push_back(arms[arm].str());
          tag = arms[arm].base_id + "." + std::string(to_string(arms[arm].kind)) + "." + arms[arm].variant_id;
        }
        cfg.run_id = batch.scenario + "-" + tag + "-s" + std::to_string(seed);
        const RunResult res = run(cfg, backend, scenarios, templates);
        slots[i].aborted = res.aborted;
        if (!res.aborted) slots[i].metric = canonical_metric(batch.scenario, res.metrics);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = std::min<int>(batch.jobs, static_cast<int>(slots.size()));
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  ValidationReport report;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    ValidationArm arm{arms[a], {}, {}, 0};
    for (std::size_t k = 0; k < per_arm; ++k) {
      const Slot& s = slots[a * per_arm + k];
      if (s.aborted) {
        ++arm.aborted;
        continue;
      }
      arm.values.push_back(s.metric.value);
      arm.labels.push_back(s.metric.label);
    }
    if (a == 0) report.baseline = std::move(arm);
    else report.arms.push_back(std::move(arm));
  }
  if (report.baseline.values.empty()) throw EmptySample("every baseline run aborted");
  for (const auto& arm : report.arms) {
    if (arm.values.empty()) throw EmptySample("every run of arm " + arm.variant.str() + " aborted");
    report.verdicts.push_back(classify_variation({report.baseline.values, report.baseline.labels},
                                                 {arm.values, arm.labels}, batch.alpha));
  }
  return report;
}

json to_json_value(const ValidationReport& r) {
  auto arm_json = [](const ValidationArm& a) {
    return json{{"variant", a.variant.empty() ? "baseline" : a.variant.str()},
                {"values", a.values},
                {"labels", a.labels},
                {"aborted", a.aborted},
                {"mean", a.values.empty() ? 0.0 : mean(a.values)}};
  };
  json arms = json::array();
  for (std::size_t i = 0; i < r.arms.size(); ++i) {
    json a = arm_json(r.arms[i]);
    const auto& v = r.verdicts[i];
    a["level"] = to_string(v.level);
    a["statistic"] = v.statistic;
    a["statistic_value"] = v.value;
    a["p_value"] = v.p_value ? json(*v.p_value) : json(nullptr);
    a["baseline_mode"] = v.baseline_mode;
    a["variant_mode"] = v.variant_mode;
    arms.push_back(std::move(a));
  }
  return {{"baseline", arm_json(r.baseline)}, {"arms", arms}};
}

}  // namespace sabm
