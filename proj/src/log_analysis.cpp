#include "sabm/log_analysis.hpp"

#include <map>

#include "sabm/analysis.hpp"
#include "sabm/error.hpp"
#include "sabm/export.hpp"
#include "sabm/scenarios/firm.hpp"

namespace sabm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string detect(const std::vector<EventRecord>& records) {
  for (const auto& r : records) {
    if (r.kind != EventKind::world) continue;
    const std::string ev = r.payload.value("event", std::string());
    if (ev == "round" && r.payload.contains("p")) return "firm";
    if (ev == "round" && r.payload.contains("active")) return "evac";
    if (ev == "guess" || ev == "target") return "guess";
    if (ev == "decision" || ev == "tcu" || (ev == "setup" && r.payload.contains("demographics_checksum"))) return "plea";
  }
  throw DomainError("no recognizable world records in the log");
}

json bins_json(const std::vector<double>& s) {
  json out = json::array();
  for (const auto& b : summarize_bins(s)) out.push_back({{"first", b.first_round}, {"last", b.last_round}, {"mean", b.mean}});
  return out;
}

LogAnalysis firm_analysis(const std::vector<EventRecord>& records, const json& metrics, const fs::path& dir) {
  LogAnalysis a{"firm", json::object(), {}};
  std::vector<double> rounds, p1, p2, q1, q2, pi1, pi2;
  for (const auto& r : records) {
    if (r.kind != EventKind::world || r.payload.value("event", "") != "round") continue;
    rounds.push_back(r.round);
    p1.push_back(r.payload["p"][0]);
    p2.push_back(r.payload["p"][1]);
    q1.push_back(r.payload["q"][0]);
    q2.push_back(r.payload["q"][1]);
    pi1.push_back(r.payload["profit"][0]);
    pi2.push_back(r.payload["profit"][1]);
  }
  double pb = 0, pm = 0;
  if (metrics.is_object() && metrics.contains("bertrand")) {
    pb = metrics["bertrand"][0];
    pm = metrics["monopoly"][0];
  } else {
    const firm::MarketParams m;
    pb = firm::bertrand_price(m).first;
    pm = firm::monopoly_price(m).first;
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    rows.push_back({csv_number(rounds[i]), csv_number(p1[i]), csv_number(q1[i]), csv_number(pi1[i]), csv_number(p2[i]),
                    csv_number(q2[i]), csv_number(pi2[i])});
  }
  a.files.push_back(dir / "prices.csv");
  write_csv(a.files.back(), {"round", "p1", "q1", "profit1", "p2", "q2", "profit2"}, rows);
  LinePlot lp{"Prices", "Round", "Price", {{"Firm 1", rounds, p1}, {"Firm 2", rounds, p2}},
              {{"Bertrand", pb}, {"Monopoly", pm}}};
  a.files.push_back(dir / "prices.svg");
  write_svg(a.files.back(), lp);
  LinePlot pp{"Profits", "Round", "Profit", {{"Firm 1", rounds, pi1}, {"Firm 2", rounds, pi2}}, {}};
  a.files.push_back(dir / "profits.svg");
  write_svg(a.files.back(), pp);

  a.summary["rounds"] = rounds.size();
  a.summary["bertrand"] = pb;
  a.summary["monopoly"] = pm;
  int i = 0;
  for (const auto* s : {&p1, &p2}) {
    const std::string k = "firm" + std::to_string(++i);
    json f = {{"bins", bins_json(*s)}};
    const auto conv = converged(*s, pm, pb);
    f["converged"] = conv.fired ? json(*conv.detail) : json(nullptr);
    const auto osc = bounded_oscillation(*s, pm - pb);
    f["bounded_oscillation"] = osc.fired;
    const auto onset = stable_collusion_onset(*s, pb, pm);
    f["collusion_onset"] = onset.fired ? json(*onset.detail) : json(nullptr);
    if (!s->empty()) f["final_price"] = s->back();
    a.summary[k] = f;
  }
  return a;
}

LogAnalysis evac_analysis(const std::vector<EventRecord>& records, const fs::path& dir) {
  LogAnalysis a{"evac", json::object(), {}};
  std::vector<double> rounds, escaped, active, left, bottom, right;
  for (const auto& r : records) {
    if (r.kind != EventKind::world || r.payload.value("event", "") != "round") continue;
    rounds.push_back(r.round);
    escaped.push_back(r.payload["escaped"]);
    active.push_back(r.payload["active"]);
    left.push_back(r.payload["through"]["left"]);
    bottom.push_back(r.payload["through"]["bottom"]);
    right.push_back(r.payload["through"]["right"]);
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    rows.push_back({csv_number(rounds[i]), csv_number(escaped[i]), csv_number(active[i]), csv_number(left[i]),
                    csv_number(bottom[i]), csv_number(right[i])});
  }
  a.files.push_back(dir / "evacuation.csv");
  write_csv(a.files.back(), {"round", "escaped", "active", "left", "bottom", "right"}, rows);
  a.files.push_back(dir / "evacuation.svg");
  write_svg(a.files.back(), {"Evacuation", "Round", "Agents", {{"Escaped", rounds, escaped}, {"Active", rounds, active}}, {}});
  a.summary["rounds"] = rounds.size();
  a.summary["escaped"] = escaped.empty() ? 0.0 : escaped.back();
  a.summary["active"] = active.empty() ? 0.0 : active.back();
  return a;
}

LogAnalysis guess_analysis(const std::vector<EventRecord>& records, const fs::path& dir) {
  LogAnalysis a{"guess", json::object(), {}};
  std::vector<std::vector<std::string>> rows;
  json guesses = json::array();
  for (const auto& r : records) {
    if (r.kind != EventKind::world) continue;
    const std::string ev = r.payload.value("event", "");
    if (ev == "target") a.summary["target"] = r.payload["target"];
    if (ev != "guess") continue;
    guesses.push_back(r.payload["guess"]);
    rows.push_back({std::to_string(r.round), r.payload["guess"].dump(), r.payload.value("feedback", "")});
  }
  a.files.push_back(dir / "guesses.csv");
  write_csv(a.files.back(), {"round", "guess", "feedback"}, rows);
  a.summary["guesses"] = guesses;
  a.summary["guess_count"] = guesses.size();
  return a;
}

LogAnalysis plea_analysis(const std::vector<EventRecord>& records, const fs::path& dir) {
  LogAnalysis a{"plea", json::object(), {}};
  std::map<std::pair<std::string, std::string>, std::pair<long, long>> cells;
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records) {
    if (r.kind != EventKind::world) continue;
    const std::string ev = r.payload.value("event", "");
    if (ev == "setup") a.summary["demographics_checksum"] = r.payload.value("demographics_checksum", "");
    if (ev == "decision") {
      auto& c = cells[{r.payload["group"], r.payload["family"].get<std::string>() + ":" + r.payload["case"].get<std::string>()}];
      c.first += r.payload["accept"].get<bool>() ? 1 : 0;
      c.second += 1;
    }
    if (ev == "tcu") {
      const auto& s = r.payload["scores"];
      rows.push_back({r.agent_id, csv_number(s["hostility"]), csv_number(s["risk_taking"]),
                      csv_number(s["social_support"]), std::to_string(r.payload["declined"].size())});
    }
  }
  if (!rows.empty()) {
    a.files.push_back(dir / "tcu.csv");
    write_csv(a.files.back(), {"agent", "hostility", "risk_taking", "social_support", "declined"}, rows);
  }
  if (!cells.empty()) {
    std::vector<std::vector<std::string>> wrows;
    json wt = json::object();
    for (const auto& [k, c] : cells) {
      const double w = static_cast<double>(c.first) / c.second;
      wrows.push_back({k.first, k.second, std::to_string(c.first), std::to_string(c.second), csv_number(w)});
      wt[k.first][k.second] = w;
    }
    a.files.push_back(dir / "wtap.csv");
    write_csv(a.files.back(), {"group", "case", "accept", "n", "wtap"}, wrows);
    a.summary["wtap"] = wt;
  }
  return a;
}

}  // namespace

LogAnalysis analyze_log(const std::vector<EventRecord>& records, const json& metrics, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const std::string scenario = detect(records);
  if (scenario == "firm") return firm_analysis(records, metrics, out_dir);
  if (scenario == "evac") return evac_analysis(records, out_dir);
  if (scenario == "guess") return guess_analysis(records, out_dir);
  return plea_analysis(records, out_dir);
}

}  // namespace sabm
