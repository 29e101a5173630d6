#include "sabm/scenarios/firm.hpp"

#include <cmath>
#include <regex>

#include "sabm/agent.hpp"
#include "sabm/analysis.hpp"
#include "sabm/error.hpp"
#include "sabm/export.hpp"
#include "sabm/scenarios/common.hpp"

namespace sabm::firm {

using nlohmann::json;
namespace fs = std::filesystem;

void MarketParams::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (d < 0.0 || d > beta) throw ConfigError("d/beta must lie in [0, 1]");
}

MarketParams MarketParams::from_json(const json& p) {
  MarketParams m;
  m.a = p.value("a", m.a);
  m.d = p.value("d", m.d);
  m.beta = p.value("beta", m.beta);
  m.c1 = p.value("c1", m.c1);
  m.c2 = p.value("c2", m.c2);
  m.validate();
  return m;
}

std::pair<double, double> raw_demand(double p1, double p2, const MarketParams& m) {
  const double b = m.b();
  if (b == 0.0) throw SingularParameters("beta^2 == d^2: demand undefined for homogeneous goods");
  // Coefficients first so the default market reduces to 1400 - 200 p1 + 100 p2.
  const double k0 = m.alpha() / b, k_own = m.beta / b, k_cross = m.d / b;
  return {k0 - k_own * p1 + k_cross * p2, k0 - k_own * p2 + k_cross * p1};
}

std::pair<double, double> demand(double p1, double p2, const MarketParams& m) {
  auto [q1, q2] = raw_demand(p1, p2, m);
  return {std::max(0.0, q1), std::max(0.0, q2)};
}

double profit(double p, double c, double q) { return (p - c) * q; }

std::pair<double, double> bertrand_price(const MarketParams& m) {
  const double den = 4.0 * m.beta * m.beta - m.d * m.d;
  if (den == 0.0) throw SingularParameters("4 beta^2 == d^2");
  const double al = m.alpha();
  const double p1 = (m.d * al + m.beta * m.d * m.c2 + 2.0 * m.beta * al + 2.0 * m.beta * m.beta * m.c1) / den;
  const double p2 = (m.d * al + m.beta * m.d * m.c1 + 2.0 * m.beta * al + 2.0 * m.beta * m.beta * m.c2) / den;
  return {p1, p2};
}

std::pair<double, double> monopoly_price(const MarketParams& m) {
  if (m.beta == m.d) throw SingularParameters("d/beta == 1");
  const double base = m.alpha() / (2.0 * (m.beta - m.d));
  return {base + m.c1 / 2.0, base + m.c2 / 2.0};
}

double best_response(double p_other, double cost, const MarketParams& m) {
  return (m.alpha() + m.d * p_other + m.beta * cost) / (2.0 * m.beta);
}

namespace {

std::string num(double v) {
  // Shortest form for costs and parameters ("2", "2.5").
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string FirmOracle::respond(const ChatRequest& request) const {
  const auto tag = parse_scenario_tag(request);
  const std::string stage = tag ? tag->stage : "price";
  const std::string& text = last_user_text(request);
  if (stage == "plan") return "best-response";
  if (stage == "conversation") return "Let us each keep pricing carefully this round.";
  if (stage == "explain") return "It is the best response to the other player's last price.";

  static const std::regex kCost(R"(Your profit is \(p - (-?[0-9.]+)\) \* q)");
  static const std::regex kRound(R"(Round #\d+: \[([^\]]*)\])");
  std::smatch m;
  const double cost = std::regex_search(text, m, kCost) ? std::stod(m[1].str()) : params_.c1;
  std::string last;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kRound); it != std::sregex_iterator(); ++it) {
    last = (*it)[1].str();
  }
  if (last.empty()) return format_fixed(cost, 2);
  std::vector<double> fields;
  std::size_t start = 0;
  while (start <= last.size()) {
    auto end = last.find(',', start);
    if (end == std::string::npos) end = last.size();
    fields.push_back(std::stod(last.substr(start, end - start)));
    start = end + 1;
  }
  if (fields.size() < 4) return format_fixed(cost, 2);
  return format_fixed(best_response(fields[3], cost, params_), 2);
}

void register_templates(TemplateRegistry& r) {
  r.add({"firm.description",
         "This is a game between two players that spans several rounds. Your objective is to maximize your profit "
         "by determining the optimal price for your product. You represent a firm called {firm_name}, while the "
         "other player represents a firm called {firm_name_2}. Do not create or mention any additional firm names, "
         "e.g., do not say anything related to \"AI\" or \"AI assistant/model\". I am responsible for facilitating "
         "communication between the players.\n"
         "In each round, you will be informed of your prices, demands, and profits in previous rounds, as well as "
         "the other player's prices. Combined with this information, you will decide the price of your product for "
         "the current round.\n"
         "Please note that this is not a zero-sum game. Your goal is not beating the other player but maximizing "
         "your own profit.\n"
         "Your profit is (p - {firm_cost}) * q, where p is your price for this round, {firm_cost} is the cost of "
         "your product, and q is the demand of your product, which is affected by you and the other player's "
         "prices of this round."});
  r.add({"firm.conversation_rule",
         "In Phase 1, two players are permitted to engage in open-ended discussions on any topic, up to three "
         "times. For instance, one player might say to the other: \"Smart agents are awesome!\"\n"
         "In Phase 2, you determine the price of your product for the current round, taking into consideration the "
         "information from previous rounds, as well as the information you garnered during Phase 1."});
  r.add({"firm.history",
         "Your and the other player's past {previous_round_number} rounds' decisions and profits (Round #a: [your "
         "price, your demand, your profit, the other player's price]) are as follows: {previous_decisions}."});
  r.add({"firm.plan.ask",
         "Statistics of historical data (Rounds #a - #b: [your average price, your average demand, your average "
         "profit, the other player's average price]) are given below.\n\n"
         "{summary_statistics}\n"
         "Your strategy in previous rounds:\n\n"
         "{past_strategies}\n"
         "Based on the above statistics and your previous strategies, what is your strategy for this round?"});
  r.add({"firm.plan.use", "Your strategy for the current rounds: {strategy}"});
  r.add({"firm.persona.active", "You are encouraged to actively explore your price to get more profit."});
  r.add({"firm.persona.aggressive", "You are encouraged to adjust your price aggressively to get more profit."});
  r.add({"firm.transcript", "The discussion in Phase 1 of this round is as follows:\n{transcript}"});
  r.add({"firm.talk",
         "This is Phase 1 of round {round}. The discussion so far in this round:\n{transcript}\n"
         "Now it is your turn to speak. Reply with your message only."});
  r.add({"firm.decide",
         "This is Phase 2 of round {round}. Please decide the price of your product for this round. Only reply the "
         "price with two decimal places (e.g., 6.00)."});
}

namespace {

struct FirmParams {
  MarketParams market;
  std::string persona = "active";
  bool planning = true;
  int planning_start = 21;
  int planning_every = 20;
  std::size_t bin = 20;
  std::size_t max_bins = 20;
  std::size_t max_strategies = 20;
  std::size_t memory_window = 20;
  bool conversation = false;
  int conversation_until = -1;  // last round with conversation; -1 means no limit
  int conversation_quota = 3;
  std::array<std::string, 2> names{"Firm Ed", "Firm Gill"};
  LlmSettings settings;
  std::vector<VariantSelection> variants;
  std::size_t convergence_span = 400;
  double convergence_theta = 0.01;
  std::size_t oscillation_span = 800;

  static FirmParams from_json(const json& p) {
    FirmParams f;
    f.market = MarketParams::from_json(p);
    f.persona = p.value("persona", f.persona);
    if (f.persona != "active" && f.persona != "aggressive" && f.persona != "none") {
      throw ConfigError("firm persona must be active, aggressive or none");
    }
    f.planning = p.value("planning", f.planning);
    f.planning_start = p.value("planning_start", f.planning_start);
    f.planning_every = p.value("planning_every", f.planning_every);
    if (f.planning_every < 1) throw ConfigError("planning_every must be >= 1");
    f.memory_window = p.value("memory_window", f.memory_window);
    f.conversation = p.value("conversation", f.conversation);
    f.conversation_until = p.value("conversation_until", f.conversation_until);
    f.conversation_quota = p.value("conversation_quota", f.conversation_quota);
    if (p.contains("names")) f.names = p["names"].get<std::array<std::string, 2>>();
    f.settings = settings_from_params(p, LlmSettings{"gpt-4-0314", 0.7, 128});
    f.variants = selections_from_params(p);
    f.convergence_span = p.value("convergence_span", f.convergence_span);
    f.convergence_theta = p.value("convergence_theta", f.convergence_theta);
    f.oscillation_span = p.value("oscillation_span", f.oscillation_span);
    return f;
  }
};

struct Strategy {
  int round = 0;
  std::string text;
};

struct Line {
  int round = 0;
  int turn = 0;
  std::string speaker;
  std::string text;
};

class FirmScenario final : public Scenario {
 public:
  FirmScenario(FirmParams params, const TemplateRegistry& templates) : p_(std::move(params)), templates_(templates) {
    const auto [b1, b2] = bertrand_price(p_.market);
    const auto [m1, m2] = monopoly_price(p_.market);
    pb_ = {b1, b2};
    pm_ = {m1, m2};
    for (int i = 0; i < 2; ++i) {
      agents_[i].agent_id = "firm" + std::to_string(i + 1);
      agents_[i].settings = p_.settings;
      agents_[i].capacity = p_.memory_window;
      if (p_.persona != "none") agents_[i].persona = t("firm.persona." + p_.persona);
    }
  }

  std::string name() const override { return "firm"; }
  std::vector<std::string> stages() const override { return {"plan", "conversation", "price", "market"}; }
  int default_max_rounds() const override { return 2000; }

  void init(RunContext& ctx) override {
    ctx.record(EventKind::world, json{{"event", "market"},
                                      {"bertrand", {pb_[0], pb_[1]}},
                                      {"monopoly", {pm_[0], pm_[1]}},
                                      {"costs", {p_.market.c1, p_.market.c2}}});
  }

  void step(RunContext& ctx) override {
    const int r = ctx.round();
    std::array<double, 2> price{};
    if (r == 1) {
      price = {p_.market.c1, p_.market.c2};
    } else {
      if (p_.planning && r >= p_.planning_start && (r - p_.planning_start) % p_.planning_every == 0) {
        ctx.set_stage("plan");
        for (int i = 0; i < 2; ++i) {
          agents_[i] = reflect(agents_[i], plan_prompt(i), ctx);
          if (agents_[i].plan) strategies_[i].push_back({r, *agents_[i].plan});
        }
      }
      std::string transcript;
      if (conversation_on(r)) {
        ctx.set_stage("conversation");
        transcript = converse(ctx);
      }
      ctx.set_stage("price");
      for (int i = 0; i < 2; ++i) {
        const ActResult res = act_text(agents_[i], price_prompt(i, r, transcript), ParserSpec::decimal(2), ctx);
        const auto v = res.action.number();
        if (res.action.conforming && v && std::isfinite(*v)) {
          price[i] = *v;
        } else {
          price[i] = series_[i].price.back();
          ctx.record(EventKind::world,
                     json{{"event", "anomaly"}, {"what", "unparseable price, previous price repeated"},
                          {"raw", res.action.raw}},
                     agents_[i].agent_id);
        }
      }
    }

    ctx.set_stage("market");
    const auto [rq1, rq2] = raw_demand(price[0], price[1], p_.market);
    if (rq1 < 0.0 || rq2 < 0.0) {
      ctx.record(EventKind::world, json{{"event", "anomaly"}, {"what", "negative demand clamped"}, {"q", {rq1, rq2}}});
    }
    const std::array<double, 2> q{std::max(0.0, rq1), std::max(0.0, rq2)};
    const std::array<double, 2> cost{p_.market.c1, p_.market.c2};
    for (int i = 0; i < 2; ++i) {
      series_[i].price.push_back(price[i]);
      series_[i].demand.push_back(q[i]);
      series_[i].profit.push_back(profit(price[i], cost[i], q[i]));
    }
    for (int i = 0; i < 2; ++i) {
      const int j = 1 - i;
      agents_[i] = observe(agents_[i], {r, ObservationKind::feedback, "",
                                        {price[i], q[i], series_[i].profit.back(), price[j]}});
    }
    ctx.record(EventKind::world, json{{"event", "round"},
                                      {"p", {price[0], price[1]}},
                                      {"q", {q[0], q[1]}},
                                      {"profit", {series_[0].profit.back(), series_[1].profit.back()}}});
  }

  SeriesRegistry series() const override {
    return {{"p1", series_[0].price},   {"p2", series_[1].price},     {"q1", series_[0].demand},
            {"q2", series_[1].demand},  {"profit1", series_[0].profit}, {"profit2", series_[1].profit}};
  }

  std::vector<ExitSpec> exit_specs(int max_rounds) const override {
    return {ExitSpec::convergence({"p1", "p2"}, pm_[0], pb_[0], p_.convergence_span, p_.convergence_theta),
            ExitSpec::oscillation({"p1", "p2"}, pm_[0] - pb_[0], p_.oscillation_span),
            ExitSpec::max_iterations(max_rounds)};
  }

  json metrics() const override {
    json j = {{"rounds", series_[0].price.size()},
              {"bertrand", {pb_[0], pb_[1]}},
              {"monopoly", {pm_[0], pm_[1]}}};
    for (int i = 0; i < 2; ++i) {
      const auto& s = series_[i];
      const std::string k = "firm" + std::to_string(i + 1);
      json f = json::object();
      if (!s.price.empty()) {
        f["final_price"] = s.price.back();
        f["final_profit"] = s.profit.back();
        const std::size_t tail = std::min<std::size_t>(50, s.price.size());
        f["mean_price_last50"] = mean(std::span<const double>(s.price).subspan(s.price.size() - tail));
        const auto conv = converged(s.price, pm_[i], pb_[i], p_.convergence_span, p_.convergence_theta);
        f["converged"] = conv.fired;
        if (conv.fired) f["converged_price"] = *conv.detail;
        const auto onset = stable_collusion_onset(s.price, pb_[i], pm_[i]);
        f["collusion_onset"] = onset.fired ? json(*onset.detail) : json(nullptr);
      }
      f["strategies"] = strategies_[i].size();
      j[k] = f;
    }
    j["utterances"] = transcript_.size();
    return j;
  }

  json save_state() const override {
    json j = json::object();
    json firms = json::array();
    for (int i = 0; i < 2; ++i) {
      json strat = json::array();
      for (const auto& s : strategies_[i]) strat.push_back({{"round", s.round}, {"text", s.text}});
      firms.push_back({{"price", series_[i].price},
                       {"demand", series_[i].demand},
                       {"profit", series_[i].profit},
                       {"strategies", strat},
                       {"agent", to_json_value(agents_[i])}});
    }
    j["firms"] = firms;
    json lines = json::array();
    for (const auto& l : transcript_) {
      lines.push_back({{"round", l.round}, {"turn", l.turn}, {"speaker", l.speaker}, {"text", l.text}});
    }
    j["transcript"] = lines;
    return j;
  }

  void load_state(const json& s) override {
    for (int i = 0; i < 2; ++i) {
      const auto& f = s.at("firms").at(i);
      series_[i].price = f.at("price").get<std::vector<double>>();
      series_[i].demand = f.at("demand").get<std::vector<double>>();
      series_[i].profit = f.at("profit").get<std::vector<double>>();
      strategies_[i].clear();
      for (const auto& st : f.at("strategies")) strategies_[i].push_back({st.at("round"), st.at("text")});
      agents_[i] = agent_from_json(f.at("agent"));
    }
    transcript_.clear();
    for (const auto& l : s.at("transcript")) transcript_.push_back({l.at("round"), l.at("turn"), l.at("speaker"), l.at("text")});
  }

  ProbeReport probe(const json& agent_spec, const json& observations, RunContext& ctx) override {
    const int i = agent_spec.value("firm", 1) == 2 ? 1 : 0;
    AgentState agent = agents_[i];
    if (agent_spec.contains("persona")) agent.persona = agent_spec["persona"].get<std::string>();
    if (agent_spec.contains("plan")) agent.plan = agent_spec["plan"].get<std::string>();
    int last_round = 0;
    for (const auto& o : observations.value("history", json::array())) {
      // [round, price, demand, profit, other price] or an object
      Observation obs;
      obs.kind = ObservationKind::feedback;
      if (o.is_array()) {
        obs.round = o.at(0).get<int>();
        obs.numbers = {o.at(1).get<double>(), o.at(2).get<double>(), o.at(3).get<double>(), o.at(4).get<double>()};
      } else {
        obs.round = o.at("round").get<int>();
        obs.numbers = {o.at("price").get<double>(), o.at("demand").get<double>(), o.at("profit").get<double>(),
                       o.at("other_price").get<double>()};
      }
      last_round = obs.round;
      agent = observe(agent, obs);
    }
    const AgentState saved = agents_[i];
    agents_[i] = agent;
    ctx.set_stage("price");
    const ActResult res =
        act_text(agent, price_prompt(i, last_round + 1, observations.value("transcript", std::string())),
                 ParserSpec::decimal(2), ctx);
    ProbeEntry e{"price", res.prompt, res.action.raw, to_json_value(res.action), {}};
    if (agent_spec.value("explain", false)) {
      ctx.set_stage("explain");
      e.explanation = explain(agent, res, "Can you briefly explain why you chose this price?", ctx);
    }
    agents_[i] = saved;
    ProbeReport report;
    report.entries.push_back(std::move(e));
    if (auto n = res.action.number()) report.summary["price"] = *n;
    return report;
  }

  std::vector<fs::path> export_results(const fs::path& dir, const std::string& run_id) const override {
    const fs::path out = dir / ("run-" + run_id);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < series_[0].price.size(); ++k) {
      rows.push_back({std::to_string(k + 1), csv_number(series_[0].price[k]), csv_number(series_[1].price[k]),
                      csv_number(series_[0].demand[k]), csv_number(series_[1].demand[k]),
                      csv_number(series_[0].profit[k]), csv_number(series_[1].profit[k])});
    }
    std::vector<fs::path> files;
    files.push_back(out / "prices.csv");
    write_csv(files.back(), {"round", "p1", "p2", "q1", "q2", "profit1", "profit2"}, rows);

    auto plot = [&](const std::string& title, const std::string& ylabel, bool prices) {
      LinePlot lp;
      lp.title = title;
      lp.x_label = "Round";
      lp.y_label = ylabel;
      for (int i = 0; i < 2; ++i) {
        PlotSeries s;
        s.label = p_.names[i];
        const auto& ys = prices ? series_[i].price : series_[i].profit;
        for (std::size_t k = 0; k < ys.size(); ++k) {
          s.x.push_back(static_cast<double>(k + 1));
          s.y.push_back(ys[k]);
        }
        lp.series.push_back(std::move(s));
      }
      if (prices) lp.references = {{"Bertrand " + num(pb_[0]), pb_[0]}, {"Monopoly " + num(pm_[0]), pm_[0]}};
      return lp;
    };
    files.push_back(out / "prices.svg");
    write_svg(files.back(), plot("Prices", "Price", true));
    files.push_back(out / "profits.svg");
    write_svg(files.back(), plot("Profits", "Profit", false));

    std::vector<std::vector<std::string>> strat;
    for (int i = 0; i < 2; ++i) {
      for (const auto& s : strategies_[i]) strat.push_back({std::to_string(s.round), p_.names[i], s.text});
    }
    files.push_back(out / "strategies.csv");
    write_csv(files.back(), {"round", "firm", "strategy"}, strat);

    std::vector<std::vector<std::string>> lines;
    for (const auto& l : transcript_) lines.push_back({std::to_string(l.round), std::to_string(l.turn), l.speaker, l.text});
    files.push_back(out / "transcript.csv");
    write_csv(files.back(), {"round", "turn", "speaker", "text"}, lines);
    return files;
  }

 private:
  struct FirmSeries {
    std::vector<double> price, demand, profit;
  };

  std::string t(const std::string& id, const Bindings& b = {}) const { return render_id(templates_, p_.variants, id, b); }

  bool conversation_on(int r) const {
    return p_.conversation && (p_.conversation_until < 0 || r <= p_.conversation_until);
  }

  std::string description(int i) const {
    const double cost = i == 0 ? p_.market.c1 : p_.market.c2;
    std::string s = t("firm.description",
                      {{"firm_name", p_.names[i]}, {"firm_name_2", p_.names[1 - i]}, {"firm_cost", num(cost)}});
    if (p_.conversation) s += "\n" + t("firm.conversation_rule");
    return s;
  }

  std::string history_block(const AgentState& agent) const {
    if (agent.history.empty()) return {};
    std::string lines;
    for (const auto& o : agent.history) {
      if (o.numbers.size() < 4) continue;
      if (!lines.empty()) lines += "; ";
      lines += "Round #" + std::to_string(o.round) + ": [" + format_fixed(o.numbers[0]) + ", " +
               format_fixed(o.numbers[1]) + ", " + format_fixed(o.numbers[2]) + ", " + format_fixed(o.numbers[3]) + "]";
    }
    return t("firm.history", {{"previous_round_number", std::to_string(agent.history.size())},
                              {"previous_decisions", lines}});
  }

  std::string price_prompt(int i, int r, const std::string& transcript) const {
    const AgentState& a = agents_[i];
    std::string s = description(i);
    auto add = [&](const std::string& part) {
      if (!part.empty()) s += "\n" + part;
    };
    add(a.persona);
    add(history_block(a));
    if (a.plan) add(t("firm.plan.use", {{"strategy", *a.plan}}));
    if (!transcript.empty()) add(t("firm.transcript", {{"transcript", transcript}}));
    add(t("firm.decide", {{"round", std::to_string(r)}}));
    return s;
  }

  std::string plan_prompt(int i) const {
    const int j = 1 - i;
    const auto& own = series_[i];
    const auto bins_p = summarize_bins(own.price, p_.bin, p_.max_bins);
    const auto bins_q = summarize_bins(own.demand, p_.bin, p_.max_bins);
    const auto bins_pi = summarize_bins(own.profit, p_.bin, p_.max_bins);
    const auto bins_o = summarize_bins(series_[j].price, p_.bin, p_.max_bins);
    std::string stats;
    for (std::size_t k = 0; k < bins_p.size(); ++k) {
      stats += "Rounds #" + std::to_string(bins_p[k].first_round) + " - #" + std::to_string(bins_p[k].last_round) +
               ": [" + format_fixed(bins_p[k].mean) + ", " + format_fixed(bins_q[k].mean) + ", " +
               format_fixed(bins_pi[k].mean) + ", " + format_fixed(bins_o[k].mean) + "]\n";
    }
    std::string past;
    const auto& st = strategies_[i];
    const std::size_t from = st.size() > p_.max_strategies ? st.size() - p_.max_strategies : 0;
    for (std::size_t k = from; k < st.size(); ++k) {
      past += "Round #" + std::to_string(st[k].round) + ": " + st[k].text + "\n";
    }
    if (past.empty()) past = "None\n";
    return description(i) + "\n" +
           t("firm.plan.ask", {{"summary_statistics", stats}, {"past_strategies", past}});
  }

  std::string converse(RunContext& ctx) {
    const int r = ctx.round();
    ConversationPolicy policy;
    policy.speak_probability = 1.0;
    policy.max_utterances_per_speaker = p_.conversation_quota;
    policy.order = SpeakingOrder::fixed;
    auto render_lines = [&](const Transcript& tr) {
      std::string s;
      for (const auto& u : tr) s += (u.speaker == "firm1" ? p_.names[0] : p_.names[1]) + ": " + u.text + "\n";
      return s;
    };
    Transcript so_far;
    const Transcript tr = mediate_conversation(
        {"firm1", "firm2"}, policy, ctx,
        [&](const std::string& speaker, const Transcript& heard) -> std::optional<std::string> {
          const int i = speaker == "firm1" ? 0 : 1;
          // Both firms hear everything, so what was heard plus own lines is the whole discussion.
          (void)heard;
          std::string prompt = description(i);
          if (!agents_[i].persona.empty()) prompt += "\n" + agents_[i].persona;
          const std::string hist = history_block(agents_[i]);
          if (!hist.empty()) prompt += "\n" + hist;
          prompt += "\n" + t("firm.talk", {{"round", std::to_string(r)},
                                           {"transcript", so_far.empty() ? "(nothing yet)\n" : render_lines(so_far)}});
          const ActResult res = act_text(agents_[i], prompt, ParserSpec::free_text(), ctx);
          if (!res.action.conforming) return std::nullopt;
          std::string text = res.action.raw;
          while (!text.empty() && (text.back() == '\n' || text.back() == ' ')) text.pop_back();
          Utterance u;
          u.speaker = speaker;
          u.text = text;
          so_far.push_back(u);
          return text;
        });
    for (const auto& u : tr) transcript_.push_back({r, u.turn, u.speaker, u.text});
    return render_lines(tr);
  }

  FirmParams p_;
  const TemplateRegistry& templates_;
  std::array<double, 2> pb_{}, pm_{};
  std::array<AgentState, 2> agents_;
  std::array<FirmSeries, 2> series_;
  std::array<std::vector<Strategy>, 2> strategies_;
  std::vector<Line> transcript_;
};

}  // namespace

std::unique_ptr<Scenario> make_scenario(const json& params, const TemplateRegistry& templates) {
  return std::make_unique<FirmScenario>(FirmParams::from_json(params), templates);
}

}  // namespace sabm::firm
