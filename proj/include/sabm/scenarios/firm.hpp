#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sabm/provider.hpp"
#include "sabm/runtime.hpp"

namespace sabm::firm {

/// Linear differentiated-goods duopoly. Inverse demand p_i = a - beta q_i - d q_j.
struct MarketParams {
  double a = 14.0;
  double d = 1.0 / 300.0;
  double beta = 1.0 / 150.0;
  double c1 = 2.0;
  double c2 = 2.0;

  double alpha() const { return a * beta - a * d; }
  double b() const { return beta * beta - d * d; }
  void validate() const;

  static MarketParams from_json(const nlohmann::json& params);
};

/// (q1, q2) before clamping; may be negative for extreme prices.
std::pair<double, double> raw_demand(double p1, double p2, const MarketParams& m);
/// (q1, q2) clamped at zero.
std::pair<double, double> demand(double p1, double p2, const MarketParams& m);
double profit(double p, double c, double q);

/// Throws SingularParameters when 4 beta^2 == d^2.
std::pair<double, double> bertrand_price(const MarketParams& m);
/// Throws SingularParameters when beta == d.
std::pair<double, double> monopoly_price(const MarketParams& m);
/// argmax_p (p - cost) q(p, p_other) = (alpha + d p_other + beta cost) / (2 beta).
double best_response(double p_other, double cost, const MarketParams& m);

/// Scripted firm: posts the best response to the opponent's last price in
/// the prompt history, formatted with two decimals.
class FirmOracle final : public ScenarioOracle {
 public:
  explicit FirmOracle(MarketParams params = {}) : params_(params) {}
  std::string respond(const ChatRequest& request) const override;

 private:
  MarketParams params_;
};

void register_templates(TemplateRegistry& registry);
std::unique_ptr<Scenario> make_scenario(const nlohmann::json& params, const TemplateRegistry& templates);

}  // namespace sabm::firm
