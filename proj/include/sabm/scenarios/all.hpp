#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sabm/promptkit.hpp"
#include "sabm/provider.hpp"
#include "sabm/runtime.hpp"

namespace sabm {

/// Every scenario's templates and variants.
TemplateRegistry default_templates();
ScenarioRegistry default_scenarios();
/// Scripted backend with all four oracles registered. Firm market
/// parameters are read from `params` when given.
std::shared_ptr<ScriptedBackend> make_scripted_backend(const nlohmann::json& firm_params = nlohmann::json::object());

/// Per-scenario outcome used by prompt-alteration batches:
///   guess  guess count / behavior label
///   firm   mean price over the last 50 rounds of both firms / collusive|competitive
///   evac   mean escape round / exit used by most evacuees
///   plea   overall accept fraction / majority decision
struct CanonicalMetric {
  double value = 0.0;
  std::string label;
};
CanonicalMetric canonical_metric(const std::string& scenario, const nlohmann::json& metrics);

struct ValidationArm {
  VariantSelection variant;  // empty for the baseline arm
  std::vector<double> values;
  std::vector<std::string> labels;
  int aborted = 0;
};

struct ValidationBatch {
  std::string scenario;
  nlohmann::json params = nlohmann::json::object();
  std::vector<VariantSelection> variants;
  int runs_per_arm = 10;
  std::uint64_t first_seed = 1;
  int max_rounds = 0;
  int jobs = 1;
  double alpha = 0.05;
  std::filesystem::path output_dir = "out/validate";
};

struct ValidationReport {
  ValidationArm baseline;
  std::vector<ValidationArm> arms;
  std::vector<VariationVerdict> verdicts;  // one per arm
};

/// Runs the baseline and every variant arm with seeds first_seed.. over a
/// pool of `jobs` workers. Aggregation does not depend on completion order.
ValidationReport run_validation(const ValidationBatch& batch, Backend& backend, const ScenarioRegistry& scenarios,
                                const TemplateRegistry& templates);

nlohmann::json to_json_value(const ValidationReport& report);

}  // namespace sabm
