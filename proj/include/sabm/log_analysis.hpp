#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sabm/event_log.hpp"

namespace sabm {

struct LogAnalysis {
  std::string scenario;  // detected from the world records
  nlohmann::json summary = nlohmann::json::object();
  std::vector<std::filesystem::path> files;
};

/// Rebuilds per-round series from a journal's world records and exports
/// them. `metrics` is the run's metrics file when available (firm reference
/// prices are read from it, otherwise the default market is assumed).
LogAnalysis analyze_log(const std::vector<EventRecord>& records, const nlohmann::json& metrics,
                        const std::filesystem::path& out_dir);

}  // namespace sabm
