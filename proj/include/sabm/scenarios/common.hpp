#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sabm/promptkit.hpp"
#include "sabm/provider.hpp"

namespace sabm {

/// Reads {"model": {"model_type", "temperature", "max_tokens"}} with defaults.
LlmSettings settings_from_params(const nlohmann::json& params, LlmSettings defaults = {});

/// Reads {"variants": ["base:kind:variant", ...]}.
std::vector<VariantSelection> selections_from_params(const nlohmann::json& params);

bool has_selection(const std::vector<VariantSelection>& selections, const std::string& base_id,
                   const std::string& variant_id);

/// Last user message of a request (what the oracles read).
const std::string& last_user_text(const ChatRequest& request);

/// Renders `id` after variant resolution.
std::string render_id(const TemplateRegistry& templates, const std::vector<VariantSelection>& selections,
                      const std::string& id, const Bindings& bindings = {});

/// Joins the non-empty parts with single spaces.
std::string join_sentences(const std::vector<std::string>& parts);

std::string format_fixed(double value, int decimals = 2);

}  // namespace sabm
