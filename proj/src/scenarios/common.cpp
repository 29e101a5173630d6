#include "sabm/scenarios/common.hpp"

#include <cstdio>

#include "sabm/error.hpp"

namespace sabm {

using nlohmann::json;

LlmSettings settings_from_params(const json& params, LlmSettings defaults) {
  if (params.contains("model")) {
    const auto& m = params["model"];
    defaults.model_type = m.value("model_type", defaults.model_type);
    defaults.temperature = m.value("temperature", defaults.temperature);
    defaults.max_tokens = m.value("max_tokens", defaults.max_tokens);
  }
  defaults.validate();
  return defaults;
}

std::vector<VariantSelection> selections_from_params(const json& params) {
  std::vector<VariantSelection> out;
  if (!params.contains("variants")) return out;
  for (const auto& v : params["variants"]) out.push_back(VariantSelection::parse(v.get<std::string>()));
  return out;
}

bool has_selection(const std::vector<VariantSelection>& selections, const std::string& base_id,
                   const std::string& variant_id) {
  for (const auto& s : selections) {
    if (s.base_id == base_id && s.variant_id == variant_id) return true;
  }
  return false;
}

const std::string& last_user_text(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == Role::user) {
      // A format-reminder retry follows the original prompt; read the prompt.
      auto prev = std::next(it);
      if (prev != request.messages.rend() && prev->role == Role::assistant) {
        for (auto jt = std::next(prev); jt != request.messages.rend(); ++jt) {
          if (jt->role == Role::user) return jt->content;
        }
      }
      return it->content;
    }
  }
  throw ProviderError("request has no user message");
}

std::string render_id(const TemplateRegistry& templates, const std::vector<VariantSelection>& selections,
                      const std::string& id, const Bindings& bindings) {
  return render(resolve_template(templates, id, selections), bindings);
}

std::string join_sentences(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

}  // namespace sabm
