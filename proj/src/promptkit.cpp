#include "sabm/promptkit.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "sabm/analysis.hpp"
#include "sabm/error.hpp"

namespace sabm {

namespace {

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == ' ' ||
         c == '_' || c == '-' || c == '.';
}

// Walks the body calling on_text for literal runs and on_name for
// placeholders. A '{' that does not open a well-formed name is literal.
template <typename OnText, typename OnName>
void walk(std::string_view body, OnText on_text, OnName on_name) {
  std::size_t i = 0;
  while (i < body.size()) {
    const char c = body[i];
    if (c == '{') {
      if (i + 1 < body.size() && body[i + 1] == '{') {
        on_text(std::string_view("{"));
        i += 2;
        continue;
      }
      std::size_t j = i + 1;
      while (j < body.size() && is_name_char(body[j])) ++j;
      if (j < body.size() && body[j] == '}' && j > i + 1) {
        on_name(body.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
      on_text(std::string_view("{"));
      ++i;
    } else if (c == '}') {
      on_text(std::string_view("}"));
      i += (i + 1 < body.size() && body[i + 1] == '}') ? 2 : 1;
    } else {
      std::size_t j = i;
      while (j < body.size() && body[j] != '{' && body[j] != '}') ++j;
      on_text(body.substr(i, j - i));
      i = j;
    }
  }
}

std::string variant_key(const std::string& base, VariantKind kind, const std::string& variant) {
  return base + "|" + std::string(to_string(kind)) + "|" + variant;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  // Editors add a trailing newline; bodies never end with one.
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

std::vector<std::string> PromptTemplate::scan(std::string_view body) {
  std::vector<std::string> names;
  walk(body, [](std::string_view) {}, [&](std::string_view n) { names.emplace_back(n); });
  return names;
}

PromptTemplate::PromptTemplate(std::string id, std::string body) : id_(std::move(id)), body_(std::move(body)) {
  for (auto& n : scan(body_)) declared_.insert(std::move(n));
}

PromptTemplate::PromptTemplate(std::string id, std::string body, std::set<std::string> declared)
    : id_(std::move(id)), body_(std::move(body)), declared_(std::move(declared)) {
  for (const auto& n : scan(body_)) {
    if (!declared_.count(n)) throw UnknownPlaceholder(n);
  }
}

std::string render(const PromptTemplate& tmpl, const Bindings& bindings) {
  for (const auto& name : tmpl.placeholders()) {
    if (!bindings.count(name)) throw MissingBinding(name);
  }
  std::string out;
  out.reserve(tmpl.body().size() + 64);
  walk(
      tmpl.body(), [&](std::string_view text) { out.append(text); },
      [&](std::string_view name) {
        auto it = bindings.find(std::string(name));
        if (it == bindings.end() || !tmpl.has_placeholder(it->first)) throw UnknownPlaceholder(std::string(name));
        out.append(it->second);
      });
  return out;
}

std::string escape_braces(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '{') {
      out += "{{";
    } else if (c == '}') {
      out += "}}";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string_view to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::paraphrase: return "paraphrase";
    case VariantKind::elements: return "elements";
    case VariantKind::objectives: return "objectives";
  }
  return "paraphrase";
}

std::optional<VariantKind> variant_kind_from_string(std::string_view text) {
  if (text == "paraphrase") return VariantKind::paraphrase;
  if (text == "elements") return VariantKind::elements;
  if (text == "objectives") return VariantKind::objectives;
  return std::nullopt;
}

void TemplateRegistry::add(PromptTemplate tmpl) {
  auto id = tmpl.id();
  templates_.insert_or_assign(std::move(id), std::move(tmpl));
}

void TemplateRegistry::add_variant(PromptVariant variant) {
  auto key = variant_key(variant.base_id, variant.kind, variant.variant_id);
  variants_.insert_or_assign(std::move(key), std::move(variant));
}

const PromptTemplate& TemplateRegistry::get(const std::string& id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw UnknownVariant("unknown template '" + id + "'");
  return it->second;
}

PromptTemplate TemplateRegistry::select_variant(const std::string& base_id, VariantKind kind,
                                                const std::string& variant_id) const {
  auto it = variants_.find(variant_key(base_id, kind, variant_id));
  if (it == variants_.end()) {
    throw UnknownVariant("unknown variant " + base_id + "." + std::string(to_string(kind)) + "." + variant_id);
  }
  return PromptTemplate(base_id, it->second.body);
}

std::vector<PromptVariant> TemplateRegistry::variants_of(const std::string& base_id) const {
  std::vector<PromptVariant> out;
  for (const auto& [k, v] : variants_) {
    if (v.base_id == base_id) out.push_back(v);
  }
  return out;
}

std::vector<std::string> TemplateRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : templates_) out.push_back(k);
  return out;
}

void TemplateRegistry::load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("template directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const std::string stem = p.stem().string();
    // {id}.{kind}.{variant} when the second-to-last component is a kind.
    const auto last = stem.rfind('.');
    if (last != std::string::npos && last > 0) {
      const auto prev = stem.rfind('.', last - 1);
      if (prev != std::string::npos) {
        auto kind = variant_kind_from_string(std::string_view(stem).substr(prev + 1, last - prev - 1));
        if (kind) {
          add_variant({stem.substr(0, prev), *kind, stem.substr(last + 1), read_file(p)});
          continue;
        }
      }
    }
    add(PromptTemplate(stem, read_file(p)));
  }
}

void TemplateRegistry::save_directory(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << body << "\n";
  };
  for (const auto& [id, t] : templates_) write(dir / (id + ".txt"), t.body());
  for (const auto& [k, v] : variants_) {
    write(dir / (v.base_id + "." + std::string(to_string(v.kind)) + "." + v.variant_id + ".txt"), v.body);
  }
}

VariantSelection VariantSelection::parse(std::string_view text) {
  VariantSelection sel;
  const auto a = text.find(':');
  const auto b = a == std::string_view::npos ? a : text.find(':', a + 1);
  if (a == std::string_view::npos || b == std::string_view::npos) {
    throw ConfigError("variant selection must look like base:kind:variant, got '" + std::string(text) + "'");
  }
  sel.base_id = std::string(text.substr(0, a));
  auto kind = variant_kind_from_string(text.substr(a + 1, b - a - 1));
  if (!kind) throw ConfigError("unknown variant kind in '" + std::string(text) + "'");
  sel.kind = *kind;
  sel.variant_id = std::string(text.substr(b + 1));
  return sel;
}

std::string VariantSelection::str() const {
  return base_id + ":" + std::string(to_string(kind)) + ":" + variant_id;
}

PromptTemplate resolve_template(const TemplateRegistry& registry, const std::string& id,
                                const std::vector<VariantSelection>& selections) {
  for (const auto& sel : selections) {
    if (sel.base_id == id) return registry.select_variant(sel.base_id, sel.kind, sel.variant_id);
  }
  return registry.get(id);
}

// ---------------------------------------------------------------------------

std::string_view to_string(VariationLevel level) {
  switch (level) {
    case VariationLevel::low: return "low";
    case VariationLevel::medium: return "medium";
    case VariationLevel::high: return "high";
  }
  return "low";
}

std::string modal_label(const std::vector<std::string>& labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  std::string best;
  std::size_t best_n = 0;
  for (const auto& [label, n] : counts) {
    if (n > best_n) {
      best = label;
      best_n = n;
    }
  }
  return best;
}

VariationVerdict classify_variation(const MetricSample& baseline, const MetricSample& variant, double alpha) {
  if (baseline.values.empty() || variant.values.empty()) throw EmptySample("metric sample is empty");
  if (baseline.labels.empty() || variant.labels.empty()) throw EmptySample("behavior labels are empty");
  VariationVerdict v;
  v.baseline_mode = modal_label(baseline.labels);
  v.variant_mode = modal_label(variant.labels);
  if (v.baseline_mode != v.variant_mode) {
    v.level = VariationLevel::high;
    v.statistic = "modal_label";
    v.value = 1.0;
    return v;
  }
  const auto mw = mann_whitney_u(baseline.values, variant.values);
  v.statistic = "mann_whitney_u";
  v.value = mw.u;
  v.p_value = mw.p_two_sided;
  v.level = mw.p_two_sided < alpha ? VariationLevel::medium : VariationLevel::low;
  return v;
}

}  // namespace sabm
