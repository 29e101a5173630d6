#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace sabm {

/// A prompt body with `{name}` placeholders. `{{` and `}}` stand for
/// literal braces. Names may contain letters, digits, spaces, `_`, `-`
/// and `.`.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  /// Declares exactly the placeholders found in the body.
  PromptTemplate(std::string id, std::string body);
  /// Throws UnknownPlaceholder if the body uses a name outside `declared`.
  PromptTemplate(std::string id, std::string body, std::set<std::string> declared);

  const std::string& id() const { return id_; }
  const std::string& body() const { return body_; }
  const std::set<std::string>& placeholders() const { return declared_; }
  bool has_placeholder(const std::string& name) const { return declared_.count(name) > 0; }

  /// Placeholder names in order of appearance (duplicates kept).
  static std::vector<std::string> scan(std::string_view body);

 private:
  std::string id_;
  std::string body_;
  std::set<std::string> declared_;
};

using Bindings = std::map<std::string, std::string>;

/// Exact substitution. Throws MissingBinding for any declared placeholder
/// with no binding; extra bindings are ignored.
std::string render(const PromptTemplate& tmpl, const Bindings& bindings);

/// Escapes braces so arbitrary text can become a placeholder-free body.
std::string escape_braces(std::string_view text);

enum class VariantKind { paraphrase, elements, objectives };

std::string_view to_string(VariantKind kind);
std::optional<VariantKind> variant_kind_from_string(std::string_view text);

struct PromptVariant {
  std::string base_id;
  VariantKind kind = VariantKind::paraphrase;
  std::string variant_id;
  std::string body;
};

class TemplateRegistry {
 public:
  void add(PromptTemplate tmpl);
  void add_variant(PromptVariant variant);

  bool contains(const std::string& id) const { return templates_.count(id) > 0; }
  const PromptTemplate& get(const std::string& id) const;

  /// Returns the variant as a renderable template with the base id.
  PromptTemplate select_variant(const std::string& base_id, VariantKind kind,
                                const std::string& variant_id) const;

  std::vector<PromptVariant> variants_of(const std::string& base_id) const;
  std::vector<std::string> ids() const;

  /// Loads `{id}.txt` templates and `{id}.{kind}.{variant}.txt` variants.
  /// Entries override anything already registered.
  void load_directory(const std::filesystem::path& dir);
  void save_directory(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, PromptTemplate> templates_;
  std::map<std::string, PromptVariant> variants_;  // key: base|kind|variant
};

/// Selection of one alteration applied to a run, e.g. guess.rules /
/// paraphrase / v1. Empty base_id means "no alteration".
struct VariantSelection {
  std::string base_id;
  VariantKind kind = VariantKind::paraphrase;
  std::string variant_id;

  bool empty() const { return base_id.empty(); }
  /// "base:kind:variant"
  static VariantSelection parse(std::string_view text);
  std::string str() const;
};

/// Template lookup honoring an optional variant selection.
PromptTemplate resolve_template(const TemplateRegistry& registry, const std::string& id,
                                const std::vector<VariantSelection>& selections);

// ---------------------------------------------------------------------------
// Variation classification

struct MetricSample {
  std::vector<double> values;
  std::vector<std::string> labels;
};

enum class VariationLevel { low, medium, high };

std::string_view to_string(VariationLevel level);

struct VariationVerdict {
  VariationLevel level = VariationLevel::low;
  std::string statistic;  // "modal_label" or "mann_whitney_u"
  double value = 0.0;
  std::optional<double> p_value;
  std::string baseline_mode;
  std::string variant_mode;
};

/// Most frequent label; ties go to the lexicographically smallest.
std::string modal_label(const std::vector<std::string>& labels);

/// high when modal labels differ, else medium when a two-sided
/// Mann-Whitney U test gives p < alpha on the values, else low.
VariationVerdict classify_variation(const MetricSample& baseline, const MetricSample& variant,
                                    double alpha = 0.05);

}  // namespace sabm
