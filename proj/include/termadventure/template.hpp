#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ta {

/// A template value: a scalar or a flat list of scalars.
using TemplateValue = std::variant<std::string, std::vector<std::string>>;

struct TemplateVariables {
  std::map<std::string, TemplateValue, std::less<>> bindings;
};

class TemplateError : public std::runtime_error {
 public:
  TemplateError(const std::string& what, std::size_t line = 0, std::size_t column = 0);

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Reads a YAML mapping of scalars and flat lists.
TemplateVariables parse_variables(std::string_view yaml);
TemplateVariables load_variables(const std::filesystem::path& path);

/// Lists render as `['a', 'b']`, scalars as themselves.
std::string render_value(const TemplateValue& value);

/// One level name per item. `name_format` holds exactly one slot: `{i}` is
/// replaced by the 1-based item index, `{v}` by the item itself.
std::vector<std::string> generate_levels(std::span<const std::string> items, std::string_view name_format);

using TemplateFilter = std::function<TemplateValue(std::span<const TemplateValue> args)>;

class FilterRegistry {
 public:
  /// Registry holding the shipped filters (`generate_levels`).
  static FilterRegistry with_defaults();

  void add(std::string name, TemplateFilter filter);
  const TemplateFilter* find(std::string_view name) const;

 private:
  std::map<std::string, TemplateFilter, std::less<>> filters_;
};

/// Expands a challenge template.
///
/// Actions are written between `{{` and `}}`; `{{-` and `-}}` trim the
/// adjacent whitespace. Supported actions:
///
///   {{ name }} / {{ .name }}                 interpolation
///   {{ filter arg... }} / {{ x | filter arg }} filter call (piped value goes last)
///   {{ range $i, $v := list }} ... {{ end }}  iteration; $i counts from 1
///   {{ range list }} ... {{ end }}            iteration with `.` bound to the item
///
/// Arguments are variables, `$`-locals, `.`, or double-quoted strings.
std::string expand_template(std::string_view source, const TemplateVariables& vars,
                            const FilterRegistry& filters = FilterRegistry::with_defaults());

}  // namespace ta
