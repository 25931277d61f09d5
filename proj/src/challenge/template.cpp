#include "termadventure/template.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "termadventure/text.hpp"

namespace ta {

namespace {

struct Position {
  std::size_t line = 1;
  std::size_t column = 1;
};

Position position_of(std::string_view source, std::size_t offset) {
  Position pos;
  for (std::size_t i = 0; i < offset && i < source.size(); ++i) {
    if (source[i] == '\n') {
      ++pos.line;
      pos.column = 1;
    } else {
      ++pos.column;
    }
  }
  return pos;
}

struct Token {
  enum class Kind { word, string, pipe, assign, comma };
  Kind kind;
  std::string text;
};

std::vector<Token> tokenize_action(std::string_view body, Position where) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < body.size()) {
    const char c = body[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '|') {
      tokens.push_back({Token::Kind::pipe, "|"});
      ++i;
    } else if (c == ',') {
      tokens.push_back({Token::Kind::comma, ","});
      ++i;
    } else if (c == ':' && i + 1 < body.size() && body[i + 1] == '=') {
      tokens.push_back({Token::Kind::assign, ":="});
      i += 2;
    } else if (c == '"') {
      std::string value;
      ++i;
      bool closed = false;
      while (i < body.size()) {
        char ch = body[i++];
        if (ch == '"') {
          closed = true;
          break;
        }
        if (ch == '\\' && i < body.size()) {
          ch = body[i++];
          if (ch == 'n') ch = '\n';
          else if (ch == 't') ch = '\t';
        }
        value.push_back(ch);
      }
      if (!closed) throw TemplateError("unterminated string literal", where.line, where.column);
      tokens.push_back({Token::Kind::string, std::move(value)});
    } else {
      const auto start = i;
      while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i])) && body[i] != '|' &&
             body[i] != ',' && body[i] != '"' && !(body[i] == ':' && i + 1 < body.size() && body[i + 1] == '=')) {
        ++i;
      }
      tokens.push_back({Token::Kind::word, std::string(body.substr(start, i - start))});
    }
  }
  return tokens;
}

using Command = std::vector<Token>;
using Pipeline = std::vector<Command>;

struct Node {
  enum class Kind { text, action, range };
  Kind kind = Kind::text;
  std::string text;
  Pipeline pipeline;
  std::string index_var;
  std::string value_var;
  std::vector<Node> children;
  Position where;

  static Node of(Kind kind, std::string text = {}) {
    Node node;
    node.kind = kind;
    node.text = std::move(text);
    return node;
  }
};

Pipeline parse_pipeline(std::span<const Token> tokens, Position where) {
  Pipeline pipeline(1);
  for (const auto& token : tokens) {
    if (token.kind == Token::Kind::pipe) {
      if (pipeline.back().empty()) throw TemplateError("empty command in pipeline", where.line, where.column);
      pipeline.emplace_back();
    } else if (token.kind == Token::Kind::assign || token.kind == Token::Kind::comma) {
      throw TemplateError("unexpected '" + token.text + "'", where.line, where.column);
    } else {
      pipeline.back().push_back(token);
    }
  }
  if (pipeline.back().empty()) throw TemplateError("empty action", where.line, where.column);
  return pipeline;
}

bool is_local_name(const Token& t) { return t.kind == Token::Kind::word && t.text.size() > 1 && t.text[0] == '$'; }

class Parser {
 public:
  explicit Parser(std::string_view source) : source_(source) {}

  std::vector<Node> parse() {
    std::vector<Node> root;
    std::vector<std::vector<Node>*> stack{&root};
    std::vector<Node*> open_ranges;
    std::size_t pos = 0;
    bool trim_next_text = false;

    while (pos <= source_.size()) {
      const auto open = source_.find("{{", pos);
      std::string_view text = source_.substr(pos, open == std::string_view::npos ? std::string_view::npos : open - pos);
      if (trim_next_text) text = ltrim(text);

      if (open == std::string_view::npos) {
        if (!text.empty()) stack.back()->push_back(Node::of(Node::Kind::text, std::string(text)));
        break;
      }

      const auto where = position_of(source_, open);
      auto close = source_.find("}}", open + 2);
      if (close == std::string_view::npos) throw TemplateError("unclosed '{{'", where.line, where.column);
      auto body = source_.substr(open + 2, close - open - 2);
      if (body.find("{{") != std::string_view::npos) {
        throw TemplateError("nested '{{' inside an action", where.line, where.column);
      }

      if (!body.empty() && body.front() == '-') {
        text = rtrim(text);
        body.remove_prefix(1);
      }
      trim_next_text = false;
      if (!body.empty() && body.back() == '-') {
        trim_next_text = true;
        body.remove_suffix(1);
      }
      if (!text.empty()) stack.back()->push_back(Node::of(Node::Kind::text, std::string(text)));

      const auto tokens = tokenize_action(body, where);
      if (tokens.empty()) throw TemplateError("empty action '{{ }}'", where.line, where.column);

      const auto& head = tokens.front();
      if (head.kind == Token::Kind::word && head.text == "end") {
        if (tokens.size() != 1) throw TemplateError("unexpected tokens after 'end'", where.line, where.column);
        if (open_ranges.empty()) throw TemplateError("'end' without matching 'range'", where.line, where.column);
        open_ranges.pop_back();
        stack.pop_back();
      } else if (head.kind == Token::Kind::word && head.text == "range") {
        auto node = Node::of(Node::Kind::range);
        node.where = where;
        std::span<const Token> rest(tokens.begin() + 1, tokens.end());
        // range [$i ,] $v := pipeline
        const auto assign = std::find_if(rest.begin(), rest.end(),
                                         [](const Token& t) { return t.kind == Token::Kind::assign; });
        if (assign != rest.end()) {
          const std::span<const Token> vars(rest.begin(), assign);
          if (vars.size() == 1 && is_local_name(vars[0])) {
            node.value_var = vars[0].text;
          } else if (vars.size() == 3 && is_local_name(vars[0]) && vars[1].kind == Token::Kind::comma &&
                     is_local_name(vars[2])) {
            node.index_var = vars[0].text;
            node.value_var = vars[2].text;
          } else {
            throw TemplateError("malformed range variables (expected `$i, $v :=` or `$v :=`)", where.line,
                                where.column);
          }
          rest = std::span<const Token>(assign + 1, rest.end());
        }
        if (rest.empty()) throw TemplateError("'range' needs a list to iterate", where.line, where.column);
        node.pipeline = parse_pipeline(rest, where);
        stack.back()->push_back(std::move(node));
        open_ranges.push_back(&stack.back()->back());
        stack.push_back(&stack.back()->back().children);
      } else if (head.kind == Token::Kind::word &&
                 (head.text == "if" || head.text == "else" || head.text == "with" || head.text == "define" ||
                  head.text == "template" || head.text == "block")) {
        throw TemplateError("unsupported action '" + head.text + "'", where.line, where.column);
      } else {
        auto node = Node::of(Node::Kind::action);
        node.where = where;
        node.pipeline = parse_pipeline(tokens, where);
        stack.back()->push_back(std::move(node));
      }
      pos = close + 2;
    }

    if (!open_ranges.empty()) {
      const auto where = open_ranges.back()->where;
      throw TemplateError("'range' without matching 'end'", where.line, where.column);
    }
    return root;
  }

 private:
  std::string_view source_;
};

class Executor {
 public:
  Executor(const TemplateVariables& vars, const FilterRegistry& filters) : vars_(vars), filters_(filters) {}

  void run(const std::vector<Node>& nodes, std::string& out) {
    for (const auto& node : nodes) {
      switch (node.kind) {
        case Node::Kind::text:
          out += node.text;
          break;
        case Node::Kind::action:
          out += render_value(evaluate(node.pipeline, node.where));
          break;
        case Node::Kind::range:
          run_range(node, out);
          break;
      }
    }
  }

 private:
  struct Scope {
    std::map<std::string, TemplateValue, std::less<>> locals;
    std::optional<TemplateValue> dot;
  };

  void run_range(const Node& node, std::string& out) {
    const auto value = evaluate(node.pipeline, node.where);
    const auto* items = std::get_if<std::vector<std::string>>(&value);
    if (!items) throw TemplateError("'range' over a scalar value", node.where.line, node.where.column);
    for (std::size_t i = 0; i < items->size(); ++i) {
      Scope scope;
      scope.dot = (*items)[i];
      if (!node.index_var.empty()) scope.locals[node.index_var] = std::to_string(i + 1);
      if (!node.value_var.empty()) scope.locals[node.value_var] = (*items)[i];
      scopes_.push_back(std::move(scope));
      run(node.children, out);
      scopes_.pop_back();
    }
  }

  TemplateValue operand(const Token& token, Position where) const {
    if (token.kind == Token::Kind::string) return token.text;
    const auto& text = token.text;
    if (text == ".") {
      for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
        if (it->dot) return *it->dot;
      }
      throw TemplateError("'.' used outside of 'range'", where.line, where.column);
    }
    if (text.front() == '$') {
      for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
        if (const auto found = it->locals.find(text); found != it->locals.end()) return found->second;
      }
      throw TemplateError("undefined variable '" + text + "'", where.line, where.column);
    }
    const std::string_view name = text.front() == '.' ? std::string_view(text).substr(1) : std::string_view(text);
    if (const auto found = vars_.bindings.find(name); found != vars_.bindings.end()) return found->second;
    throw TemplateError("undefined variable '" + std::string(name) + "'", where.line, where.column);
  }

  bool is_identifier(const Token& token) const {
    return token.kind == Token::Kind::word && !token.text.empty() &&
           (std::isalpha(static_cast<unsigned char>(token.text.front())) || token.text.front() == '_');
  }

  TemplateValue evaluate(const Pipeline& pipeline, Position where) const {
    std::optional<TemplateValue> piped;
    for (const auto& command : pipeline) {
      const auto& head = command.front();
      const TemplateFilter* filter = is_identifier(head) ? filters_.find(head.text) : nullptr;
      const bool must_be_filter = command.size() > 1 || piped.has_value();
      if (!filter && must_be_filter) {
        throw TemplateError("unknown filter '" + head.text + "'", where.line, where.column);
      }
      if (!filter) {
        piped = operand(head, where);
        continue;
      }
      std::vector<TemplateValue> args;
      for (std::size_t i = 1; i < command.size(); ++i) args.push_back(operand(command[i], where));
      if (piped) args.push_back(*piped);
      try {
        piped = (*filter)(args);
      } catch (const TemplateError&) {
        throw;
      } catch (const std::exception& e) {
        throw TemplateError(head.text + ": " + e.what(), where.line, where.column);
      }
    }
    return *piped;
  }

  const TemplateVariables& vars_;
  const FilterRegistry& filters_;
  std::vector<Scope> scopes_;
};

}  // namespace

TemplateError::TemplateError(const std::string& what, std::size_t line, std::size_t column)
    : std::runtime_error(line ? "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what
                              : what),
      line_(line),
      column_(column) {}

TemplateVariables parse_variables(std::string_view yaml) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::Exception& e) {
    throw TemplateError("variables file: " + e.msg, e.mark.line + 1, e.mark.column + 1);
  }
  TemplateVariables vars;
  if (!root || root.IsNull()) return vars;
  if (!root.IsMap()) throw TemplateError("variables file must be a mapping of names to values");
  for (const auto& entry : root) {
    const auto key = entry.first.as<std::string>();
    const auto& value = entry.second;
    if (value.IsScalar()) {
      vars.bindings[key] = value.as<std::string>();
    } else if (value.IsNull()) {
      vars.bindings[key] = std::string{};
    } else if (value.IsSequence()) {
      std::vector<std::string> items;
      for (const auto& item : value) {
        if (!item.IsScalar()) throw TemplateError("variable '" + key + "': lists may only hold scalars");
        items.push_back(item.as<std::string>());
      }
      vars.bindings[key] = std::move(items);
    } else {
      throw TemplateError("variable '" + key + "': nested mappings are not supported");
    }
  }
  return vars;
}

TemplateVariables load_variables(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot open variables file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_variables(buffer.str());
}

std::string render_value(const TemplateValue& value) {
  if (const auto* scalar = std::get_if<std::string>(&value)) return *scalar;
  const auto& items = std::get<std::vector<std::string>>(value);
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += "'" + items[i] + "'";
  }
  return out + "]";
}

std::vector<std::string> generate_levels(std::span<const std::string> items, std::string_view name_format) {
  if (items.empty()) throw TemplateError("generate_levels: empty item list");

  std::size_t slot = std::string_view::npos;
  bool by_index = true;
  std::size_t slots = 0;
  for (const std::string_view token : {std::string_view("{i}"), std::string_view("{v}")}) {
    for (auto at = name_format.find(token); at != std::string_view::npos; at = name_format.find(token, at + 1)) {
      ++slots;
      slot = at;
      by_index = token == "{i}";
    }
  }
  if (slots != 1) {
    throw TemplateError("generate_levels: name format '" + std::string(name_format) +
                        "' must contain exactly one {i} or {v} slot");
  }

  std::vector<std::string> names;
  names.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::string name(name_format);
    name.replace(slot, 3, by_index ? std::to_string(i + 1) : items[i]);
    names.push_back(std::move(name));
  }
  return names;
}

FilterRegistry FilterRegistry::with_defaults() {
  FilterRegistry registry;
  registry.add("generate_levels", [](std::span<const TemplateValue> args) -> TemplateValue {
    if (args.size() != 2) throw TemplateError("generate_levels expects a list and a name format");
    // Accept both `generate_levels list "fmt"` and `list | generate_levels "fmt"`.
    const auto* list = std::get_if<std::vector<std::string>>(&args[0]);
    const auto* format = std::get_if<std::string>(&args[1]);
    if (!list) {
      list = std::get_if<std::vector<std::string>>(&args[1]);
      format = std::get_if<std::string>(&args[0]);
    }
    if (!list || !format) throw TemplateError("generate_levels expects a list and a name format");
    return generate_levels(*list, *format);
  });
  return registry;
}

void FilterRegistry::add(std::string name, TemplateFilter filter) { filters_[std::move(name)] = std::move(filter); }

const TemplateFilter* FilterRegistry::find(std::string_view name) const {
  const auto it = filters_.find(name);
  return it == filters_.end() ? nullptr : &it->second;
}

std::string expand_template(std::string_view source, const TemplateVariables& vars, const FilterRegistry& filters) {
  const auto nodes = Parser(source).parse();
  std::string out;
  out.reserve(source.size());
  Executor(vars, filters).run(nodes, out);
  return out;
}

}  // namespace ta
