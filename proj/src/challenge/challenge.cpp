#include "termadventure/challenge.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "termadventure/text.hpp"

namespace ta {

namespace {

struct SourceLine {
  std::string_view text;
  std::size_t number;  // 1-based
};

bool is_delimiter(std::string_view line) {
  line = rtrim(line);
  return line.size() >= 5 && std::all_of(line.begin(), line.end(), [](char c) { return c == '-'; });
}

bool is_blank(std::string_view line) { return trim(line).empty(); }

// Where each level came from, so late checks can still point at a line.
struct LevelOrigin {
  std::size_t name_line = 0;
  std::size_t next_line = 0;
  std::size_t next_column = 0;
};

Level parse_block(const std::vector<SourceLine>& lines, LevelOrigin& origin) {
  std::size_t i = 0;
  while (i < lines.size() && is_blank(lines[i].text)) ++i;
  const std::size_t block_start = lines[i].number;

  Level level;
  bool has_name = false;
  bool has_test = false;
  bool has_next = false;

  for (; i < lines.size() && !is_blank(lines[i].text); ++i) {
    const auto& line = lines[i];
    const auto colon = line.text.find(':');
    if (colon == std::string_view::npos) {
      throw ChallengeError("expected `key: value` metadata line (separate the level text with a blank line)",
                           line.number, 1);
    }
    const auto key_start = line.text.find_first_not_of(" \t");
    const auto key = trim(line.text.substr(0, colon));
    const auto value_offset = line.text.find_first_not_of(" \t", colon + 1);
    const auto value = value_offset == std::string_view::npos ? std::string_view{}
                                                              : rtrim(line.text.substr(value_offset));
    const std::size_t value_column = (value_offset == std::string_view::npos ? colon + 1 : value_offset) + 1;

    if (key == "name") {
      if (has_name) throw ChallengeError("duplicate `name` key", line.number, key_start + 1);
      if (value.empty()) throw ChallengeError("empty level name", line.number, value_column);
      if (!is_valid_level_name(value)) {
        throw ChallengeError("invalid level name '" + std::string(value) + "' (allowed: letters, digits, '_', '.', '-')",
                             line.number, value_column);
      }
      level.name = std::string(value);
      origin.name_line = line.number;
      has_name = true;
    } else if (key == "test") {
      if (has_test) throw ChallengeError("duplicate `test` key", line.number, key_start + 1);
      if (value.empty()) throw ChallengeError("empty `test` command", line.number, value_column);
      level.test = std::string(value);
      has_test = true;
    } else if (key == "next") {
      if (has_next) throw ChallengeError("duplicate `next` key", line.number, key_start + 1);
      try {
        level.next = parse_next_list(value);
      } catch (const ChallengeError& e) {
        throw ChallengeError(e.what(), line.number, value_column + (e.column() ? e.column() - 1 : 0));
      }
      origin.next_line = line.number;
      origin.next_column = value_column;
      has_next = true;
    } else {
      throw ChallengeError("unknown metadata key '" + std::string(key) + "' (expected name, test or next)",
                           line.number, key_start + 1);
    }
  }

  if (!has_name) throw ChallengeError("level is missing `name`", block_start, 1);
  if (!has_test) throw ChallengeError("level '" + level.name + "' is missing `test`", block_start, 1);

  // Skip the separating blank line; everything after it is the body.
  if (i < lines.size()) ++i;
  std::string body;
  for (; i < lines.size(); ++i) {
    body.append(lines[i].text);
    body.push_back('\n');
  }
  level.body = std::string(rtrim(body));
  return level;
}

void throw_first_finding(const std::vector<ValidationFinding>& findings) {
  if (findings.empty()) return;
  std::string message = findings.front().message;
  if (findings.size() > 1) message += " (and " + std::to_string(findings.size() - 1) + " more problem(s))";
  throw ChallengeError(message);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ChallengeError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

ChallengeError::ChallengeError(const std::string& what, std::size_t line, std::size_t column)
    : std::runtime_error(line ? "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what
                              : what),
      line_(line),
      column_(column) {}

const Level* ChallengeSpec::find(std::string_view name) const {
  const auto it = std::find_if(levels.begin(), levels.end(), [&](const Level& l) { return l.name == name; });
  return it == levels.end() ? nullptr : &*it;
}

const Level& ChallengeSpec::at(std::string_view name) const {
  if (const auto* level = find(name)) return *level;
  throw std::out_of_range("no level named '" + std::string(name) + "'");
}

std::string_view to_string(ValidationFinding::Kind kind) {
  using K = ValidationFinding::Kind;
  switch (kind) {
    case K::empty_challenge: return "empty challenge";
    case K::missing_entry: return "missing entry level";
    case K::invalid_name: return "invalid level name";
    case K::missing_test: return "missing test";
    case K::duplicate_level: return "duplicate level";
    case K::duplicate_successor: return "duplicate successor";
    case K::undefined_successor: return "undefined successor";
    case K::cycle: return "cycle";
    case K::unreachable_level: return "unreachable level";
    case K::no_reachable_leaf: return "no reachable leaf";
  }
  return "unknown";
}

bool is_valid_level_name(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.' ||
           c == '-';
  });
}

std::vector<std::string> parse_next_list(std::string_view raw) {
  std::vector<std::string> names;
  const auto add_name = [&](std::string_view item, std::size_t offset) {
    const auto lead = item.find_first_not_of(" \t");
    if (lead == std::string_view::npos) throw ChallengeError("empty entry in `next` list", 0, offset + 1);
    offset += lead;
    item = trim(item);
    if (item.size() >= 2 && (item.front() == '\'' || item.front() == '"') && item.back() == item.front()) {
      item = item.substr(1, item.size() - 2);
      ++offset;
    }
    if (!is_valid_level_name(item)) {
      throw ChallengeError("invalid level name '" + std::string(item) + "' in `next`", 0, offset + 1);
    }
    if (std::find(names.begin(), names.end(), item) != names.end()) {
      throw ChallengeError("level '" + std::string(item) + "' listed twice in `next`", 0, offset + 1);
    }
    names.emplace_back(item);
  };

  const auto trimmed = trim(raw);
  if (trimmed.empty()) return names;
  const std::size_t base = raw.find_first_not_of(" \t");

  if (trimmed.front() != '[') {
    if (trimmed.find(',') != std::string_view::npos) {
      throw ChallengeError("multiple successors must be written as a bracketed list", 0, base + 1);
    }
    add_name(trimmed, base);
    return names;
  }
  if (trimmed.back() != ']') throw ChallengeError("unterminated `next` list (missing ']')", 0, base + trimmed.size());

  const auto inner = trimmed.substr(1, trimmed.size() - 2);
  if (trim(inner).empty()) return names;
  std::size_t start = 0;
  while (true) {
    const auto comma = inner.find(',', start);
    const auto item = inner.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    add_name(item, base + 1 + start);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return names;
}

ChallengeSpec parse_challenge(std::string_view source, std::string challenge_name) {
  std::vector<std::vector<SourceLine>> blocks(1);
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos < source.size()) {
    const auto eol = source.find('\n', pos);
    auto text = source.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    if (!text.empty() && text.back() == '\r') text.remove_suffix(1);
    ++number;
    if (is_delimiter(text)) {
      blocks.emplace_back();
    } else {
      blocks.back().push_back({text, number});
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }

  ChallengeSpec spec;
  spec.challenge_name = std::move(challenge_name);
  std::map<std::string, std::size_t, std::less<>> first_definition;
  std::vector<LevelOrigin> origins;

  for (const auto& block : blocks) {
    if (std::all_of(block.begin(), block.end(), [](const SourceLine& l) { return is_blank(l.text); })) continue;
    LevelOrigin origin;
    Level level = parse_block(block, origin);
    if (const auto it = first_definition.find(level.name); it != first_definition.end()) {
      throw ChallengeError("duplicate level name '" + level.name + "' (first defined on line " +
                               std::to_string(it->second) + ")",
                           origin.name_line, 7);
    }
    first_definition.emplace(level.name, origin.name_line);
    spec.levels.push_back(std::move(level));
    origins.push_back(origin);
  }

  if (spec.levels.empty()) throw ChallengeError("challenge defines no levels");
  spec.entry_level = spec.levels.front().name;

  for (std::size_t i = 0; i < spec.levels.size(); ++i) {
    for (const auto& successor : spec.levels[i].next) {
      if (!first_definition.contains(successor)) {
        throw ChallengeError("level '" + spec.levels[i].name + "' names undefined successor '" + successor + "'",
                             origins[i].next_line, origins[i].next_column);
      }
    }
  }

  throw_first_finding(validate_dag(spec));
  return spec;
}

ChallengeSpec parse_challenge_directory(const std::filesystem::path& dir, std::string challenge_name) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".yaml" || ext == ".yml")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

  ChallengeSpec spec;
  spec.challenge_name = std::move(challenge_name);
  for (const auto& file : files) {
    const auto where = file.filename().string();
    YAML::Node node;
    try {
      node = YAML::LoadFile(file.string());
    } catch (const YAML::Exception& e) {
      throw ChallengeError(where + ": " + e.msg, e.mark.line + 1, e.mark.column + 1);
    }
    if (!node.IsMap()) throw ChallengeError(where + ": expected a mapping with name, test, next and body");

    const auto scalar = [&](const char* key, bool required) -> std::string {
      const auto value = node[key];
      if (!value || value.IsNull()) {
        if (required) throw ChallengeError(where + ": missing `" + key + "`");
        return {};
      }
      if (!value.IsScalar()) throw ChallengeError(where + ": `" + key + "` must be a string");
      return value.as<std::string>();
    };

    Level level;
    level.name = std::string(trim(scalar("name", true)));
    if (!is_valid_level_name(level.name)) throw ChallengeError(where + ": invalid level name '" + level.name + "'");
    level.test = std::string(trim(scalar("test", true)));
    if (level.test.empty()) throw ChallengeError(where + ": empty `test` command");
    level.body = std::string(rtrim(node["body"] ? scalar("body", false) : scalar("text", false)));

    if (const auto next = node["next"]; next && !next.IsNull()) {
      if (next.IsSequence()) {
        for (const auto& item : next) {
          if (!item.IsScalar()) throw ChallengeError(where + ": `next` entries must be level names");
          const auto name = item.as<std::string>();
          if (std::find(level.next.begin(), level.next.end(), name) != level.next.end()) {
            throw ChallengeError(where + ": level '" + name + "' listed twice in `next`");
          }
          level.next.push_back(name);
        }
      } else if (next.IsScalar()) {
        try {
          level.next = parse_next_list(next.as<std::string>());
        } catch (const ChallengeError& e) {
          throw ChallengeError(where + ": " + e.what());
        }
      } else {
        throw ChallengeError(where + ": `next` must be a list of level names");
      }
    }
    spec.levels.push_back(std::move(level));
  }

  if (spec.levels.empty()) throw ChallengeError("no level files (*.yaml) in " + dir.string());
  spec.entry_level = spec.levels.front().name;
  throw_first_finding(validate_dag(spec));
  return spec;
}

ChallengeSpec load_challenge(const std::filesystem::path& path, std::string challenge_name) {
  if (challenge_name.empty()) challenge_name = path.stem().string();
  if (std::filesystem::is_directory(path)) return parse_challenge_directory(path, std::move(challenge_name));
  return parse_challenge(read_file(path), std::move(challenge_name));
}

std::string serialize_challenge(const ChallengeSpec& spec) {
  std::string out;
  bool first = true;
  for (const auto& level : spec.levels) {
    if (!first) out += "-----\n\n";
    first = false;
    out += "name: " + level.name + "\n";
    out += "test: " + level.test + "\n";
    if (!level.next.empty()) {
      out += "next: [";
      for (std::size_t i = 0; i < level.next.size(); ++i) {
        if (i) out += ", ";
        out += level.next[i];
      }
      out += "]\n";
    }
    out += "\n";
    if (!level.body.empty()) out += level.body + "\n";
    out += "\n";
  }
  return out;
}

std::vector<ValidationFinding> validate_dag(const ChallengeSpec& spec) {
  using Kind = ValidationFinding::Kind;
  std::vector<ValidationFinding> findings;
  if (spec.levels.empty()) {
    findings.push_back({Kind::empty_challenge, "challenge defines no levels", {}});
    return findings;
  }

  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < spec.levels.size(); ++i) {
    const auto& level = spec.levels[i];
    if (!is_valid_level_name(level.name)) {
      findings.push_back({Kind::invalid_name, "invalid level name '" + level.name + "'", {level.name}});
    }
    if (trim(level.test).empty()) {
      findings.push_back({Kind::missing_test, "level '" + level.name + "' has no test", {level.name}});
    }
    if (!index.emplace(level.name, i).second) {
      findings.push_back({Kind::duplicate_level, "level '" + level.name + "' is defined twice", {level.name}});
    }
  }

  const auto entry = index.find(spec.entry_level);
  if (entry == index.end()) {
    findings.push_back(
        {Kind::missing_entry, "entry level '" + spec.entry_level + "' is not defined", {spec.entry_level}});
  }

  for (const auto& level : spec.levels) {
    std::set<std::string_view> seen;
    for (const auto& successor : level.next) {
      if (!seen.insert(successor).second) {
        findings.push_back({Kind::duplicate_successor,
                            "level '" + level.name + "' lists successor '" + successor + "' twice",
                            {level.name, successor}});
      }
      if (!index.contains(successor)) {
        findings.push_back({Kind::undefined_successor,
                            "undefined successor '" + successor + "' in level '" + level.name + "'",
                            {level.name, successor}});
      }
    }
  }

  // Cycle detection: iterative DFS over every node, reporting each back edge.
  const std::size_t n = spec.levels.size();
  std::vector<std::vector<std::size_t>> edges(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (index.at(spec.levels[i].name) != i) continue;  // duplicates alias the first definition
    for (const auto& successor : spec.levels[i].next) {
      if (const auto it = index.find(successor); it != index.end()) edges[i].push_back(it->second);
    }
  }
  enum class Color { white, grey, black };
  std::vector<Color> color(n, Color::white);
  for (std::size_t root = 0; root < n; ++root) {
    if (color[root] != Color::white) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
    color[root] = Color::grey;
    while (!stack.empty()) {
      auto& [node, next_edge] = stack.back();
      if (next_edge == edges[node].size()) {
        color[node] = Color::black;
        stack.pop_back();
        continue;
      }
      const std::size_t target = edges[node][next_edge++];
      if (color[target] == Color::white) {
        color[target] = Color::grey;
        stack.emplace_back(target, 0);
      } else if (color[target] == Color::grey) {
        std::vector<std::string> path;
        auto it = std::find_if(stack.begin(), stack.end(), [&](const auto& frame) { return frame.first == target; });
        for (; it != stack.end(); ++it) path.push_back(spec.levels[it->first].name);
        std::string rendered;
        for (const auto& name : path) rendered += name + " -> ";
        rendered += spec.levels[target].name;
        findings.push_back({Kind::cycle, "cycle: " + rendered, path});
      }
    }
  }

  if (entry != index.end()) {
    std::vector<bool> reached(n, false);
    std::vector<std::size_t> queue{entry->second};
    reached[entry->second] = true;
    bool leaf_reached = false;
    while (!queue.empty()) {
      const auto node = queue.back();
      queue.pop_back();
      if (spec.levels[node].next.empty()) leaf_reached = true;
      for (const auto target : edges[node]) {
        if (!reached[target]) {
          reached[target] = true;
          queue.push_back(target);
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!reached[i] && index.at(spec.levels[i].name) == i) {
        findings.push_back({Kind::unreachable_level,
                            "level '" + spec.levels[i].name + "' is unreachable from '" + spec.entry_level + "'",
                            {spec.levels[i].name}});
      }
    }
    if (!leaf_reached) {
      findings.push_back({Kind::no_reachable_leaf,
                          "no final level (one without `next`) is reachable from '" + spec.entry_level + "'",
                          {spec.entry_level}});
    }
  }
  return findings;
}

}  // namespace ta
