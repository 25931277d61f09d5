#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ta {

/// One node of an adventure.
struct Level {
  std::string name;
  std::string test;               ///< shell command judged by its exit status
  std::vector<std::string> next;  ///< successor names; empty means leaf
  std::string body;               ///< markdown task text

  bool is_leaf() const { return next.empty(); }

  friend bool operator==(const Level&, const Level&) = default;
};

/// A parsed adventure. Levels keep file order; the first one is the entry.
struct ChallengeSpec {
  std::string challenge_name;
  std::string entry_level;
  std::vector<Level> levels;

  const Level* find(std::string_view name) const;
  const Level& at(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  friend bool operator==(const ChallengeSpec&, const ChallengeSpec&) = default;
};

/// Raised for malformed challenge files. Line and column are 1-based; zero
/// means the error is not tied to a position (e.g. a cycle).
class ChallengeError : public std::runtime_error {
 public:
  ChallengeError(const std::string& what, std::size_t line = 0, std::size_t column = 0);

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

struct ValidationFinding {
  enum class Kind {
    empty_challenge,
    missing_entry,
    invalid_name,
    missing_test,
    duplicate_level,
    duplicate_successor,
    undefined_successor,
    cycle,
    unreachable_level,
    no_reachable_leaf,
  };

  Kind kind;
  std::string message;
  std::vector<std::string> levels;  ///< offending level names
};

std::string_view to_string(ValidationFinding::Kind kind);

/// True when `name` is usable as a level name: [A-Za-z0-9_.-]+.
bool is_valid_level_name(std::string_view name);

/// Parses the multi-block challenge format and validates the resulting DAG.
/// Throws ChallengeError on syntax errors and on any validation finding.
ChallengeSpec parse_challenge(std::string_view source, std::string challenge_name = "challenge");

/// Loads one level per `*.yaml`/`*.yml` file in `dir`, ordered by file name.
/// Each file maps `name`, `test`, `next` and `body` to the Level fields.
ChallengeSpec parse_challenge_directory(const std::filesystem::path& dir,
                                        std::string challenge_name = "challenge");

/// Reads a challenge from a file or a per-level directory; the challenge
/// name defaults to the file stem.
ChallengeSpec load_challenge(const std::filesystem::path& path, std::string challenge_name = {});

/// Writes `spec` back in the multi-block format accepted by parse_challenge.
std::string serialize_challenge(const ChallengeSpec& spec);

/// Checks every structural invariant and returns one finding per violation.
/// An empty result means the DAG is valid.
std::vector<ValidationFinding> validate_dag(const ChallengeSpec& spec);

/// Successor names in `raw` (the text after `next:`), e.g. `[a, 'b', "c"]`
/// or a bare `a`. Throws ChallengeError with a column relative to `raw`.
std::vector<std::string> parse_next_list(std::string_view raw);

}  // namespace ta
