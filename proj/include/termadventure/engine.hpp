#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>

#include "termadventure/challenge.hpp"
#include "termadventure/delivery.hpp"
#include "termadventure/event.hpp"
#include "termadventure/render.hpp"
#include "termadventure/security.hpp"

namespace ta {

/// Shown in the prompt instead of a level name once the adventure is over.
inline constexpr std::string_view finished_label = "*done*";
inline constexpr std::string_view current_level_filename = "ta_current_level.txt";

/// Who and where the learner is.
struct SessionInfo {
  std::string user;
  std::string host;
  std::string ip;
  std::string lab_id;
  std::filesystem::path home;
  std::uint64_t seed = 0;

  /// Fills user, host, ip and home from the running system. `lab_id` and
  /// `seed` are left for the caller (see default_seed).
  static SessionInfo discover();
};

/// Stable per (user, challenge), so a restarted session takes the same path.
std::uint64_t default_seed(std::string_view user, std::string_view challenge);

/// The generator used to pick a successor of `level`. Depends only on the
/// seed and the level name, never on how many draws happened before.
std::mt19937_64 level_rng(std::uint64_t seed, std::string_view level);

/// Uniform choice from `level.next`; nullopt at a leaf.
std::optional<std::string> select_next_level(const Level& level, std::mt19937_64& rng);

/// Runs `test_command` with bash in `cwd` (default: the current directory)
/// with output discarded. Exit status 0 passes; anything else, including a
/// command that cannot be executed, fails.
bool evaluate_test(std::string_view test_command, const std::optional<std::filesystem::path>& cwd = {});

/// Challenge names end up inside PS1, so anything outside [A-Za-z0-9_.-]
/// becomes '_'.
std::string prompt_safe(std::string_view name);

/// `[<challenge>|<level>] \w $ ` in bash prompt syntax.
std::string format_prompt(std::string_view challenge, std::string_view level);

/// Reads a plain or encrypted challenge file (encrypted files are detected
/// by their header and opened with `key`).
ChallengeSpec load_challenge_file(const std::filesystem::path& path, std::string challenge_name,
                                  const ChallengeKey& key);

enum class TickAction {
  stay,     ///< test failed
  advance,  ///< moved to a successor
  finish,   ///< passed a leaf just now
  done,     ///< already finished earlier; nothing evaluated
};

struct TickResult {
  TickAction action = TickAction::stay;
  std::string level;  ///< the level the command was judged against
  std::string prompt;
};

struct EngineOptions {
  SaltTriple salts = SaltTriple::embedded();
  TypewriterOptions typewriter;
  SkipSource* skip = nullptr;
};

/// One learner's adventure. The progress record under `home` is the only
/// persistent state, so an Engine can be rebuilt for every prompt.
class Engine {
 public:
  /// Loads progress. A record that matches no level (tampered, or from a
  /// different build) restarts at the entry level and sets warning().
  Engine(ChallengeSpec spec, SessionInfo session, EventSink& events, std::ostream& out, EngineOptions options = {});

  const ChallengeSpec& spec() const { return spec_; }
  const SessionInfo& session() const { return session_; }
  const std::string& current_level() const { return current_; }
  bool finished() const { return finished_; }
  const std::optional<std::string>& warning() const { return warning_; }

  /// Session opened: emits `start`, prints the current level and writes the
  /// current-level file.
  void start();

  /// Applies the result of the current level's test to `last_command`.
  TickResult tick(std::string_view last_command, bool test_passed);
  /// Evaluates the current level's test in `cwd`, then ticks.
  TickResult step(std::string_view last_command, const std::optional<std::filesystem::path>& cwd = {});

  /// Current level text without delays.
  void print_again(std::ostream& out) const;
  /// Emits `help` and prints an acknowledgement to `out`.
  void request_help(std::ostream& out);
  std::string prompt() const;
  void write_current_level_file() const;

  /// Moves to `level` without evaluating anything (test setups only).
  void jump_to(std::string_view level);

 private:
  Event make_event(EventType type, std::string_view command) const;
  void save_progress() const;
  void show_level(bool animate) const;

  ChallengeSpec spec_;
  SessionInfo session_;
  EventSink& events_;
  std::ostream& out_;
  EngineOptions options_;
  std::string current_;
  bool finished_ = false;
  std::optional<std::string> warning_;
};

}  // namespace ta
