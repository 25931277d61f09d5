#pragma once

// Classroom monitor: folds engine events into per-student state and answers
// the instructor's questions about a lab (who is where, who is stuck, which
// levels are hard, what grades follow from the passes).

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "termadventure/analytics.hpp"
#include "termadventure/event.hpp"

namespace ta {

struct StudentState {
  std::string user;
  std::string current_level;
  std::string last_command;
  std::size_t unsuccessful_attempts = 0;  ///< on current_level
  Timestamp last_activity{};
  bool help_requested = false;
  bool finished = false;
  std::set<std::string> passed_levels;
  bool on_passed_leaf = false;  ///< last pass had no successor; an exit now means finished

  friend bool operator==(const StudentState&, const StudentState&) = default;
};

/// Applies one event to `state`. The rules:
///  start   - current level := level_id (attempts reset when it changes)
///  command - a failed attempt on level_id
///  passed  - level_id joins passed_levels, attempts reset, current level
///            := extra["next_level"] (unchanged if absent: a leaf)
///  exit    - finished once the last pass was on a leaf
///  help    - help_requested := true
///  ack     - help_requested := false
/// Every event except ack counts as activity.
void fold_event(StudentState& state, const Event& event);

/// Folds `events` (any order) for `user` after sorting them canonically.
StudentState replay(const std::string& user, std::vector<Event> events);

nlohmann::json to_json(const StudentState& state);

struct StuckThresholds {
  std::chrono::seconds idle{600};
  std::size_t attempts = 10;
};

struct StuckFlag {
  std::string user;
  std::string reason;  ///< "help", "attempts" or "idle"

  friend bool operator==(const StuckFlag&, const StuckFlag&) = default;
};

/// One flag per (user, reason). Finished students are never idle.
std::vector<StuckFlag> detect_stuck(const std::vector<StudentState>& students, const StuckThresholds& thresholds,
                                    Timestamp now);

struct LevelStats {
  std::string level;
  std::size_t attempts = 0;  ///< command + passed events
  std::size_t failures = 0;  ///< command events
  std::size_t passes = 0;    ///< distinct users who passed
  std::set<std::string> stuck_users;  ///< asked for help here or failed >= threshold times

  friend bool operator==(const LevelStats&, const LevelStats&) = default;
};

/// Fold over a lab log; most failures first, then by level name.
std::vector<LevelStats> level_statistics(const std::vector<Event>& log, std::size_t attempt_threshold);

nlohmann::json to_json(const LevelStats& stats);

class GradingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// "lvl1:1,lvl2:2.5". Throws GradingError on malformed input.
std::map<std::string, double> parse_grading_scheme(std::string_view text);

/// CSV with header user,levels_passed,passed_levels,points,finished, rows by
/// user. An empty scheme gives one point per passed level. Throws
/// GradingError if the scheme names a level outside `known_levels`.
std::string grades_csv(const std::vector<StudentState>& students, const std::map<std::string, double>& scheme,
                       const std::set<std::string>& known_levels);

enum class IngestResult { accepted, duplicate };

/// Thread-safe store of every lab's event log and folded state. With a data
/// directory, each lab is persisted as `<lab>.jsonl` and reloaded on start.
class MonitorStore {
 public:
  explicit MonitorStore(std::optional<std::filesystem::path> data_dir = std::nullopt, StuckThresholds thresholds = {});

  /// Fills in a missing event_id or timestamp. Throws EventFormatError for
  /// events without a user or lab_id.
  IngestResult ingest(Event event);
  IngestResult ingest_json(const nlohmann::json& body);
  /// Records an ack from the instructor side.
  void acknowledge(const std::string& lab, const std::string& user);

  std::vector<std::string> labs() const;
  /// Students by user name.
  std::vector<StudentState> snapshot(const std::string& lab) const;
  std::vector<Event> history(const std::string& lab, const std::string& user) const;
  /// Whole lab log in canonical order.
  std::vector<Event> log(const std::string& lab) const;
  std::vector<LevelStats> statistics(const std::string& lab) const;
  std::vector<StuckFlag> stuck(const std::string& lab, Timestamp now) const;
  std::vector<StuckFlag> stuck(const std::string& lab, Timestamp now, const StuckThresholds& thresholds) const;
  std::string grades(const std::string& lab, const std::map<std::string, double>& scheme) const;

  /// Declares the lab's levels so grading schemes can name levels nobody
  /// has reached yet.
  void register_levels(const std::string& lab, const std::vector<std::string>& levels);
  std::set<std::string> known_levels(const std::string& lab) const;

  /// Commands that passed `level` (and with include_failures, the failed ones too).
  std::vector<Solution> solutions(const std::string& lab, const std::string& level, bool include_failures) const;

  const StuckThresholds& thresholds() const { return thresholds_; }

  /// Increases on every change.
  std::uint64_t version() const;
  /// Blocks until version() != since or the timeout passes; returns version().
  std::uint64_t wait_for_change(std::uint64_t since, std::chrono::milliseconds timeout) const;

 private:
  struct Lab {
    std::vector<Event> log;  ///< arrival order
    std::set<std::string> ids;
    std::map<std::string, std::vector<Event>> by_user;  ///< canonical order
    std::map<std::string, StudentState> students;
    std::set<std::string> registered_levels;
  };

  IngestResult apply(Event event, bool persist);
  void bump();
  std::filesystem::path lab_file(const std::string& lab, std::string_view suffix) const;
  const Lab* find(const std::string& lab) const;

  std::optional<std::filesystem::path> data_dir_;
  StuckThresholds thresholds_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Lab> labs_;

  mutable std::mutex version_mutex_;
  mutable std::condition_variable version_changed_;
  std::uint64_t version_ = 0;
};

/// JSON for the cluster view: per-solution cluster and coordinates, plus
/// the centroids, vocabulary and any warnings.
nlohmann::json to_json(const SolutionGroups& groups, Distance distance);

}  // namespace ta
