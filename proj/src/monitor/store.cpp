#include "termadventure/monitor.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace ta {

namespace {

std::string format_points(double points) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, points);
  return std::string(buffer, result.ptr);
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\r\n") == std::string::npos) return text;
  std::string quoted = "\"";
  for (const char c : text) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

std::string trim(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  return std::string(text);
}

std::string file_safe(const std::string& lab) {
  std::string name;
  for (const unsigned char c : lab) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      name += static_cast<char>(c);
    } else {
      char hex[4];
      std::snprintf(hex, sizeof hex, "%%%02X", c);
      name += hex;
    }
  }
  if (name.empty() || name[0] == '.') name = "%" + name;
  return name;
}

}  // namespace

void fold_event(StudentState& state, const Event& event) {
  if (state.user.empty()) state.user = event.user;
  if (event.type != EventType::ack) state.last_activity = event.timestamp;
  const auto enter = [&](const std::string& level) {
    if (level.empty() || level == state.current_level) return;
    state.current_level = level;
    state.unsuccessful_attempts = 0;
  };
  switch (event.type) {
    case EventType::start:
      enter(event.level_id);
      break;
    case EventType::command:
      enter(event.level_id);
      state.last_command = event.command_text;
      ++state.unsuccessful_attempts;
      break;
    case EventType::passed: {
      if (!event.level_id.empty()) state.passed_levels.insert(event.level_id);
      state.last_command = event.command_text;
      state.unsuccessful_attempts = 0;
      const auto next = event.extra.find("next_level");
      if (next != event.extra.end() && !next->second.empty()) {
        state.current_level = next->second;
        state.on_passed_leaf = false;
      } else {
        if (!event.level_id.empty()) state.current_level = event.level_id;
        state.on_passed_leaf = true;
      }
      break;
    }
    case EventType::exit:
      if (state.on_passed_leaf) state.finished = true;
      break;
    case EventType::help:
      enter(event.level_id);
      state.help_requested = true;
      break;
    case EventType::ack:
      state.help_requested = false;
      break;
  }
}

StudentState replay(const std::string& user, std::vector<Event> events) {
  std::sort(events.begin(), events.end(), event_order);
  StudentState state;
  state.user = user;
  for (const auto& e : events) fold_event(state, e);
  return state;
}

nlohmann::json to_json(const StudentState& state) {
  return {{"user", state.user},
          {"current_level", state.current_level},
          {"last_command", state.last_command},
          {"unsuccessful_attempts", state.unsuccessful_attempts},
          {"last_activity", format_timestamp(state.last_activity)},
          {"help_requested", state.help_requested},
          {"finished", state.finished},
          {"passed_levels", std::vector<std::string>(state.passed_levels.begin(), state.passed_levels.end())}};
}

std::vector<StuckFlag> detect_stuck(const std::vector<StudentState>& students, const StuckThresholds& thresholds,
                                    Timestamp now) {
  std::vector<StuckFlag> flags;
  for (const auto& s : students) {
    if (s.help_requested) flags.push_back({s.user, "help"});
    if (!s.finished && s.unsuccessful_attempts >= thresholds.attempts) flags.push_back({s.user, "attempts"});
    if (!s.finished && now - s.last_activity > thresholds.idle) flags.push_back({s.user, "idle"});
  }
  return flags;
}

std::vector<LevelStats> level_statistics(const std::vector<Event>& log, std::size_t attempt_threshold) {
  std::map<std::string, LevelStats> by_level;
  std::map<std::pair<std::string, std::string>, std::size_t> failures_by_user;
  std::map<std::string, std::set<std::string>> passers;
  for (const auto& e : log) {
    if (e.level_id.empty()) continue;
    if (e.type != EventType::command && e.type != EventType::passed && e.type != EventType::help) continue;
    auto& stats = by_level[e.level_id];
    stats.level = e.level_id;
    if (e.type == EventType::command) {
      ++stats.attempts;
      ++stats.failures;
      if (++failures_by_user[{e.level_id, e.user}] >= attempt_threshold) stats.stuck_users.insert(e.user);
    } else if (e.type == EventType::passed) {
      ++stats.attempts;
      passers[e.level_id].insert(e.user);
    } else {
      stats.stuck_users.insert(e.user);
    }
  }
  std::vector<LevelStats> result;
  for (auto& [level, stats] : by_level) {
    stats.passes = passers[level].size();
    result.push_back(std::move(stats));
  }
  std::stable_sort(result.begin(), result.end(),
                   [](const LevelStats& a, const LevelStats& b) { return a.failures > b.failures; });
  return result;
}

nlohmann::json to_json(const LevelStats& stats) {
  return {{"level", stats.level},
          {"attempts", stats.attempts},
          {"failures", stats.failures},
          {"passes", stats.passes},
          {"stuck_users", std::vector<std::string>(stats.stuck_users.begin(), stats.stuck_users.end())}};
}

std::map<std::string, double> parse_grading_scheme(std::string_view text) {
  std::map<std::string, double> scheme;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    const auto item = trim(text.substr(start, end - start));
    start = end + 1;
    if (item.empty()) continue;
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw GradingError("grading entry '" + item + "' is not level:points");
    const auto level = trim(std::string_view(item).substr(0, colon));
    const auto value = trim(std::string_view(item).substr(colon + 1));
    double points = 0;
    const auto parsed = std::from_chars(value.data(), value.data() + value.size(), points);
    if (level.empty() || value.empty() || parsed.ec != std::errc() || parsed.ptr != value.data() + value.size()) {
      throw GradingError("grading entry '" + item + "' is not level:points");
    }
    if (!scheme.emplace(level, points).second) throw GradingError("level '" + level + "' is graded twice");
  }
  return scheme;
}

std::string grades_csv(const std::vector<StudentState>& students, const std::map<std::string, double>& scheme,
                       const std::set<std::string>& known_levels) {
  for (const auto& [level, points] : scheme) {
    if (!known_levels.count(level)) throw GradingError("grading scheme names unknown level '" + level + "'");
  }
  std::vector<const StudentState*> rows;
  for (const auto& s : students) rows.push_back(&s);
  std::sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) { return a->user < b->user; });

  std::string csv = "user,levels_passed,passed_levels,points,finished\n";
  for (const auto* s : rows) {
    double points = 0;
    std::string joined;
    for (const auto& level : s->passed_levels) {
      if (scheme.empty()) {
        points += 1;
      } else if (const auto it = scheme.find(level); it != scheme.end()) {
        points += it->second;
      }
      joined += (joined.empty() ? "" : ";") + level;
    }
    csv += csv_field(s->user) + "," + std::to_string(s->passed_levels.size()) + "," + csv_field(joined) + "," +
           format_points(points) + "," + (s->finished ? "true" : "false") + "\n";
  }
  return csv;
}

MonitorStore::MonitorStore(std::optional<std::filesystem::path> data_dir, StuckThresholds thresholds)
    : data_dir_(std::move(data_dir)), thresholds_(thresholds) {
  if (!data_dir_) return;
  std::filesystem::create_directories(*data_dir_);
  for (const auto& entry : std::filesystem::directory_iterator(*data_dir_)) {
    const auto path = entry.path();
    std::ifstream in(path);
    std::string line;
    if (path.extension() == ".jsonl") {
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
          apply(event_from_json(nlohmann::json::parse(line)), false);
        } catch (const std::exception&) {
          // A torn last line from a crash; the rest of the log is still good.
        }
      }
    } else if (path.extension() == ".levels") {
      std::string lab;
      if (!std::getline(in, lab)) continue;
      auto& known = labs_[lab].registered_levels;
      while (std::getline(in, line)) {
        if (!line.empty()) known.insert(line);
      }
    }
  }
}

std::filesystem::path MonitorStore::lab_file(const std::string& lab, std::string_view suffix) const {
  return *data_dir_ / (file_safe(lab) + std::string(suffix));
}

IngestResult MonitorStore::apply(Event event, bool persist) {
  if (event.user.empty()) throw EventFormatError("missing 'user'");
  if (event.lab_id.empty()) throw EventFormatError("missing 'lab_id'");
  if (event.event_id.empty()) event.event_id = generate_event_id();
  if (event.timestamp == Timestamp{}) event.timestamp = now_utc();

  auto& lab = labs_[event.lab_id];
  if (!lab.ids.insert(event.event_id).second) return IngestResult::duplicate;

  if (persist && data_dir_) {
    std::ofstream out(lab_file(event.lab_id, ".jsonl"), std::ios::app);
    out << to_json(event).dump() << '\n';
  }
  auto& events = lab.by_user[event.user];
  const auto position = std::upper_bound(events.begin(), events.end(), event, event_order);
  const bool in_order = position == events.end();
  events.insert(position, event);
  auto& state = lab.students[event.user];
  if (in_order) {
    fold_event(state, event);
  } else {
    state = replay(event.user, events);
  }
  lab.log.push_back(std::move(event));
  return IngestResult::accepted;
}

void MonitorStore::bump() {
  {
    std::lock_guard lock(version_mutex_);
    ++version_;
  }
  version_changed_.notify_all();
}

IngestResult MonitorStore::ingest(Event event) {
  IngestResult result;
  {
    std::unique_lock lock(mutex_);
    result = apply(std::move(event), true);
  }
  if (result == IngestResult::accepted) bump();
  return result;
}

IngestResult MonitorStore::ingest_json(const nlohmann::json& body) { return ingest(event_from_json(body)); }

void MonitorStore::acknowledge(const std::string& lab, const std::string& user) {
  Event ack;
  ack.type = EventType::ack;
  ack.user = user;
  ack.lab_id = lab;
  ack.timestamp = now_utc();
  {
    std::shared_lock lock(mutex_);
    // Keep the ack after everything the student sent, even with clock skew.
    if (const auto* l = find(lab)) {
      if (const auto it = l->by_user.find(user); it != l->by_user.end() && !it->second.empty()) {
        ack.timestamp = std::max(ack.timestamp, it->second.back().timestamp + std::chrono::microseconds(1));
      }
    }
  }
  ingest(std::move(ack));
}

const MonitorStore::Lab* MonitorStore::find(const std::string& lab) const {
  const auto it = labs_.find(lab);
  return it == labs_.end() ? nullptr : &it->second;
}

std::vector<std::string> MonitorStore::labs() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> names;
  for (const auto& [name, lab] : labs_) names.push_back(name);
  return names;
}

std::vector<StudentState> MonitorStore::snapshot(const std::string& lab) const {
  std::shared_lock lock(mutex_);
  std::vector<StudentState> students;
  if (const auto* l = find(lab)) {
    for (const auto& [user, state] : l->students) students.push_back(state);
  }
  return students;
}

std::vector<Event> MonitorStore::history(const std::string& lab, const std::string& user) const {
  std::shared_lock lock(mutex_);
  if (const auto* l = find(lab)) {
    if (const auto it = l->by_user.find(user); it != l->by_user.end()) return it->second;
  }
  return {};
}

std::vector<Event> MonitorStore::log(const std::string& lab) const {
  std::vector<Event> events;
  {
    std::shared_lock lock(mutex_);
    if (const auto* l = find(lab)) events = l->log;
  }
  std::sort(events.begin(), events.end(), event_order);
  return events;
}

std::vector<LevelStats> MonitorStore::statistics(const std::string& lab) const {
  return level_statistics(log(lab), thresholds_.attempts);
}

std::vector<StuckFlag> MonitorStore::stuck(const std::string& lab, Timestamp now) const {
  return stuck(lab, now, thresholds_);
}

std::vector<StuckFlag> MonitorStore::stuck(const std::string& lab, Timestamp now,
                                           const StuckThresholds& thresholds) const {
  return detect_stuck(snapshot(lab), thresholds, now);
}

std::string MonitorStore::grades(const std::string& lab, const std::map<std::string, double>& scheme) const {
  return grades_csv(snapshot(lab), scheme, known_levels(lab));
}

void MonitorStore::register_levels(const std::string& lab, const std::vector<std::string>& levels) {
  {
    std::unique_lock lock(mutex_);
    auto& known = labs_[lab].registered_levels;
    known.insert(levels.begin(), levels.end());
    if (data_dir_) {
      std::ofstream out(lab_file(lab, ".levels"), std::ios::trunc);
      out << lab << '\n';
      for (const auto& level : known) out << level << '\n';
    }
  }
  bump();
}

std::set<std::string> MonitorStore::known_levels(const std::string& lab) const {
  std::shared_lock lock(mutex_);
  std::set<std::string> levels;
  if (const auto* l = find(lab)) {
    levels = l->registered_levels;
    for (const auto& e : l->log) {
      if (!e.level_id.empty()) levels.insert(e.level_id);
      if (const auto next = e.extra.find("next_level"); next != e.extra.end() && !next->second.empty()) {
        levels.insert(next->second);
      }
    }
  }
  return levels;
}

std::vector<Solution> MonitorStore::solutions(const std::string& lab, const std::string& level,
                                              bool include_failures) const {
  std::vector<Solution> found;
  for (const auto& e : log(lab)) {
    if (e.level_id != level) continue;
    if (e.type == EventType::passed || (include_failures && e.type == EventType::command)) {
      found.push_back({e.user, e.command_text});
    }
  }
  return found;
}

std::uint64_t MonitorStore::version() const {
  std::lock_guard lock(version_mutex_);
  return version_;
}

std::uint64_t MonitorStore::wait_for_change(std::uint64_t since, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(version_mutex_);
  version_changed_.wait_for(lock, timeout, [&] { return version_ != since; });
  return version_;
}

nlohmann::json to_json(const SolutionGroups& groups, Distance distance) {
  nlohmann::json solutions = nlohmann::json::array();
  for (std::size_t i = 0; i < groups.solutions.size(); ++i) {
    nlohmann::json item{{"user", groups.solutions[i].user}, {"command", groups.solutions[i].command}};
    if (i < groups.assignments.size()) item["cluster"] = groups.assignments[i];
    if (i < groups.points.size()) {
      item["x"] = groups.points[i][0];
      item["y"] = groups.points[i][1];
    }
    solutions.push_back(std::move(item));
  }
  nlohmann::json clusters = nlohmann::json::array();
  for (std::size_t c = 0; c < groups.centroids.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < groups.assignments.size(); ++i) {
      if (groups.assignments[i] == c) members.push_back(i);
    }
    clusters.push_back({{"index", c}, {"centroid", groups.centroids[c]}, {"members", members}});
  }
  return {{"k_requested", groups.k_requested},
          {"k_used", groups.k_used},
          {"distance", std::string(to_string(distance))},
          {"degenerate", groups.degenerate},
          {"warnings", groups.warnings},
          {"vocabulary", groups.vocabulary},
          {"solutions", std::move(solutions)},
          {"clusters", std::move(clusters)}};
}

}  // namespace ta
