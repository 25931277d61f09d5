#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "termadventure/event.hpp"

namespace support {

inline std::filesystem::path data_dir() { return TA_TEST_DATA_DIR; }
inline std::filesystem::path share_dir() { return TA_SHARE_DIR; }
inline std::filesystem::path ta_binary() { return TA_BINARY; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "ta-test.XXXXXX").string();
    path_ = ::mkdtemp(pattern.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// A plausible random session on a small branching lab: failures, help
// requests, acks, passes along random edges, sometimes an exit at the end.
// Timestamps collide on purpose so the id tie-break matters.
inline std::vector<ta::Event> random_session(std::mt19937_64& rng, const std::string& user, const std::string& lab,
                                             ta::Timestamp origin) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> graph = {
      {"lvl1", {"lvl2a", "lvl2b"}}, {"lvl2a", {"lvl3"}}, {"lvl2b", {"lvl3"}}, {"lvl3", {}}};
  auto successors = [&](const std::string& level) {
    for (const auto& [name, next] : graph) {
      if (name == level) return next;
    }
    return std::vector<std::string>{};
  };
  std::vector<ta::Event> events;
  auto t = origin;
  std::uint64_t serial = 0;
  auto make = [&](ta::EventType type, const std::string& level) {
    ta::Event e;
    e.event_id = user + "-" + std::to_string(rng() % 1000000) + "-" + std::to_string(serial++);
    e.type = type;
    e.user = user;
    e.lab_id = lab;
    e.level_id = level;
    if (rng() % 4 != 0) t += std::chrono::microseconds(1 + rng() % 5000000);
    e.timestamp = t;
    return e;
  };

  std::string level = "lvl1";
  events.push_back(make(ta::EventType::start, level));
  const int steps = 1 + static_cast<int>(rng() % 25);
  for (int s = 0; s < steps; ++s) {
    const auto roll = rng() % 10;
    if (roll < 5) {
      auto e = make(ta::EventType::command, level);
      e.command_text = "cmd" + std::to_string(rng() % 7);
      events.push_back(e);
    } else if (roll < 6) {
      events.push_back(make(ta::EventType::help, level));
    } else if (roll < 7) {
      events.push_back(make(ta::EventType::ack, ""));
    } else {
      auto e = make(ta::EventType::passed, level);
      e.command_text = "solve " + level;
      const auto next = successors(level);
      if (next.empty()) {
        events.push_back(e);
        if (rng() % 2) events.push_back(make(ta::EventType::exit, level));
        break;
      }
      level = next[rng() % next.size()];
      e.extra["next_level"] = level;
      events.push_back(e);
    }
  }
  return events;
}

}  // namespace support
