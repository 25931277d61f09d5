#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ta {

enum class EventType { start, command, passed, exit, help, ack };

std::string_view to_string(EventType type);
std::optional<EventType> parse_event_type(std::string_view text);

using Timestamp = std::chrono::sys_time<std::chrono::microseconds>;

/// ISO-8601 UTC with microseconds, e.g. 2024-03-01T09:15:02.000123Z.
std::string format_timestamp(Timestamp ts);
/// Accepts `YYYY-MM-DDTHH:MM:SS[.fraction]Z` (also `+00:00` or no zone).
std::optional<Timestamp> parse_timestamp(std::string_view text);
Timestamp now_utc();

/// Random RFC 4122 version-4 UUID.
std::string generate_event_id();

/// One telemetry message between the engine and the monitor.
///
/// Wire format (JSON object): event_id, type, user, host, ip, lab_id,
/// level_id, command_text, timestamp, extra (string map). The engine puts
/// the level it advanced to into extra["next_level"] on `passed` events.
struct Event {
  std::string event_id;
  EventType type = EventType::command;
  std::string user;
  std::string host;
  std::string ip;
  std::string lab_id;
  std::string level_id;
  std::string command_text;
  Timestamp timestamp{};
  std::map<std::string, std::string> extra;

  friend bool operator==(const Event&, const Event&) = default;
};

class EventFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const Event& event);
/// Throws EventFormatError for an unknown type, a missing user or lab_id, or
/// a malformed field. A missing timestamp is left at the epoch and a missing
/// event_id empty, so the receiver can fill them in.
Event event_from_json(const nlohmann::json& j);

/// Orders by (timestamp, event_id), the canonical log order.
inline bool event_order(const Event& a, const Event& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.event_id < b.event_id;
}

}  // namespace ta
