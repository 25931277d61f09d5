#include "termadventure/event.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>

namespace ta {

std::string_view to_string(EventType type) {
  switch (type) {
    case EventType::start: return "start";
    case EventType::command: return "command";
    case EventType::passed: return "passed";
    case EventType::exit: return "exit";
    case EventType::help: return "help";
    case EventType::ack: return "ack";
  }
  return "unknown";
}

std::optional<EventType> parse_event_type(std::string_view text) {
  for (const auto type : {EventType::start, EventType::command, EventType::passed, EventType::exit, EventType::help,
                          EventType::ack}) {
    if (to_string(type) == text) return type;
  }
  return std::nullopt;
}

std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const auto day = floor<days>(ts);
  const year_month_day ymd{day};
  const hh_mm_ss tod{ts - day};
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%04d-%02u-%02uT%02ld:%02ld:%02lld.%06lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                static_cast<long long>(tod.seconds().count()), static_cast<long long>(tod.subseconds().count()));
  return buffer;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int consumed = 0;
  const std::string copy(text);
  if (std::sscanf(copy.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6) {
    return std::nullopt;
  }
  std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
  long long micros = 0;
  if (!rest.empty() && rest.front() == '.') {
    rest.remove_prefix(1);
    int digits = 0;
    while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') {
      if (digits < 6) {
        micros = micros * 10 + (rest.front() - '0');
        ++digits;
      }
      rest.remove_prefix(1);
    }
    if (digits == 0) return std::nullopt;
    for (; digits < 6; ++digits) micros *= 10;
  }
  if (!(rest.empty() || rest == "Z" || rest == "+00:00")) return std::nullopt;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) return std::nullopt;
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + microseconds{micros};
}

Timestamp now_utc() { return std::chrono::time_point_cast<std::chrono::microseconds>(std::chrono::system_clock::now()); }

std::string generate_event_id() {
  thread_local std::mt19937_64 rng{std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)};
  std::array<std::uint8_t, 16> bytes{};
  for (std::size_t i = 0; i < bytes.size(); i += 8) {
    const auto r = rng();
    for (std::size_t j = 0; j < 8; ++j) bytes[i + j] = static_cast<std::uint8_t>(r >> (8 * j));
  }
  bytes[6] = static_cast<std::uint8_t>((bytes[6] & 0x0f) | 0x40);
  bytes[8] = static_cast<std::uint8_t>((bytes[8] & 0x3f) | 0x80);
  static constexpr char digits[] = "0123456789abcdef";
  std::string id;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i == 4 || i == 6 || i == 8 || i == 10) id.push_back('-');
    id.push_back(digits[bytes[i] >> 4]);
    id.push_back(digits[bytes[i] & 0x0f]);
  }
  return id;
}

nlohmann::json to_json(const Event& event) {
  return nlohmann::json{
      {"event_id", event.event_id},   {"type", to_string(event.type)},
      {"user", event.user},           {"host", event.host},
      {"ip", event.ip},               {"lab_id", event.lab_id},
      {"level_id", event.level_id},   {"command_text", event.command_text},
      {"timestamp", format_timestamp(event.timestamp)}, {"extra", event.extra},
  };
}

Event event_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw EventFormatError("event must be a JSON object");

  const auto string_field = [&](const char* key) -> std::string {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) throw EventFormatError(std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
  };

  Event event;
  const auto type_text = string_field("type");
  const auto type = parse_event_type(type_text);
  if (!type) throw EventFormatError("unknown event type '" + type_text + "'");
  event.type = *type;
  event.event_id = string_field("event_id");
  event.user = string_field("user");
  event.host = string_field("host");
  event.ip = string_field("ip");
  event.lab_id = string_field("lab_id");
  event.level_id = string_field("level_id");
  event.command_text = string_field("command_text");
  if (event.user.empty()) throw EventFormatError("missing 'user'");
  if (event.lab_id.empty()) throw EventFormatError("missing 'lab_id'");

  if (const auto ts = string_field("timestamp"); !ts.empty()) {
    const auto parsed = parse_timestamp(ts);
    if (!parsed) throw EventFormatError("malformed timestamp '" + ts + "'");
    event.timestamp = *parsed;
  }

  if (const auto it = j.find("extra"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw EventFormatError("'extra' must be an object of strings");
    for (const auto& [key, value] : it->items()) {
      event.extra[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  // Unknown top-level keys are preserved in extra rather than dropped.
  static constexpr std::array known{"event_id", "type",         "user",      "host",  "ip",
                                    "lab_id",   "level_id",     "command_text", "timestamp", "extra"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) != known.end()) continue;
    event.extra.try_emplace(key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return event;
}

}  // namespace ta
