#include <doctest.h>

#include <regex>

#include "support.hpp"
#include "termadventure/delivery.hpp"
#include "termadventure/event.hpp"

using namespace ta;

namespace {

class FlakyTransport : public EventTransport {
 public:
  explicit FlakyTransport(int failures_before_success) : failures_(failures_before_success) {}
  bool send(const Event& event) override {
    ++calls;
    if (failures_-- > 0) return false;
    sent.push_back(event);
    return true;
  }
  int calls = 0;
  std::vector<Event> sent;

 private:
  int failures_;
};

Event sample(const std::string& id, EventType type = EventType::command) {
  Event e;
  e.event_id = id;
  e.type = type;
  e.user = "u";
  e.lab_id = "lab";
  e.level_id = "lvl1";
  e.command_text = "ls -la";
  e.timestamp = *parse_timestamp("2024-03-01T09:15:02.000123Z");
  return e;
}

}  // namespace

TEST_SUITE("events") {
  TEST_CASE("type names round trip") {
    for (const auto type : {EventType::start, EventType::command, EventType::passed, EventType::exit, EventType::help,
                            EventType::ack}) {
      CHECK(parse_event_type(to_string(type)) == type);
    }
    CHECK_FALSE(parse_event_type("hint"));
  }

  TEST_CASE("timestamps") {
    const auto ts = parse_timestamp("2024-03-01T09:15:02.000123Z");
    REQUIRE(ts);
    CHECK(format_timestamp(*ts) == "2024-03-01T09:15:02.000123Z");
    CHECK(parse_timestamp("2024-03-01T09:15:02Z") == ts.value() - std::chrono::microseconds(123));
    CHECK(parse_timestamp("2024-03-01T09:15:02+00:00"));
    CHECK_FALSE(parse_timestamp("yesterday"));
    CHECK_FALSE(parse_timestamp("2024-13-01T00:00:00Z"));
  }

  TEST_CASE("event ids are version-4 UUIDs") {
    const std::regex uuid("[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}");
    const auto a = generate_event_id();
    CHECK(std::regex_match(a, uuid));
    CHECK(a != generate_event_id());
  }

  TEST_CASE("wire format round trip keeps unknown fields in extra") {
    auto e = sample("id-1", EventType::passed);
    e.extra["next_level"] = "lvl2";
    CHECK(event_from_json(to_json(e)) == e);
    auto j = to_json(e);
    j["browser"] = "lynx";
    CHECK(event_from_json(j).extra.at("browser") == "lynx");
  }

  TEST_CASE("invalid events are rejected") {
    auto j = to_json(sample("x"));
    auto bad = j;
    bad["type"] = "teleport";
    CHECK_THROWS_AS(event_from_json(bad), EventFormatError);
    bad = j;
    bad.erase("user");
    CHECK_THROWS_AS(event_from_json(bad), EventFormatError);
    bad = j;
    bad["lab_id"] = "";
    CHECK_THROWS_AS(event_from_json(bad), EventFormatError);
    bad = j;
    bad["timestamp"] = "noon";
    CHECK_THROWS_AS(event_from_json(bad), EventFormatError);
    CHECK_THROWS_AS(event_from_json(nlohmann::json::array()), EventFormatError);
    auto no_time = j;
    no_time.erase("timestamp");
    CHECK(event_from_json(no_time).timestamp == Timestamp{});
  }

  TEST_CASE("canonical order: timestamp, then id") {
    auto a = sample("b");
    auto b = sample("a");
    CHECK(event_order(b, a));
    b.timestamp += std::chrono::microseconds(1);
    CHECK(event_order(a, b));
  }

  TEST_CASE("spool keeps order and capacity") {
    support::TempDir dir;
    EventSpool spool(dir / "spool", 3);
    for (int i = 0; i < 5; ++i) spool.append(sample(std::to_string(i)));
    CHECK(spool.size() == 3);
    const auto taken = spool.take_all();
    REQUIRE(taken.size() == 3);
    CHECK(taken[0].event_id == "2");
    CHECK(taken[2].event_id == "4");
    CHECK(spool.size() == 0);
  }

  TEST_CASE("retry is bounded, failures land in the dropped log") {
    FlakyTransport twice(2);
    CHECK(deliver_with_retry(twice, sample("x"), {3, std::chrono::milliseconds(1)}));
    CHECK(twice.calls == 3);
    FlakyTransport never(100);
    CHECK_FALSE(deliver_with_retry(never, sample("x"), {3, std::chrono::milliseconds(1)}));
    CHECK(never.calls == 3);

    support::TempDir dir;
    EventSpool spool(dir / "spool");
    spool.append(sample("1"));
    spool.append(sample("2"));
    FlakyTransport down(100);
    const auto stats = flush_spool(spool, down, {2, std::chrono::milliseconds(1)});
    CHECK(stats.dropped == 2);
    CHECK(support::read_file(spool.dropped_log()).find("\"2\"") != std::string::npos);
  }

  TEST_CASE("an unreachable monitor fails fast instead of hanging") {
    HttpEventTransport transport("http://127.0.0.1:1", std::chrono::milliseconds(300));
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_FALSE(transport.send(sample("x")));
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2));
  }
}
