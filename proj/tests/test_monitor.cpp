#include <doctest.h>

#include <random>
#include <thread>

#include <httplib.h>

#include "oracles.hpp"
#include "support.hpp"
#include "termadventure/monitor.hpp"
#include "termadventure/monitor_server.hpp"

using namespace ta;
using namespace std::chrono_literals;

namespace {

const Timestamp t0 = *parse_timestamp("2024-05-06T08:00:00Z");

Event ev(EventType type, const std::string& user, const std::string& level, int seconds,
         const std::string& command = "", const std::string& next = "") {
  static int serial = 0;
  Event e;
  e.event_id = "e" + std::to_string(1000000 + serial++);
  e.type = type;
  e.user = user;
  e.lab_id = "lab";
  e.level_id = level;
  e.command_text = command;
  e.timestamp = t0 + std::chrono::seconds(seconds);
  if (!next.empty()) e.extra["next_level"] = next;
  return e;
}

bool same_as_oracle(const StudentState& s, const oracle::Box& box) {
  return s.current_level == box.level && s.last_command == box.last_command &&
         s.unsuccessful_attempts == box.attempts && s.last_activity == box.last_activity &&
         s.help_requested == box.help && s.finished == box.finished && s.passed_levels == box.passed;
}

// Three finished levels for alice, bob stuck on lvl2, carol asking for help.
void seed_class(MonitorStore& store) {
  store.ingest(ev(EventType::start, "alice", "lvl1", 0));
  store.ingest(ev(EventType::passed, "alice", "lvl1", 10, "cd /tmp", "lvl2"));
  store.ingest(ev(EventType::passed, "alice", "lvl2", 20, "touch ~/notes.txt", "lvl3"));
  store.ingest(ev(EventType::passed, "alice", "lvl3", 30, "rm ~/notes.txt"));
  store.ingest(ev(EventType::exit, "alice", "lvl3", 31));
  store.ingest(ev(EventType::start, "bob", "lvl1", 0));
  store.ingest(ev(EventType::passed, "bob", "lvl1", 5, "cd /tmp", "lvl2"));
  for (int i = 0; i < 12; ++i) store.ingest(ev(EventType::command, "bob", "lvl2", 10 + i, "ls " + std::to_string(i)));
  store.ingest(ev(EventType::start, "carol", "lvl1", 0));
  store.ingest(ev(EventType::command, "carol", "lvl1", 3, "cd tmp"));
  store.ingest(ev(EventType::help, "carol", "lvl1", 4));
}

}  // namespace

TEST_SUITE("monitor") {
  TEST_CASE("fold rules") {
    StudentState s;
    fold_event(s, ev(EventType::start, "u", "lvl1", 0));
    CHECK(s.user == "u");
    CHECK(s.current_level == "lvl1");
    fold_event(s, ev(EventType::command, "u", "lvl1", 1, "ls"));
    fold_event(s, ev(EventType::command, "u", "lvl1", 2, "pwd"));
    CHECK(s.unsuccessful_attempts == 2);
    CHECK(s.last_command == "pwd");
    fold_event(s, ev(EventType::help, "u", "lvl1", 3));
    CHECK(s.help_requested);
    const auto before_ack = s.last_activity;
    fold_event(s, ev(EventType::ack, "u", "", 9));
    CHECK_FALSE(s.help_requested);
    CHECK(s.last_activity == before_ack);
    fold_event(s, ev(EventType::passed, "u", "lvl1", 4, "cd /tmp", "lvl2"));
    CHECK(s.current_level == "lvl2");
    CHECK(s.unsuccessful_attempts == 0);
    fold_event(s, ev(EventType::exit, "u", "lvl2", 5));
    CHECK_FALSE(s.finished);
    fold_event(s, ev(EventType::passed, "u", "lvl2", 6, "done"));
    CHECK(s.current_level == "lvl2");
    CHECK_FALSE(s.finished);
    fold_event(s, ev(EventType::exit, "u", "lvl2", 7));
    CHECK(s.finished);
    CHECK(s.passed_levels == std::set<std::string>{"lvl1", "lvl2"});
  }

  TEST_CASE("ingestion validates, fills gaps, and is idempotent") {
    MonitorStore store;
    auto e = ev(EventType::start, "u", "lvl1", 0);
    CHECK(store.ingest(e) == IngestResult::accepted);
    CHECK(store.ingest(e) == IngestResult::duplicate);
    CHECK(store.history("lab", "u").size() == 1);
    auto bare = ev(EventType::command, "u", "lvl1", 0);
    bare.event_id.clear();
    bare.timestamp = Timestamp{};
    CHECK(store.ingest(bare) == IngestResult::accepted);
    const auto history = store.history("lab", "u");
    REQUIRE(history.size() == 2);
    CHECK_FALSE(history[1].event_id.empty());
    CHECK(history[1].timestamp > t0);
    auto nouser = e;
    nouser.user.clear();
    nouser.event_id = "other";
    CHECK_THROWS_AS(store.ingest(nouser), EventFormatError);
    CHECK_THROWS_AS(store.ingest_json({{"type", "start"}, {"user", "u"}}), EventFormatError);
  }

  TEST_CASE("property: live state equals replay for shuffled, duplicated delivery") {
    std::mt19937_64 rng(1234);
    for (int round = 0; round < 200; ++round) {
      MonitorStore store;
      std::map<std::string, std::vector<Event>> sent;
      std::vector<Event> wire;
      for (int u = 0; u < 3; ++u) {
        const auto user = "s" + std::to_string(u);
        sent[user] = support::random_session(rng, user, "lab", t0);
        wire.insert(wire.end(), sent[user].begin(), sent[user].end());
      }
      const auto copies = wire.size() / 4;
      for (std::size_t i = 0; i < copies; ++i) wire.push_back(wire[rng() % wire.size()]);
      std::shuffle(wire.begin(), wire.end(), rng);
      for (const auto& e : wire) store.ingest(e);

      for (const auto& s : store.snapshot("lab")) {
        CHECK(s == replay(s.user, store.history("lab", s.user)));
        CHECK(same_as_oracle(s, oracle::fold(sent[s.user])));
      }
    }
  }

  TEST_CASE("history is per user and in timestamp order") {
    MonitorStore store;
    store.ingest(ev(EventType::command, "a", "lvl1", 5, "late"));
    store.ingest(ev(EventType::start, "a", "lvl1", 1));
    store.ingest(ev(EventType::start, "b", "lvl1", 2));
    const auto h = store.history("lab", "a");
    REQUIRE(h.size() == 2);
    CHECK(h[0].type == EventType::start);
    CHECK(h[1].command_text == "late");
    CHECK(store.history("lab", "nobody").empty());
    CHECK(store.snapshot("empty").empty());
  }

  TEST_CASE("statistics, stuck detection and grades on a small class") {
    MonitorStore store;
    seed_class(store);
    const auto stats = store.statistics("lab");
    REQUIRE_FALSE(stats.empty());
    CHECK(stats[0].level == "lvl2");
    CHECK(stats[0].failures == 12);
    CHECK(stats[0].passes == 1);
    CHECK(stats[0].stuck_users == std::set<std::string>{"bob"});
    std::size_t pass_total = 0;
    for (const auto& s : stats) pass_total += s.passes;
    std::size_t passed_total = 0;
    for (const auto& s : store.snapshot("lab")) passed_total += s.passed_levels.size();
    CHECK(pass_total == passed_total);

    const auto flags = store.stuck("lab", t0 + 60s);
    CHECK(flags == std::vector<StuckFlag>{{"bob", "attempts"}, {"carol", "help"}});
    const auto later = store.stuck("lab", t0 + 2h);
    CHECK(std::count(later.begin(), later.end(), StuckFlag{"bob", "idle"}) == 1);
    CHECK(std::count(later.begin(), later.end(), StuckFlag{"alice", "idle"}) == 0);

    const auto csv = store.grades("lab", parse_grading_scheme("lvl1:1,lvl2:2,lvl3:3"));
    CHECK(csv ==
          "user,levels_passed,passed_levels,points,finished\n"
          "alice,3,lvl1;lvl2;lvl3,6,true\n"
          "bob,1,lvl1,1,false\n"
          "carol,0,,0,false\n");
    CHECK(store.grades("lab", {}) == store.grades("lab", {}));
    CHECK_THROWS_AS(store.grades("lab", parse_grading_scheme("lvl9:1")), GradingError);
    store.register_levels("lab", {"lvl9"});
    CHECK_NOTHROW(store.grades("lab", parse_grading_scheme("lvl9:1")));
    CHECK_THROWS_AS(parse_grading_scheme("lvl1"), GradingError);
    CHECK_THROWS_AS(parse_grading_scheme("lvl1:x"), GradingError);
    CHECK(parse_grading_scheme("a:1.5, b:2") == std::map<std::string, double>{{"a", 1.5}, {"b", 2}});

    store.acknowledge("lab", "carol");
    CHECK(store.stuck("lab", t0 + 60s) == std::vector<StuckFlag>{{"bob", "attempts"}});
  }

  TEST_CASE("csv fields are quoted when needed") {
    StudentState s;
    s.user = "o\"brien, pat";
    CHECK(grades_csv({s}, {}, {}).find("\"o\"\"brien, pat\",0") != std::string::npos);
  }

  TEST_CASE("the log survives a restart") {
    support::TempDir dir;
    {
      MonitorStore store(dir.path());
      seed_class(store);
      store.register_levels("lab", {"bonus"});
      auto odd = ev(EventType::start, "dave", "lvl1", 0);
      odd.lab_id = "room 2/b";
      store.ingest(odd);
    }
    MonitorStore reloaded(dir.path());
    CHECK(reloaded.labs() == std::vector<std::string>{"lab", "room 2/b"});
    CHECK(reloaded.snapshot("lab").size() == 3);
    CHECK(reloaded.known_levels("lab").count("bonus"));
    MonitorStore fresh;
    seed_class(fresh);
    CHECK(reloaded.grades("lab", {}) == fresh.grades("lab", {}));
  }

  TEST_CASE("solutions feed the cluster view") {
    MonitorStore store;
    for (int i = 0; i < 8; ++i) {
      const auto user = "u" + std::to_string(i);
      store.ingest(ev(EventType::command, user, "lvl1", i, "ls"));
      store.ingest(ev(EventType::passed, user, "lvl1", 10 + i, i % 2 ? "grep -c x f" : "awk '/x/' f", "lvl2"));
    }
    CHECK(store.solutions("lab", "lvl1", false).size() == 8);
    CHECK(store.solutions("lab", "lvl1", true).size() == 16);
    GroupOptions options;
    const auto json = to_json(solution_groups(store.solutions("lab", "lvl1", false), options), Distance::jaccard);
    CHECK(json["k_used"] == 2);
    CHECK(json["solutions"].size() == 8);
    CHECK(json["solutions"][0]["cluster"] != json["solutions"][1]["cluster"]);
    CHECK(json["clusters"].size() == 2);
  }

  TEST_CASE("wait_for_change wakes on ingestion") {
    MonitorStore store;
    const auto v = store.version();
    std::thread writer([&] {
      std::this_thread::sleep_for(50ms);
      store.ingest(ev(EventType::start, "u", "lvl1", 0));
    });
    CHECK(store.wait_for_change(v, 5000ms) != v);
    writer.join();
    CHECK(store.wait_for_change(store.version(), 10ms) == store.version());
  }
}

TEST_SUITE("monitor_http") {
  TEST_CASE("the HTTP API") {
    MonitorStore store;
    MonitorServer server(store, {"sekret", 200ms});
    const int port = server.start("127.0.0.1", 0);
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(5, 0);
    const httplib::Headers auth{{"Authorization", "Bearer sekret"}};

    auto e = ev(EventType::start, "alice", "lvl1", 0);
    auto res = client.Post("/api/v1/events", to_json(e).dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(nlohmann::json::parse(res->body)["status"] == "accepted");
    res = client.Post("/api/v1/events", to_json(e).dump(), "application/json");
    CHECK(nlohmann::json::parse(res->body)["status"] == "duplicate");
    res = client.Post("/api/v1/events", R"({"type":"nope","user":"a","lab_id":"lab"})", "application/json");
    CHECK(res->status == 400);
    res = client.Post("/api/v1/events", "{not json", "application/json");
    CHECK(res->status == 400);
    client.Post("/api/v1/events", to_json(ev(EventType::help, "alice", "lvl1", 1)).dump(), "application/json");

    CHECK(client.Get("/api/v1/labs/lab/snapshot")->status == 401);
    CHECK(client.Get("/api/v1/labs/lab/snapshot", {{"Authorization", "Bearer wrong"}})->status == 401);
    res = client.Get("/api/v1/labs/lab/snapshot?token=sekret");
    REQUIRE(res->status == 200);
    auto snapshot = nlohmann::json::parse(res->body);
    REQUIRE(snapshot["students"].size() == 1);
    CHECK(snapshot["students"][0]["help_requested"] == true);
    // The events are dated 2024, so by the wall clock alice is idle as well.
    CHECK(snapshot["students"][0]["stuck"] == nlohmann::json::array({"help", "idle"}));
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");

    res = client.Get("/api/v1/labs", auth);
    CHECK(nlohmann::json::parse(res->body)["labs"] == nlohmann::json::array({"lab"}));
    res = client.Get("/api/v1/labs/lab/students/alice/history", auth);
    CHECK(nlohmann::json::parse(res->body)["events"].size() == 2);
    res = client.Get("/api/v1/labs/lab/stats", auth);
    CHECK(res->status == 200);
    res = client.Get("/api/v1/labs/lab/stuck?idle=0&attempts=99", auth);
    CHECK(nlohmann::json::parse(res->body)["stuck"].size() == 2);
    CHECK(client.Get("/api/v1/labs/lab/stuck?idle=soon", auth)->status == 400);

    res = client.Get("/api/v1/labs/lab/grades.csv?scheme=lvl1:2", auth);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "text/csv");
    CHECK(res->body == "user,levels_passed,passed_levels,points,finished\nalice,0,,0,false\n");
    CHECK(client.Get("/api/v1/labs/lab/grades.csv?scheme=zzz:1", auth)->status == 400);
    CHECK(client.Put("/api/v1/labs/lab/levels", auth, R"(["zzz"])", "application/json")->status == 200);
    CHECK(client.Get("/api/v1/labs/lab/grades.csv?scheme=zzz:1", auth)->status == 200);

    res = client.Post("/api/v1/labs/lab/ack", auth, R"({"user":"alice"})", "application/json");
    CHECK(res->status == 200);
    snapshot = nlohmann::json::parse(client.Get("/api/v1/labs/lab/snapshot", auth)->body);
    CHECK(snapshot["students"][0]["help_requested"] == false);
    CHECK(client.Post("/api/v1/labs/lab/ack", auth, "", "text/plain")->status == 400);

    for (int i = 0; i < 6; ++i) {
      auto p = ev(EventType::passed, "p" + std::to_string(i), "lvl1", 5 + i, i % 2 ? "cd /tmp" : "pushd /tmp", "lvl2");
      client.Post("/api/v1/events", to_json(p).dump(), "application/json");
    }
    res = client.Get("/api/v1/labs/lab/levels/lvl1/clusters?k=2&distance=cosine&seed=3", auth);
    REQUIRE(res->status == 200);
    const auto clusters = nlohmann::json::parse(res->body);
    CHECK(clusters["k_used"] == 2);
    CHECK(clusters["distance"] == "cosine");
    CHECK(clusters["solutions"].size() == 6);
    CHECK(client.Get("/api/v1/labs/lab/levels/lvl1/clusters?distance=manhattan", auth)->status == 400);
    CHECK(client.Get("/api/v1/labs/lab/levels/lvl1/clusters?k=0", auth)->status == 400);

    res = client.Options("/api/v1/labs/lab/snapshot");
    CHECK(res->status == 204);
    server.stop();
  }

  TEST_CASE("the stream pushes a snapshot after ingestion") {
    MonitorStore store;
    MonitorServer server(store, {"", 200ms});
    const int port = server.start("127.0.0.1", 0);

    std::atomic<bool> saw_bob{false};
    std::thread reader([&] {
      httplib::Client client("127.0.0.1", port);
      client.set_read_timeout(5, 0);
      std::string buffer;
      client.Get("/api/v1/labs/lab/stream", [&](const char* data, std::size_t size) {
        buffer.append(data, size);
        if (buffer.find("\"bob\"") != std::string::npos) {
          saw_bob = true;
          return false;
        }
        return true;
      });
    });
    std::this_thread::sleep_for(200ms);
    const auto sent = std::chrono::steady_clock::now();
    store.ingest(ev(EventType::start, "bob", "lvl1", 0));
    reader.join();
    CHECK(saw_bob);
    CHECK(std::chrono::steady_clock::now() - sent < 2s);
    server.stop();
  }
}
