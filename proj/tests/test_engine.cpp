#include <doctest.h>

#include <chrono>
#include <map>
#include <sstream>
#include <thread>

#include "support.hpp"
#include "termadventure/delivery.hpp"
#include "termadventure/engine.hpp"
#include "termadventure/render.hpp"

using namespace ta;
using namespace std::chrono_literals;

namespace {

class ScriptedSkip : public SkipSource {
 public:
  explicit ScriptedSkip(std::chrono::milliseconds after) : at_(std::chrono::steady_clock::now() + after) {}
  bool wait_until(std::chrono::steady_clock::time_point deadline) override {
    if (deadline < at_) {
      std::this_thread::sleep_until(deadline);
      return false;
    }
    std::this_thread::sleep_until(at_);
    return true;
  }

 private:
  std::chrono::steady_clock::time_point at_;
};

SessionInfo session_in(const std::filesystem::path& home, std::uint64_t seed = 1) {
  SessionInfo s;
  s.user = "alice";
  s.host = "pc1";
  s.ip = "10.0.0.1";
  s.lab_id = "lab";
  s.home = home;
  s.seed = seed;
  return s;
}

EngineOptions quiet() {
  EngineOptions options;
  options.salts = {"a1", "b2", "c3"};
  options.typewriter.delays = false;
  options.typewriter.colors = false;
  return options;
}

std::vector<EventType> types(const std::vector<Event>& events) {
  std::vector<EventType> t;
  for (const auto& e : events) t.push_back(e.type);
  return t;
}

}  // namespace

TEST_SUITE("render") {
  TEST_CASE("markup becomes styles, delays follow punctuation") {
    const auto text = render_level("Go **now**. Use `ls`!");
    CHECK(text.plain_text() == "Go now. Use ls!");
    CHECK(text.total_delay() == 13 * 50ms + 2 * 500ms);
    CHECK(text.segments[3].style.bold);
    CHECK(text.segments[3].text == "n");
    CHECK(text.segments[12].style.code);
    CHECK(text.to_ansi().find(std::string(ansi::bold) + "n") != std::string::npos);
  }

  TEST_CASE("markers that do not close, and words with underscores, print literally") {
    CHECK(render_level("a **b").plain_text() == "a **b");
    CHECK(render_level("type ta_print_again").plain_text() == "type ta_print_again");
    CHECK(render_level("\\*not italic\\*").plain_text() == "*not italic*");
    CHECK(render_level("_under_ *it*").segments[0].style.underline);
  }

  TEST_CASE("a multi-byte character is one segment") {
    const auto text = render_level("é.");
    REQUIRE(text.segments.size() == 2);
    CHECK(text.segments[0].text == "é");
    CHECK(text.total_delay() == 550ms);
  }

  TEST_CASE("no delays when disabled, skip prints the rest at once") {
    const auto text = render_level(std::string(40, 'x'));
    std::ostringstream out;
    auto t0 = std::chrono::steady_clock::now();
    CHECK_FALSE(typewriter_print(text, out, {.delays = false, .colors = false}));
    CHECK(std::chrono::steady_clock::now() - t0 < 50ms);
    CHECK(out.str() == std::string(40, 'x'));

    std::ostringstream skipped;
    ScriptedSkip skip(120ms);
    t0 = std::chrono::steady_clock::now();
    CHECK(typewriter_print(text, skipped, {.delays = true, .colors = false}, &skip));
    const auto took = std::chrono::steady_clock::now() - t0;
    CHECK(took < 600ms);
    CHECK(skipped.str() == std::string(40, 'x'));
  }
}

TEST_SUITE("engine") {
  TEST_CASE("prompt and name sanitising") {
    CHECK(prompt_safe("my lab/1") == "my_lab_1");
    CHECK(format_prompt("demo", "lvl1") == "[demo|lvl1] \\w $ ");
  }

  TEST_CASE("seeds are stable and branch choice ignores draw history") {
    CHECK(default_seed("alice", "demo") == default_seed("alice", "demo"));
    CHECK(default_seed("alice", "demo") != default_seed("bob", "demo"));
    auto a = level_rng(42, "lvl1");
    auto b = level_rng(42, "lvl1");
    CHECK(a() == b());
    const Level leaf{"x", "true", {}, ""};
    CHECK_FALSE(select_next_level(leaf, a));
  }

  TEST_CASE("property: a 3-way branch is uniform across seeds") {
    const Level fork{"fork", "true", {"a", "b", "c"}, ""};
    std::map<std::string, int> counts;
    for (std::uint64_t seed = 0; seed < 30000; ++seed) {
      auto rng = level_rng(seed, fork.name);
      ++counts[*select_next_level(fork, rng)];
    }
    for (const auto& name : fork.next) CHECK(std::abs(counts[name] - 10000) <= 500);
  }

  TEST_CASE("tests are judged by exit status") {
    CHECK(evaluate_test("true"));
    CHECK_FALSE(evaluate_test("false"));
    CHECK_FALSE(evaluate_test("exit 3"));
    CHECK(evaluate_test("test \"$PWD\" = /tmp", std::filesystem::path("/tmp")));
    CHECK_FALSE(evaluate_test("no-such-command-anywhere"));
  }

  TEST_CASE("a full run emits start, command, passed..., exit") {
    support::TempDir home;
    auto spec = load_challenge(support::data_dir() / "sample_challenge.gta", "demo");
    MemoryEventSink sink;
    std::ostringstream out;
    Engine engine(spec, session_in(home.path()), sink, out, quiet());
    CHECK_FALSE(engine.warning());
    engine.start();
    CHECK(out.str().find("Welcome to your first adventure!") != std::string::npos);
    CHECK(support::read_file(home / "ta_current_level.txt").rfind("Welcome", 0) == 0);
    CHECK(engine.prompt() == "[demo|lvl1] \\w $ ");

    CHECK(engine.tick("ls", false).action == TickAction::stay);
    auto r = engine.tick("cd /tmp", true);
    CHECK(r.action == TickAction::advance);
    CHECK(engine.current_level() == "lvl2");
    CHECK(engine.tick("touch ~/notes.txt", true).action == TickAction::advance);
    r = engine.tick("rm ~/notes.txt", true);
    CHECK(r.action == TickAction::finish);
    CHECK(r.prompt == "[demo|*done*] \\w $ ");
    CHECK(engine.tick("anything", true).action == TickAction::done);

    const auto events = sink.events();
    CHECK(types(events) == std::vector<EventType>{EventType::start, EventType::command, EventType::passed,
                                                   EventType::passed, EventType::passed, EventType::exit});
    CHECK(events[2].extra.at("next_level") == "lvl2");
    CHECK(events[4].level_id == "lvl3");
    CHECK_FALSE(events[4].extra.count("next_level"));
    CHECK(events[5].timestamp > events[4].timestamp);
    for (const auto& e : events) {
      CHECK(e.user == "alice");
      CHECK(e.lab_id == "lab");
      CHECK(e.host == "pc1");
    }
  }

  TEST_CASE("progress survives a restart, a finished adventure stays finished") {
    support::TempDir home;
    auto spec = load_challenge(support::data_dir() / "sample_challenge.gta", "demo");
    NullEventSink sink;
    std::ostringstream out;
    {
      Engine engine(spec, session_in(home.path()), sink, out, quiet());
      engine.tick("cd /tmp", true);
    }
    {
      Engine engine(spec, session_in(home.path()), sink, out, quiet());
      CHECK(engine.current_level() == "lvl2");
      engine.tick("x", true);
      engine.tick("y", true);
      CHECK(engine.finished());
    }
    Engine again(spec, session_in(home.path()), sink, out, quiet());
    CHECK(again.finished());
    CHECK(again.current_level() == "lvl3");
    std::ostringstream banner;
    Engine shown(spec, session_in(home.path()), sink, banner, quiet());
    shown.start();
    CHECK(banner.str().find("already finished") != std::string::npos);
  }

  TEST_CASE("a tampered record restarts at the entry level with a warning") {
    support::TempDir home;
    auto spec = load_challenge(support::data_dir() / "sample_challenge.gta", "demo");
    NullEventSink sink;
    std::ostringstream out;
    {
      Engine engine(spec, session_in(home.path()), sink, out, quiet());
      engine.tick("cd /tmp", true);
    }
    const auto path = ProgressStore(home.path()).path_for("demo");
    auto text = support::read_file(path);
    text[0] = text[0] == 'a' ? 'b' : 'a';
    support::write_file(path, text);
    Engine engine(spec, session_in(home.path()), sink, out, quiet());
    CHECK(engine.current_level() == "lvl1");
    REQUIRE(engine.warning());
    engine.start();
    CHECK(out.str().find(*engine.warning()) != std::string::npos);
  }

  TEST_CASE("step evaluates the level test in the given directory") {
    support::TempDir home;
    auto spec = load_challenge(support::data_dir() / "sample_challenge.gta", "demo");
    NullEventSink sink;
    std::ostringstream out;
    Engine engine(spec, session_in(home.path()), sink, out, quiet());
    CHECK(engine.step("cd /", std::filesystem::path("/")).action == TickAction::stay);
    CHECK(engine.step("cd /tmp", std::filesystem::path("/tmp")).action == TickAction::advance);
  }

  TEST_CASE("help and print-again") {
    support::TempDir home;
    auto spec = load_challenge(support::data_dir() / "sample_challenge.gta", "demo");
    MemoryEventSink sink;
    std::ostringstream out;
    Engine engine(spec, session_in(home.path()), sink, out, quiet());
    std::ostringstream reply;
    engine.request_help(reply);
    engine.request_help(reply);
    CHECK(reply.str().find("notified") != std::string::npos);
    CHECK(types(sink.events()) == std::vector<EventType>{EventType::help, EventType::help});
    CHECK(sink.events()[0].level_id == "lvl1");
    std::ostringstream again;
    engine.print_again(again);
    CHECK(again.str().find("move to the /tmp") != std::string::npos);
  }

  TEST_CASE("encrypted challenge files load with the right key only") {
    support::TempDir dir;
    const auto plain = support::read_file(support::data_dir() / "sample_challenge.gta");
    const auto key = ChallengeKey::from_hex("00112233445566778899aabbccddeeff");
    const auto sealed = encrypt_challenge(as_bytes(plain), key);
    support::write_file(dir / "c.tac", std::string(sealed.begin(), sealed.end()));
    const auto spec = load_challenge_file(dir / "c.tac", "", key);
    CHECK(spec.challenge_name == "c");
    CHECK(spec.levels.size() == 3);
    CHECK_THROWS(load_challenge_file(dir / "c.tac", "", ChallengeKey::from_hex("ffeeddccbbaa99887766554433221100")));
  }
}
