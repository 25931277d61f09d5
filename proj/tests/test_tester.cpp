#include <doctest.h>

#include "support.hpp"
#include "termadventure/challenge.hpp"
#include "termadventure/tester.hpp"

using namespace ta;

namespace {

WalkthroughOptions local_options() {
  WalkthroughOptions options;
  options.ta_binary = support::ta_binary();
  options.step_timeout = std::chrono::milliseconds(8000);
  return options;
}

const char* branching = R"(name: start
test: true
next: [left, right]

Pick a side.

-----

name: left
test: test -e "$HOME/left"
next: [end]

Left.

-----

name: right
test: test -e "$HOME/right"
next: [end]

Right.

-----

name: end
test: true

Done.
)";

}  // namespace

TEST_SUITE("tester") {
  TEST_CASE("walkthrough files") {
    const auto w = load_walkthrough(support::data_dir() / "sample_walkthrough.yaml");
    CHECK(w.start_level == "lvl1");
    CHECK(w.finish_level == "lvl3");
    CHECK(w.tests.at("lvl1") == "cd /tmp");
    CHECK_THROWS_AS(parse_walkthrough("finish_level: x"), std::invalid_argument);
    CHECK_THROWS_AS(parse_walkthrough("- a\n- b"), std::invalid_argument);
    CHECK_THROWS_AS(parse_walkthrough("start_level: a\nfinish_level: b\ntests: [1]"), std::invalid_argument);
  }

  TEST_CASE("walkthrough consistency against the challenge") {
    const auto spec = load_challenge(support::data_dir() / "sample_challenge.gta");
    auto w = load_walkthrough(support::data_dir() / "sample_walkthrough.yaml");
    CHECK(check_walkthrough(w, spec).empty());
    auto unknown = w;
    unknown.tests["lvl9"] = "true";
    CHECK_FALSE(check_walkthrough(unknown, spec).empty());
    auto gap = w;
    gap.tests.erase("lvl2");
    CHECK_FALSE(check_walkthrough(gap, spec).empty());
    auto backwards = w;
    backwards.start_level = "lvl3";
    backwards.finish_level = "lvl1";
    CHECK_FALSE(check_walkthrough(backwards, spec).empty());
  }

  TEST_CASE("prompt parsing") {
    CHECK(level_from_prompt("junk\n[demo|lvl2] /tmp $ ") == "lvl2");
    CHECK(level_from_prompt("[demo|*done*] ~ $ ") == "*done*");
    CHECK_FALSE(level_from_prompt("[demo|lvl2] /tmp $ \nmore output"));
    CHECK_FALSE(level_from_prompt("plain $ "));
  }

  TEST_CASE("seed lists") {
    CHECK(parse_seed_list("1..4") == std::vector<std::uint64_t>{1, 2, 3, 4});
    CHECK(parse_seed_list("3, 7,9") == std::vector<std::uint64_t>{3, 7, 9});
    CHECK(parse_seed_list("5") == std::vector<std::uint64_t>{5});
    CHECK_THROWS_AS(parse_seed_list("4..1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_seed_list("x"), std::invalid_argument);
    CHECK_THROWS_AS(parse_seed_list(""), std::invalid_argument);
  }

  TEST_CASE("the sample walkthrough passes in a local sandbox") {
    const auto spec = load_challenge(support::data_dir() / "sample_challenge.gta");
    const auto w = load_walkthrough(support::data_dir() / "sample_walkthrough.yaml");
    LocalSandbox sandbox;
    const auto report = run_walkthrough(spec, w, sandbox, local_options());
    INFO(report.reason << "\n" << report.transcript);
    CHECK(report.passed);
    CHECK(report.visited == std::vector<std::string>{"lvl1", "lvl2", "lvl3"});
  }

  TEST_CASE("a broken test makes the walkthrough fail at that level") {
    auto source = support::read_file(support::data_dir() / "sample_challenge.gta");
    source.replace(source.find("= /tmp"), 6, "= /temp");
    const auto spec = parse_challenge(source, "broken");
    const auto w = load_walkthrough(support::data_dir() / "sample_walkthrough.yaml");
    LocalSandbox sandbox;
    const auto report = run_walkthrough(spec, w, sandbox, local_options());
    CHECK_FALSE(report.passed);
    CHECK(report.failed_level == "lvl1");
    CHECK(report.command == "cd /tmp");
  }

  TEST_CASE("a sweep over seeds covers both branches") {
    const auto spec = parse_challenge(branching, "fork");
    WalkthroughSpec w{"start", "end", {{"start", "true"}, {"left", "touch ~/left"}, {"right", "touch ~/right"}}};
    const auto sweep = seed_sweep(spec, w, [] { return std::make_unique<LocalSandbox>(); },
                                  parse_seed_list("1..8"), local_options(), 4);
    CHECK(sweep.all_passed());
    CHECK(sweep.visited.count("left"));
    CHECK(sweep.visited.count("right"));
  }

  TEST_CASE("an uncovered branch fails for the seeds that take it") {
    const auto spec = parse_challenge(branching, "fork");
    WalkthroughSpec w{"start", "end", {{"start", "true"}, {"left", "touch ~/left"}}};
    const auto sweep = seed_sweep(spec, w, [] { return std::make_unique<LocalSandbox>(); },
                                  parse_seed_list("1..8"), local_options(), 4);
    CHECK_FALSE(sweep.all_passed());
    for (const auto& run : sweep.runs) {
      if (!run.passed) {
        CHECK(run.failed_level == "right");
        CHECK(run.reason.find("uncovered") != std::string::npos);
      }
    }
  }

  TEST_CASE("a missing container runtime is reported, not crashed on") {
    const auto spec = load_challenge(support::data_dir() / "sample_challenge.gta");
    const auto w = load_walkthrough(support::data_dir() / "sample_walkthrough.yaml");
    ContainerSandbox sandbox("debian:stable", "no-such-container-runtime");
    const auto report = run_walkthrough(spec, w, sandbox, local_options());
    CHECK_FALSE(report.passed);
    CHECK(report.reason.find("sandbox startup failed") != std::string::npos);
    const auto launch = sandbox.launch({"/x/ta", "/x/c.txt", "demo", 3, ""});
    CHECK(launch.argv[0] == "no-such-container-runtime");
    CHECK(std::find(launch.argv.begin(), launch.argv.end(), "--network=none") != launch.argv.end());
  }
}
