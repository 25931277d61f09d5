#include <doctest.h>

#include <random>

#include "support.hpp"
#include "termadventure/challenge.hpp"
#include "termadventure/template.hpp"

using namespace ta;

namespace {

bool has_kind(const std::vector<ValidationFinding>& findings, ValidationFinding::Kind kind) {
  for (const auto& f : findings) {
    if (f.kind == kind) return true;
  }
  return false;
}

ChallengeSpec chain(std::vector<std::pair<std::string, std::vector<std::string>>> shape) {
  ChallengeSpec spec;
  spec.challenge_name = "shape";
  for (auto& [name, next] : shape) spec.levels.push_back({name, "true", next, "text"});
  spec.entry_level = spec.levels.front().name;
  return spec;
}

}  // namespace

TEST_SUITE("challenge") {
  TEST_CASE("the sample challenge parses into three linked levels") {
    const auto spec = load_challenge(support::data_dir() / "sample_challenge.gta");
    CHECK(spec.challenge_name == "sample_challenge");
    CHECK(spec.entry_level == "lvl1");
    REQUIRE(spec.levels.size() == 3);
    CHECK(spec.levels[0].test == R"(test "$PWD" = /tmp)");
    CHECK(spec.levels[0].next == std::vector<std::string>{"lvl2"});
    CHECK(spec.levels[1].next == std::vector<std::string>{"lvl3"});
    CHECK(spec.levels[2].is_leaf());
    CHECK(spec.levels[0].body.rfind("Welcome to your first **adventure**!", 0) == 0);
    CHECK(validate_dag(spec).empty());
  }

  TEST_CASE("next lists accept bare, quoted and empty forms") {
    CHECK(parse_next_list("lvl2") == std::vector<std::string>{"lvl2"});
    CHECK(parse_next_list("[a, 'b', \"c\"]") == std::vector<std::string>{"a", "b", "c"});
    CHECK(parse_next_list("[]").empty());
    CHECK_THROWS_AS(parse_next_list("[a, a]"), ChallengeError);
    CHECK_THROWS_AS(parse_next_list("[a, b"), ChallengeError);
    CHECK_THROWS_AS(parse_next_list("a b"), ChallengeError);
    CHECK_THROWS_AS(parse_next_list("[a,,b]"), ChallengeError);
  }

  TEST_CASE("syntax errors carry the line") {
    const std::string missing_test = "name: a\nnext: []\n\nbody\n";
    try {
      parse_challenge(missing_test);
      FAIL("expected an error");
    } catch (const ChallengeError& e) {
      CHECK(e.line() == 1);
      CHECK(std::string(e.what()).find("missing `test`") != std::string::npos);
    }
    try {
      parse_challenge("name: a\ntest: true\ncolour: blue\n\nbody\n");
      FAIL("expected an error");
    } catch (const ChallengeError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_challenge("name: a\ntest: true\nnext: [b]\n\nx\n"), ChallengeError);
    CHECK_THROWS_AS(parse_challenge("name: a\ntest: true\n\nx\n-----\nname: a\ntest: true\n\ny\n"), ChallengeError);
    CHECK_THROWS_AS(parse_challenge("name: bad name\ntest: true\n\nx\n"), ChallengeError);
    CHECK_THROWS_AS(parse_challenge(""), ChallengeError);
  }

  TEST_CASE("structural findings") {
    SUBCASE("cycle") {
      const auto findings = validate_dag(chain({{"a", {"b"}}, {"b", {"c"}}, {"c", {"a"}}}));
      CHECK(has_kind(findings, ValidationFinding::Kind::cycle));
      CHECK(has_kind(findings, ValidationFinding::Kind::no_reachable_leaf));
    }
    SUBCASE("unreachable level") {
      CHECK(has_kind(validate_dag(chain({{"a", {}}, {"b", {}}})), ValidationFinding::Kind::unreachable_level));
    }
    SUBCASE("undefined successor") {
      CHECK(has_kind(validate_dag(chain({{"a", {"zz"}}})), ValidationFinding::Kind::undefined_successor));
    }
    SUBCASE("duplicate successor") {
      CHECK(has_kind(validate_dag(chain({{"a", {"b", "b"}}, {"b", {}}})), ValidationFinding::Kind::duplicate_successor));
    }
    SUBCASE("missing entry") {
      auto spec = chain({{"a", {}}});
      spec.entry_level = "nope";
      CHECK(has_kind(validate_dag(spec), ValidationFinding::Kind::missing_entry));
    }
    SUBCASE("empty test") {
      auto spec = chain({{"a", {}}});
      spec.levels[0].test.clear();
      CHECK(has_kind(validate_dag(spec), ValidationFinding::Kind::missing_test));
    }
    SUBCASE("a diamond is fine") {
      CHECK(validate_dag(chain({{"a", {"b", "c"}}, {"b", {"d"}}, {"c", {"d"}}, {"d", {}}})).empty());
    }
  }

  TEST_CASE("per-level directories load in file-name order") {
    support::TempDir dir;
    support::write_file(dir / "10-second.yaml", "name: two\ntest: 'true'\nbody: second\n");
    support::write_file(dir / "01-first.yaml", "name: one\ntest: 'true'\nnext: [two]\nbody: first\n");
    const auto spec = parse_challenge_directory(dir.path(), "dir");
    CHECK(spec.entry_level == "one");
    CHECK(spec.at("one").next == std::vector<std::string>{"two"});
    CHECK(spec.at("two").body == "second");
  }

  TEST_CASE("property: serialize then parse is the identity on random DAGs") {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 200; ++round) {
      const int n = 1 + static_cast<int>(rng() % 8);
      ChallengeSpec spec;
      spec.challenge_name = "random";
      for (int i = 0; i < n; ++i) {
        Level level;
        level.name = "l" + std::to_string(i);
        level.test = "test -e /tmp/x" + std::to_string(rng() % 100);
        level.body = "Body of **level** " + std::to_string(i) + ".\n\nSecond paragraph with `code`.";
        spec.levels.push_back(level);
      }
      // Edges only point forward, and every level hangs off an earlier one.
      for (int i = 1; i < n; ++i) {
        auto& parent = spec.levels[rng() % i].next;
        parent.push_back("l" + std::to_string(i));
      }
      for (int i = 0; i + 2 < n; ++i) {
        const auto target = "l" + std::to_string(i + 2 + rng() % (n - i - 2));
        auto& next = spec.levels[i].next;
        if (rng() % 3 == 0 && std::find(next.begin(), next.end(), target) == next.end()) next.push_back(target);
      }
      spec.entry_level = "l0";
      REQUIRE(validate_dag(spec).empty());
      const auto again = parse_challenge(serialize_challenge(spec), "random");
      CHECK(again == spec);
    }
  }
}

TEST_SUITE("template") {
  TEST_CASE("generate_levels fills the 1-based index or the value") {
    const std::vector<std::string> items{"/usr", "/var", "/etc"};
    CHECK(generate_levels(items, "lvl2{i}") == std::vector<std::string>{"lvl21", "lvl22", "lvl23"});
    const std::vector<std::string> words{"a", "b"};
    CHECK(generate_levels(words, "go_{v}") == std::vector<std::string>{"go_a", "go_b"});
    CHECK_THROWS_AS(generate_levels(words, "no-slot"), TemplateError);
    CHECK_THROWS_AS(generate_levels({}, "x{i}"), TemplateError);
  }

  TEST_CASE("list values render in the bracketed next syntax") {
    CHECK(render_value(TemplateValue{std::vector<std::string>{"lvl21", "lvl22", "lvl23"}}) ==
          "['lvl21', 'lvl22', 'lvl23']");
    CHECK(render_value(TemplateValue{std::string("x")}) == "x");
  }

  TEST_CASE("the sample template expands into three lvl2 variants") {
    const auto vars = load_variables(support::data_dir() / "template_variables.yaml");
    const auto text = expand_template(support::read_file(support::data_dir() / "sample_template.tpl"), vars);
    CHECK(text.find("next: ['lvl21', 'lvl22', 'lvl23']") != std::string::npos);
    const auto spec = parse_challenge(text, "templated");
    REQUIRE(spec.levels.size() == 5);
    CHECK(spec.at("lvl1").next == std::vector<std::string>{"lvl21", "lvl22", "lvl23"});
    CHECK(spec.at("lvl22").test == R"(test "$PWD" = "/var")");
    CHECK(spec.at("lvl23").body == "Now move to `/etc`.");
  }

  TEST_CASE("actions: interpolation, pipes, ranges and trimming") {
    TemplateVariables vars;
    vars.bindings["who"] = std::string("world");
    vars.bindings["xs"] = std::vector<std::string>{"a", "b"};
    CHECK(expand_template("hi {{ who }}", vars) == "hi world");
    CHECK(expand_template("hi {{ .who }}", vars) == "hi world");
    CHECK(expand_template("{{ range xs }}[{{ . }}]{{ end }}", vars) == "[a][b]");
    CHECK(expand_template("{{ range $i, $v := xs }}{{ $i }}={{ $v }};{{ end }}", vars) == "1=a;2=b;");
    CHECK(expand_template("a  {{- who -}}  b", vars) == "aworldb");
    CHECK(expand_template("{{ xs | generate_levels \"n{i}\" }}", vars) == "['n1', 'n2']");
  }

  TEST_CASE("template errors point at the action") {
    TemplateVariables vars;
    try {
      expand_template("line one\n  {{ missing }}", vars);
      FAIL("expected an error");
    } catch (const TemplateError& e) {
      CHECK(e.line() == 2);
      CHECK(e.column() == 3);
    }
    CHECK_THROWS_AS(expand_template("{{ range xs }}", vars), TemplateError);
    CHECK_THROWS_AS(expand_template("{{ end }}", vars), TemplateError);
    CHECK_THROWS_AS(expand_template("{{ who", vars), TemplateError);
    CHECK_THROWS_AS(expand_template("{{ nosuchfilter 1 }}", vars), TemplateError);
    CHECK_THROWS_AS(parse_variables("a:\n  b: c\n"), TemplateError);
  }
}
