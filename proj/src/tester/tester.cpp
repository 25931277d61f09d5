#include "termadventure/tester.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <unistd.h>
#include <yaml-cpp/yaml.h>

#include "termadventure/engine.hpp"
#include "termadventure/security.hpp"
#include "termadventure/subprocess.hpp"

namespace ta {

namespace {

std::filesystem::path make_temp_dir(std::string_view prefix) {
  const auto base = std::filesystem::temp_directory_path();
  std::string pattern = (base / (std::string(prefix) + "XXXXXX")).string();
  if (::mkdtemp(pattern.data()) == nullptr) throw SandboxError("cannot create a temporary directory in " + base.string());
  return pattern;
}

void remove_quietly(const std::filesystem::path& path) {
  if (path.empty()) return;
  std::error_code ec;
  std::filesystem::remove_all(path, ec);
}

std::vector<std::string> run_arguments(const SessionRequest& request, const std::string& ta, const std::string& challenge) {
  std::vector<std::string> argv{ta, "run", "--no-typewriter", "--seed", std::to_string(request.seed)};
  if (!request.challenge_name.empty()) {
    argv.push_back("--name");
    argv.push_back(request.challenge_name);
  }
  if (!request.start_level.empty()) {
    argv.push_back("--start-level");
    argv.push_back(request.start_level);
  }
  argv.push_back(challenge);
  return argv;
}

const std::vector<std::string> inherited_ta_variables = {
    "TA_BIN", "TA_CHALLENGE_FILE", "TA_CHALLENGE_NAME", "TA_MONITOR_URL", "TA_LAB_ID", "TA_SEED", "TA_NO_TYPEWRITER",
    "BASH_ENV", "ENV", "PROMPT_COMMAND", "HISTFILE"};

std::string last_line(std::string_view text) {
  const auto newline = text.rfind('\n');
  return std::string(newline == std::string_view::npos ? text : text.substr(newline + 1));
}

}  // namespace

WalkthroughSpec parse_walkthrough(std::string_view yaml) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(std::string("walkthrough: ") + e.what());
  }
  if (!root.IsMap()) throw std::invalid_argument("walkthrough must be a mapping");
  WalkthroughSpec spec;
  try {
    if (!root["start_level"] || !root["finish_level"]) {
      throw std::invalid_argument("walkthrough needs start_level and finish_level");
    }
    spec.start_level = root["start_level"].as<std::string>();
    spec.finish_level = root["finish_level"].as<std::string>();
    const auto tests = root["tests"];
    if (tests && !tests.IsNull()) {
      if (!tests.IsMap()) throw std::invalid_argument("walkthrough: tests must map level names to commands");
      for (const auto& item : tests) spec.tests[item.first.as<std::string>()] = item.second.as<std::string>();
    }
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(std::string("walkthrough: ") + e.what());
  }
  return spec;
}

WalkthroughSpec load_walkthrough(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_walkthrough(buffer.str());
}

std::vector<std::string> check_walkthrough(const WalkthroughSpec& walkthrough, const ChallengeSpec& spec) {
  std::vector<std::string> problems;
  if (!spec.contains(walkthrough.start_level)) problems.push_back("start_level '" + walkthrough.start_level + "' is not a level");
  if (!spec.contains(walkthrough.finish_level)) {
    problems.push_back("finish_level '" + walkthrough.finish_level + "' is not a level");
  }
  for (const auto& [level, command] : walkthrough.tests) {
    if (!spec.contains(level)) problems.push_back("tests mention unknown level '" + level + "'");
  }
  if (!problems.empty()) return problems;

  // Search over levels that have a command; the finish level itself does not need one.
  auto search = [&](bool require_commands) {
    std::set<std::string> seen{walkthrough.start_level};
    std::deque<std::string> queue{walkthrough.start_level};
    while (!queue.empty()) {
      const auto level = queue.front();
      queue.pop_front();
      if (level == walkthrough.finish_level) return true;
      if (require_commands && !walkthrough.tests.count(level)) continue;
      for (const auto& next : spec.at(level).next) {
        if (seen.insert(next).second) queue.push_back(next);
      }
    }
    return false;
  };
  if (!search(false)) {
    problems.push_back("finish_level '" + walkthrough.finish_level + "' is not reachable from '" +
                       walkthrough.start_level + "'");
  } else if (!search(true)) {
    problems.push_back("no path from '" + walkthrough.start_level + "' to '" + walkthrough.finish_level +
                       "' has a command for every level");
  }
  return problems;
}

LocalSandbox::~LocalSandbox() { remove_quietly(root_); }

void LocalSandbox::prepare() {
  remove_quietly(root_);
  root_ = make_temp_dir("ta-sandbox.");
  std::filesystem::create_directories(root_ / "home");
}

LaunchCommand LocalSandbox::launch(const SessionRequest& request) const {
  LaunchCommand command;
  command.argv = run_arguments(request, std::filesystem::absolute(request.ta_binary).string(),
                               std::filesystem::absolute(request.challenge_file).string());
  command.env = {{"HOME", (root_ / "home").string()},
                 {"USER", "walkthrough"},
                 {"TERM", "dumb"},
                 {"TA_NO_TYPEWRITER", "1"}};
  command.unset_env = inherited_ta_variables;
  command.cwd = root_ / "home";
  return command;
}

ContainerSandbox::ContainerSandbox(std::string image, std::string runtime)
    : image_(std::move(image)), runtime_(std::move(runtime)) {}

ContainerSandbox::~ContainerSandbox() { remove_quietly(root_); }

void ContainerSandbox::prepare() {
  if (run_silently({runtime_, "version"}) != 0) {
    throw SandboxError("container runtime '" + runtime_ + "' is not available");
  }
  remove_quietly(root_);
  root_ = make_temp_dir("ta-container.");
}

LaunchCommand ContainerSandbox::launch(const SessionRequest& request) const {
  const std::string ta_path = "/opt/termadventure/ta";
  const std::string challenge_path = "/opt/termadventure/challenge";
  LaunchCommand command;
  command.argv = {runtime_,
                  "run",
                  "--rm",
                  "-i",
                  "--network=none",
                  "-e",
                  "TA_NO_TYPEWRITER=1",
                  "-e",
                  "TERM=dumb",
                  "-v",
                  std::filesystem::absolute(request.ta_binary).string() + ":" + ta_path + ":ro",
                  "-v",
                  std::filesystem::absolute(request.challenge_file).string() + ":" + challenge_path + ":ro",
                  image_};
  const auto run = run_arguments(request, ta_path, challenge_path);
  command.argv.insert(command.argv.end(), run.begin(), run.end());
  return command;
}

std::optional<std::string> level_from_prompt(std::string_view output) {
  static const std::regex prompt(R"(\[[A-Za-z0-9_.-]+\|([^\]|\s]+)\] .* \$ $)");
  const auto line = last_line(output);
  std::smatch match;
  if (!std::regex_search(line, match, prompt)) return std::nullopt;
  return match[1].str();
}

WalkthroughReport run_walkthrough(const ChallengeSpec& spec, const WalkthroughSpec& walkthrough, Sandbox& sandbox,
                                  const WalkthroughOptions& options) {
  WalkthroughReport report;
  report.seed = options.seed;
  auto fail = [&](std::string level, std::string reason) {
    report.passed = false;
    report.failed_level = std::move(level);
    report.reason = std::move(reason);
    return report;
  };

  if (const auto findings = validate_dag(spec); !findings.empty()) {
    return fail(walkthrough.start_level, "invalid challenge: " + findings.front().message);
  }
  if (const auto problems = check_walkthrough(walkthrough, spec); !problems.empty()) {
    return fail(walkthrough.start_level, "invalid walkthrough: " + problems.front());
  }

  try {
    sandbox.prepare();
  } catch (const std::exception& e) {
    return fail(walkthrough.start_level, std::string("sandbox startup failed: ") + e.what());
  }
  const auto challenge_file = sandbox.workdir() / "challenge.txt";
  {
    std::ofstream out(challenge_file, std::ios::binary);
    out << serialize_challenge(spec);
  }

  SessionRequest request;
  request.ta_binary = options.ta_binary;
  request.challenge_file = challenge_file;
  request.challenge_name = spec.challenge_name;
  request.seed = options.seed;
  if (walkthrough.start_level != spec.entry_level) request.start_level = walkthrough.start_level;
  const LaunchCommand launch = sandbox.launch(request);

  ProcessOptions process_options;
  process_options.argv = launch.argv;
  process_options.env = launch.env;
  process_options.unset_env = launch.unset_env;
  process_options.cwd = launch.cwd;
  process_options.pipe_stdin = true;
  process_options.capture_output = true;

  std::optional<Subprocess> shell;
  try {
    shell.emplace(process_options);
  } catch (const std::exception& e) {
    return fail(walkthrough.start_level, std::string("sandbox startup failed: ") + e.what());
  }

  std::size_t seen_output = 0;
  auto next_prompt = [&]() -> std::optional<std::string> {
    const auto from = seen_output;
    const bool found = shell->read_until(
        [from](std::string_view out) { return level_from_prompt(out.substr(from)).has_value(); },
        options.step_timeout);
    report.transcript = shell->output();
    seen_output = shell->output().size();
    if (!found) return std::nullopt;
    return level_from_prompt(std::string_view(shell->output()).substr(from));
  };

  // Cross-checks what the prompt says against the persisted progress record.
  const SaltTriple salts = SaltTriple::embedded();
  auto progress_matches = [&](const std::string& level) {
    const auto home = sandbox.home();
    if (!home) return true;
    const auto record = ProgressStore(*home).load(spec.challenge_name);
    if (!record) return false;
    const auto resolved = resolve_level_from_hash(*record, spec, salts, home->string());
    return resolved && *resolved == level;
  };

  auto finish = [&](WalkthroughReport result) {
    shell->write("exit\n");
    shell->close_stdin();
    if (!shell->wait_for(std::chrono::milliseconds(3000))) shell->kill();
    shell->drain(std::chrono::milliseconds(200));
    result.transcript = shell->output();
    return result;
  };

  auto level = next_prompt();
  if (!level) return finish(fail(walkthrough.start_level, "the session never showed a level prompt"));
  if (*level != walkthrough.start_level) {
    return finish(fail(*level, "session started at '" + *level + "' instead of '" + walkthrough.start_level + "'"));
  }
  report.visited.push_back(*level);

  for (std::size_t steps = 0; steps <= spec.levels.size(); ++steps) {
    const auto test = walkthrough.tests.find(*level);
    if (test == walkthrough.tests.end()) {
      if (*level == walkthrough.finish_level) {
        report.passed = true;
        return finish(report);
      }
      return finish(fail(*level, "uncovered level: the walkthrough has no command for '" + *level + "'"));
    }
    if (!progress_matches(*level)) {
      return finish(fail(*level, "progress record does not resolve to '" + *level + "'"));
    }

    report.command = test->second;
    shell->write(test->second + "\n");
    const auto previous = *level;
    level = next_prompt();
    if (!level) return finish(fail(previous, "no prompt after running the command (timeout)"));
    if (*level == previous) return finish(fail(previous, "the command did not advance past '" + previous + "'"));
    if (previous == walkthrough.finish_level) {
      report.passed = true;
      report.command.clear();
      return finish(report);
    }
    if (*level == finished_label) {
      return finish(fail(previous, "the adventure finished at '" + previous + "' without reaching '" +
                                       walkthrough.finish_level + "'"));
    }
    if (!spec.contains(*level)) return finish(fail(previous, "the prompt names an unknown level '" + *level + "'"));
    report.visited.push_back(*level);
    if (*level == walkthrough.finish_level && !walkthrough.tests.count(*level)) {
      if (!progress_matches(*level)) {
        return finish(fail(*level, "progress record does not resolve to '" + *level + "'"));
      }
      report.passed = true;
      report.command.clear();
      return finish(report);
    }
  }
  return finish(fail(*level, "too many steps; the session did not terminate"));
}

bool SweepReport::all_passed() const {
  return std::all_of(runs.begin(), runs.end(), [](const WalkthroughReport& r) { return r.passed; });
}

SweepReport seed_sweep(const ChallengeSpec& spec, const WalkthroughSpec& walkthrough, const SandboxFactory& factory,
                       const std::vector<std::uint64_t>& seeds, const WalkthroughOptions& options, unsigned jobs) {
  SweepReport sweep;
  sweep.runs.resize(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (auto i = next++; i < seeds.size(); i = next++) {
      WalkthroughOptions run_options = options;
      run_options.seed = seeds[i];
      auto sandbox = factory();
      sweep.runs[i] = run_walkthrough(spec, walkthrough, *sandbox, run_options);
    }
  };
  jobs = std::max(1U, std::min<unsigned>(jobs, static_cast<unsigned>(seeds.size())));
  std::vector<std::thread> threads;
  for (unsigned j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (const auto& run : sweep.runs) sweep.visited.insert(run.visited.begin(), run.visited.end());
  return sweep;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  auto number = [&](std::string_view part) {
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    if (part.empty() || !std::all_of(part.begin(), part.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw std::invalid_argument("bad seed list: '" + std::string(text) + "'");
    }
    return std::stoull(std::string(part));
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    const auto part = text.substr(start, end - start);
    if (const auto dots = part.find(".."); dots != std::string_view::npos) {
      const auto low = number(part.substr(0, dots));
      const auto high = number(part.substr(dots + 2));
      if (high < low) throw std::invalid_argument("bad seed range: '" + std::string(part) + "'");
      for (auto s = low; s <= high; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(number(part));
    }
    start = end + 1;
  }
  return seeds;
}

}  // namespace ta
