// ta: the TermAdventure command-line tool.
//
// Learner side:    run, hook, print-again, help-request, flush-events
// Instructor side: compile, validate, encrypt, decrypt, bundle, test

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <CLI11.hpp>

#include "termadventure/build_config.hpp"
#include "termadventure/challenge.hpp"
#include "termadventure/delivery.hpp"
#include "termadventure/engine.hpp"
#include "termadventure/packager.hpp"
#include "termadventure/security.hpp"
#include "termadventure/subprocess.hpp"
#include "termadventure/template.hpp"
#include "termadventure/tester.hpp"

namespace fs = std::filesystem;

namespace {

std::string env_or(const char* name, std::string fallback = {}) {
  const char* value = std::getenv(name);
  return value && *value ? std::string(value) : fallback;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << data;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

ta::ChallengeKey key_from(const std::string& key_hex) {
  return key_hex.empty() ? ta::ChallengeKey::embedded() : ta::ChallengeKey::from_hex(key_hex);
}

fs::path ta_binary() {
  if (auto self = ta::current_executable(); !self.empty()) return self;
  return env_or("TA_BIN", "ta");
}

// Events go to a spool under $HOME/.ta; a detached flusher posts them so the
// prompt never waits on the network. Without a monitor they are discarded.
struct EventPlumbing {
  std::unique_ptr<ta::EventSpool> spool;
  std::unique_ptr<ta::EventSink> sink;
};

EventPlumbing make_event_sink(const fs::path& home, const std::string& monitor_url) {
  EventPlumbing plumbing;
  if (monitor_url.empty()) {
    plumbing.sink = std::make_unique<ta::NullEventSink>();
    return plumbing;
  }
  plumbing.spool = std::make_unique<ta::EventSpool>(home / ".ta" / "spool");
  const std::string bin = ta_binary().string();
  plumbing.sink = std::make_unique<ta::SpoolEventSink>(*plumbing.spool, [bin] { ta::spawn_detached({bin, "flush-events"}); });
  return plumbing;
}

struct EngineSetup {
  std::string challenge_file;
  std::string challenge_name;
  std::string lab_id;
  std::string monitor_url;
  std::optional<std::uint64_t> seed;
  bool no_typewriter = false;
};

// Everything an engine process needs, read from the variables `ta run` exports.
EngineSetup setup_from_environment() {
  EngineSetup setup;
  setup.challenge_file = env_or("TA_CHALLENGE_FILE");
  if (setup.challenge_file.empty()) throw std::runtime_error("TA_CHALLENGE_FILE is not set; start a session with `ta run`");
  setup.challenge_name = env_or("TA_CHALLENGE_NAME");
  setup.lab_id = env_or("TA_LAB_ID", "default");
  setup.monitor_url = env_or("TA_MONITOR_URL");
  if (const auto seed = env_or("TA_SEED"); !seed.empty()) setup.seed = std::stoull(seed);
  setup.no_typewriter = !env_or("TA_NO_TYPEWRITER").empty();
  return setup;
}

struct EngineContext {
  EventPlumbing events;
  std::unique_ptr<ta::TerminalSkipSource> skip;
  std::unique_ptr<ta::Engine> engine;
};

EngineContext open_engine(const EngineSetup& setup, std::ostream& out) {
  EngineContext context;
  auto spec = ta::load_challenge_file(setup.challenge_file, setup.challenge_name, ta::ChallengeKey::embedded());
  auto session = ta::SessionInfo::discover();
  session.lab_id = setup.lab_id;
  session.seed = setup.seed ? *setup.seed : ta::default_seed(session.user, spec.challenge_name);
  fs::create_directories(session.home / ".ta");

  ta::EngineOptions options;
  options.typewriter.delays = !setup.no_typewriter && ::isatty(STDERR_FILENO);
  options.typewriter.colors = ::isatty(STDERR_FILENO);
  if (options.typewriter.delays && ::isatty(STDIN_FILENO)) {
    context.skip = std::make_unique<ta::TerminalSkipSource>(STDIN_FILENO);
    options.skip = context.skip.get();
  }
  context.events = make_event_sink(session.home, setup.monitor_url);
  context.engine = std::make_unique<ta::Engine>(std::move(spec), std::move(session), *context.events.sink, out, options);
  return context;
}

int cmd_run(const EngineSetup& setup, const std::string& start_level, const std::string& rcfile, bool no_shell) {
  auto context = open_engine(setup, std::cerr);
  auto& engine = *context.engine;
  if (!start_level.empty()) engine.jump_to(start_level);
  engine.start();
  context.skip.reset();
  if (no_shell) return 0;

  fs::path rc = rcfile;
  if (rc.empty()) {
    rc = engine.session().home / ".ta" / "bashrc";
    write_bytes(rc, ta::build::bashrc);
  }
  ::setenv("TA_BIN", ta_binary().c_str(), 1);
  ::setenv("TA_CHALLENGE_FILE", fs::absolute(setup.challenge_file).c_str(), 1);
  ::setenv("TA_CHALLENGE_NAME", engine.spec().challenge_name.c_str(), 1);
  ::setenv("TA_LAB_ID", setup.lab_id.c_str(), 1);
  ::setenv("TA_SEED", std::to_string(engine.session().seed).c_str(), 1);
  if (!setup.monitor_url.empty()) ::setenv("TA_MONITOR_URL", setup.monitor_url.c_str(), 1);
  if (setup.no_typewriter) ::setenv("TA_NO_TYPEWRITER", "1", 1);
  else ::unsetenv("TA_NO_TYPEWRITER");

  const std::string rc_path = fs::absolute(rc).string();
  ::execlp("bash", "bash", "--rcfile", rc_path.c_str(), "-i", static_cast<char*>(nullptr));
  std::cerr << "ta: cannot start bash: " << std::strerror(errno) << '\n';
  return 127;
}

int cmd_hook(const std::optional<std::string>& command) {
  try {
    auto context = open_engine(setup_from_environment(), std::cerr);
    auto& engine = *context.engine;
    if (engine.warning()) std::cerr << *engine.warning() << '\n';
    const auto result = command ? engine.step(*command) : ta::TickResult{ta::TickAction::stay, {}, engine.prompt()};
    std::cout << result.prompt << std::flush;
    return 0;
  } catch (const std::exception& e) {
    // Never leave the learner without a prompt.
    std::cerr << "ta: " << e.what() << '\n';
    std::cout << "[ta-error] \\w $ " << std::flush;
    return 0;
  }
}

int cmd_print_again() {
  const auto setup = setup_from_environment();
  auto context = open_engine(setup, std::cerr);
  context.engine->print_again(std::cout);
  return 0;
}

int cmd_help_request() {
  const auto setup = setup_from_environment();
  auto context = open_engine(setup, std::cerr);
  context.engine->request_help(std::cout);
  return 0;
}

int cmd_flush_events(std::string monitor_url) {
  if (monitor_url.empty()) monitor_url = env_or("TA_MONITOR_URL");
  if (monitor_url.empty()) return 0;
  const auto home = ta::SessionInfo::discover().home;
  ta::EventSpool spool(home / ".ta" / "spool");
  ta::HttpEventTransport transport(monitor_url);
  const auto stats = ta::flush_spool(spool, transport);
  if (stats.dropped > 0) {
    std::cerr << "ta: " << stats.dropped << " event(s) could not be delivered; see " << spool.dropped_log() << '\n';
  }
  return 0;
}

void print_findings(const std::vector<ta::ValidationFinding>& findings) {
  for (const auto& finding : findings) {
    std::cerr << "  " << ta::to_string(finding.kind) << ": " << finding.message << '\n';
  }
}

int cmd_compile(const fs::path& input, const std::string& vars_path, const fs::path& output, std::string name,
                bool encrypt, const std::string& key_hex) {
  std::string text = read_text(input);
  if (!vars_path.empty()) text = ta::expand_template(text, ta::load_variables(vars_path));
  if (name.empty()) name = output.stem().string();
  const auto spec = ta::parse_challenge(text, name);
  if (encrypt) {
    const auto sealed = ta::encrypt_challenge(ta::as_bytes(text), key_from(key_hex));
    write_bytes(output, std::string_view(reinterpret_cast<const char*>(sealed.data()), sealed.size()));
  } else {
    write_bytes(output, text);
  }
  std::cout << output.string() << ": " << spec.levels.size() << " level(s), entry '" << spec.entry_level << "'\n";
  return 0;
}

int cmd_validate(const fs::path& input, const std::string& name, const std::string& key_hex) {
  const auto spec = ta::load_challenge_file(input, name, key_from(key_hex));
  const auto findings = ta::validate_dag(spec);
  if (!findings.empty()) {
    std::cerr << input.string() << ": invalid\n";
    print_findings(findings);
    return 1;
  }
  std::size_t leaves = 0;
  for (const auto& level : spec.levels) leaves += level.is_leaf() ? 1 : 0;
  std::cout << input.string() << ": OK, " << spec.levels.size() << " level(s), " << leaves << " leaf level(s), entry '"
            << spec.entry_level << "'\n";
  return 0;
}

int cmd_crypt(bool encrypt, const fs::path& input, const fs::path& output, const std::string& key_hex) {
  const std::string data = read_text(input);
  const auto key = key_from(key_hex);
  const auto result = encrypt ? ta::encrypt_challenge(ta::as_bytes(data), key) : ta::decrypt_challenge(ta::as_bytes(data), key);
  write_bytes(output, std::string_view(reinterpret_cast<const char*>(result.data()), result.size()));
  return 0;
}

void print_summary(const ta::ArchiveSummary& summary) {
  std::cout << "challenge:  " << summary.challenge_name << "\nentrypoint: " << summary.entrypoint
            << "\npayload:    " << summary.payload_size << " bytes, cksum " << summary.crc << "\n";
  for (const auto& item : summary.items) {
    std::cout << (item.executable ? "  x " : "    ") << item.path << " (" << item.size << " bytes)\n";
  }
}

int cmd_test(const fs::path& challenge, const std::string& name, const fs::path& walkthrough_path,
             const std::string& seeds_text, const std::string& sandbox_kind, const std::string& image, unsigned jobs,
             const std::string& key_hex) {
  const auto spec = ta::load_challenge_file(challenge, name, key_from(key_hex));
  const auto walkthrough = ta::load_walkthrough(walkthrough_path);
  ta::SandboxFactory factory;
  if (sandbox_kind == "local") {
    factory = [] { return std::make_unique<ta::LocalSandbox>(); };
  } else {
    factory = [image] { return std::make_unique<ta::ContainerSandbox>(image); };
  }
  ta::WalkthroughOptions options;
  options.ta_binary = ta_binary();
  const auto seeds = ta::parse_seed_list(seeds_text);
  const auto sweep = ta::seed_sweep(spec, walkthrough, factory, seeds, options, jobs);

  for (const auto& run : sweep.runs) {
    std::cout << "seed " << run.seed << ": " << (run.passed ? "PASS" : "FAIL");
    std::string path;
    for (const auto& level : run.visited) path += (path.empty() ? "" : " -> ") + level;
    std::cout << "  [" << path << "]\n";
    if (!run.passed) {
      std::cout << "  at level '" << run.failed_level << "': " << run.reason << '\n';
      if (!run.command.empty()) std::cout << "  command: " << run.command << '\n';
      std::cout << "  transcript:\n";
      std::istringstream transcript(run.transcript);
      for (std::string line; std::getline(transcript, line);) std::cout << "    | " << line << '\n';
    }
  }
  std::cout << "levels visited:";
  for (const auto& level : sweep.visited) std::cout << ' ' << level;
  std::cout << '\n';
  std::size_t unvisited = 0;
  for (const auto& level : spec.levels) unvisited += sweep.visited.count(level.name) ? 0 : 1;
  if (unvisited > 0) std::cout << unvisited << " level(s) never visited with these seeds\n";
  return sweep.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TermAdventure: command-line adventures for learning the UNIX shell", "ta"};
  app.set_version_flag("--version", std::string(ta::build::version));
  app.require_subcommand(1);

  EngineSetup run_setup;
  std::string start_level, rcfile;
  bool no_shell = false;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "start an adventure in a new shell");
  run->add_option("challenge", run_setup.challenge_file, "challenge file (plain or encrypted)")->required()->check(CLI::ExistingPath);
  run->add_option("--name", run_setup.challenge_name, "challenge name (default: file name without extension)");
  run->add_option("--monitor-url", run_setup.monitor_url, "base URL of the class monitor")->envname("TA_MONITOR_URL");
  run->add_option("--lab-id", run_setup.lab_id, "lab identifier reported to the monitor")->envname("TA_LAB_ID");
  run->add_flag("--no-typewriter", run_setup.no_typewriter, "print level text at once");
  auto* seed_option = run->add_option("--seed", seed, "branch selection seed (testing)");
  run->add_option("--start-level", start_level, "begin at this level (testing)");
  run->add_option("--rcfile", rcfile, "shell configuration file (default: the built-in one)");
  run->add_flag("--no-shell", no_shell, "show the level and exit without starting a shell");

  std::optional<std::string> hook_command;
  auto* hook = app.add_subcommand("hook", "prompt hook: judge the last command and print the prompt");
  hook->add_option("--command", hook_command, "the command the user just ran");

  auto* print_again = app.add_subcommand("print-again", "print the current level again");
  auto* help_request = app.add_subcommand("help-request", "ask an instructor for help");

  std::string flush_url;
  auto* flush = app.add_subcommand("flush-events", "deliver spooled events to the monitor");
  flush->add_option("--monitor-url", flush_url, "monitor base URL (default: $TA_MONITOR_URL)");

  fs::path compile_in, compile_out;
  std::string compile_vars, compile_name, key_hex;
  bool compile_encrypt = false;
  auto* compile = app.add_subcommand("compile", "expand a challenge template and check the result");
  compile->add_option("input", compile_in, "challenge template or file")->required()->check(CLI::ExistingFile);
  compile->add_option("--vars", compile_vars, "YAML variables file")->check(CLI::ExistingFile);
  compile->add_option("-o,--output", compile_out, "output file")->required();
  compile->add_option("--name", compile_name, "challenge name (default: output file name)");
  compile->add_flag("--encrypt", compile_encrypt, "write an encrypted container");
  compile->add_option("--key-hex", key_hex, "encryption key (default: the built-in key)");

  fs::path validate_in;
  std::string validate_name;
  auto* validate = app.add_subcommand("validate", "parse a challenge and check its level graph");
  validate->add_option("challenge", validate_in, "challenge file or directory")->required()->check(CLI::ExistingPath);
  validate->add_option("--name", validate_name, "challenge name");
  validate->add_option("--key-hex", key_hex, "key for encrypted files (default: the built-in key)");

  fs::path crypt_in, crypt_out;
  auto* encrypt = app.add_subcommand("encrypt", "encrypt a challenge file");
  auto* decrypt = app.add_subcommand("decrypt", "decrypt a challenge file");
  for (auto* sub : {encrypt, decrypt}) {
    sub->add_option("input", crypt_in)->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output", crypt_out)->required();
    sub->add_option("--key-hex", key_hex, "key (default: the built-in key)");
  }

  fs::path manifest, bundle_out, verify_path, extract_path, extract_to;
  auto* bundle = app.add_subcommand("bundle", "build, verify or unpack a self-extracting bundle");
  auto* manifest_option = bundle->add_option("--manifest", manifest, "bundle manifest (YAML)")->check(CLI::ExistingFile);
  auto* out_option = bundle->add_option("--out", bundle_out, "bundle to write");
  auto* verify_option = bundle->add_option("--verify", verify_path, "check a bundle and list its contents")->check(CLI::ExistingFile);
  auto* extract_option = bundle->add_option("--extract", extract_path, "unpack a bundle without running it")->check(CLI::ExistingFile);
  bundle->add_option("--to", extract_to, "directory for --extract")->needs(extract_option);
  manifest_option->needs(out_option);
  out_option->needs(manifest_option);
  manifest_option->excludes(verify_option)->excludes(extract_option);
  verify_option->excludes(extract_option);

  fs::path test_challenge, test_walkthrough;
  std::string test_name, seeds = "1", sandbox_kind = "local", image = "termadventure/test:latest";
  unsigned jobs = 1;
  auto* test = app.add_subcommand("test", "run a walkthrough against a challenge");
  test->add_option("--challenge", test_challenge, "challenge file")->required()->check(CLI::ExistingPath);
  test->add_option("--walkthrough", test_walkthrough, "walkthrough YAML")->required()->check(CLI::ExistingFile);
  test->add_option("--name", test_name, "challenge name");
  test->add_option("--seeds", seeds, "seeds to try, e.g. 1..50 or 1,4,9")->capture_default_str();
  test->add_option("--sandbox", sandbox_kind, "where sessions run")
      ->check(CLI::IsMember({"local", "container"}))
      ->capture_default_str();
  test->add_option("--image", image, "container image for --sandbox container")->capture_default_str();
  test->add_option("-j,--jobs", jobs, "walkthroughs to run in parallel")->capture_default_str();
  test->add_option("--key-hex", key_hex, "key for encrypted files (default: the built-in key)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (seed_option->count() > 0) run_setup.seed = seed;
      if (run_setup.lab_id.empty()) run_setup.lab_id = "default";
      return cmd_run(run_setup, start_level, rcfile, no_shell);
    }
    if (*hook) return cmd_hook(hook_command);
    if (*print_again) return cmd_print_again();
    if (*help_request) return cmd_help_request();
    if (*flush) return cmd_flush_events(flush_url);
    if (*compile) return cmd_compile(compile_in, compile_vars, compile_out, compile_name, compile_encrypt, key_hex);
    if (*validate) return cmd_validate(validate_in, validate_name, key_hex);
    if (*encrypt) return cmd_crypt(true, crypt_in, crypt_out, key_hex);
    if (*decrypt) return cmd_crypt(false, crypt_in, crypt_out, key_hex);
    if (*bundle) {
      if (!manifest.empty()) {
        ta::build_archive(ta::load_manifest(manifest), bundle_out);
        print_summary(ta::verify_archive(bundle_out));
      } else if (!verify_path.empty()) {
        print_summary(ta::verify_archive(verify_path));
      } else if (!extract_path.empty()) {
        print_summary(ta::extract_archive(extract_path, extract_to.empty() ? fs::current_path() : extract_to));
      } else {
        std::cerr << "ta bundle: give --manifest/--out, --verify or --extract\n";
        return 2;
      }
      return 0;
    }
    if (*test) return cmd_test(test_challenge, test_name, test_walkthrough, seeds, sandbox_kind, image, jobs, key_hex);
  } catch (const ta::ChallengeError& e) {
    std::cerr << "ta: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ta: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
