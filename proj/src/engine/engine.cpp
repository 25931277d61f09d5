#include "termadventure/engine.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>

#include <arpa/inet.h>
#include <ifaddrs.h>
#include <netinet/in.h>
#include <pwd.h>
#include <unistd.h>

#include "termadventure/subprocess.hpp"

namespace ta {

namespace {

// Progress for a finished adventure is the hash of this prefix plus the leaf
// name. It cannot collide with a level because '*' is not allowed in names.
constexpr std::string_view finished_prefix = "*finished*/";

std::uint64_t fnv1a(std::string_view data, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (const unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Unbiased draw from [0, bound) by rejection; std::uniform_int_distribution
// is not specified bit-for-bit, and paths must not change across toolchains.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t value = rng();
  while (value >= limit) value = rng();
  return value % bound;
}

std::string primary_ip() {
  ifaddrs* list = nullptr;
  if (::getifaddrs(&list) != 0) return "127.0.0.1";
  std::string fallback_v6;
  std::string found;
  for (auto* ifa = list; ifa && found.empty(); ifa = ifa->ifa_next) {
    if (!ifa->ifa_addr) continue;
    char buffer[INET6_ADDRSTRLEN] = {};
    if (ifa->ifa_addr->sa_family == AF_INET) {
      const auto* addr = reinterpret_cast<const sockaddr_in*>(ifa->ifa_addr);
      if ((ntohl(addr->sin_addr.s_addr) >> 24) == 127) continue;
      if (::inet_ntop(AF_INET, &addr->sin_addr, buffer, sizeof buffer)) found = buffer;
    } else if (ifa->ifa_addr->sa_family == AF_INET6 && fallback_v6.empty()) {
      const auto* addr = reinterpret_cast<const sockaddr_in6*>(ifa->ifa_addr);
      if (IN6_IS_ADDR_LOOPBACK(&addr->sin6_addr) || IN6_IS_ADDR_LINKLOCAL(&addr->sin6_addr)) continue;
      if (::inet_ntop(AF_INET6, &addr->sin6_addr, buffer, sizeof buffer)) fallback_v6 = buffer;
    }
  }
  ::freeifaddrs(list);
  if (!found.empty()) return found;
  if (!fallback_v6.empty()) return fallback_v6;
  return "127.0.0.1";
}

void write_atomically(const std::filesystem::path& path, std::string_view content) {
  auto temp = path;
  temp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + temp.string());
  }
  std::filesystem::rename(temp, path);
}

}  // namespace

SessionInfo SessionInfo::discover() {
  SessionInfo info;
  if (const char* user = std::getenv("USER"); user && *user) {
    info.user = user;
  } else if (const passwd* pw = ::getpwuid(::getuid())) {
    info.user = pw->pw_name;
  } else {
    info.user = "uid" + std::to_string(::getuid());
  }
  char host[256] = {};
  info.host = ::gethostname(host, sizeof host - 1) == 0 ? host : "localhost";
  info.ip = primary_ip();
  if (const char* home = std::getenv("HOME"); home && *home) {
    info.home = home;
  } else if (const passwd* pw = ::getpwuid(::getuid())) {
    info.home = pw->pw_dir;
  }
  return info;
}

std::uint64_t default_seed(std::string_view user, std::string_view challenge) {
  return splitmix64(fnv1a(challenge, fnv1a(std::string(user) + '\0')));
}

std::mt19937_64 level_rng(std::uint64_t seed, std::string_view level) {
  return std::mt19937_64(splitmix64(seed ^ fnv1a(level)));
}

std::optional<std::string> select_next_level(const Level& level, std::mt19937_64& rng) {
  if (level.next.empty()) return std::nullopt;
  return level.next[bounded(rng, level.next.size())];
}

bool evaluate_test(std::string_view test_command, const std::optional<std::filesystem::path>& cwd) {
  return run_silently({"bash", "-c", std::string(test_command)}, cwd) == 0;
}

std::string prompt_safe(std::string_view name) {
  std::string safe(name);
  for (auto& c : safe) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) c = '_';
  }
  return safe;
}

std::string format_prompt(std::string_view challenge, std::string_view level) {
  return "[" + prompt_safe(challenge) + "|" + std::string(level) + "] \\w $ ";
}

ChallengeSpec load_challenge_file(const std::filesystem::path& path, std::string challenge_name,
                                  const ChallengeKey& key) {
  if (std::filesystem::is_directory(path)) return load_challenge(path, std::move(challenge_name));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (challenge_name.empty()) challenge_name = path.stem().string();
  if (!is_encrypted_container(data)) {
    return parse_challenge(std::string_view(reinterpret_cast<const char*>(data.data()), data.size()),
                           std::move(challenge_name));
  }
  const Bytes plain = decrypt_challenge(data, key);
  return parse_challenge(std::string_view(reinterpret_cast<const char*>(plain.data()), plain.size()),
                         std::move(challenge_name));
}

Engine::Engine(ChallengeSpec spec, SessionInfo session, EventSink& events, std::ostream& out, EngineOptions options)
    : spec_(std::move(spec)),
      session_(std::move(session)),
      events_(events),
      out_(out),
      options_(std::move(options)),
      current_(spec_.entry_level) {
  const ProgressStore store(session_.home);
  const auto record = store.load(spec_.challenge_name);
  if (!record) return;
  const std::string home = session_.home.string();
  try {
    if (auto level = resolve_level_from_hash(*record, spec_, options_.salts, home)) {
      current_ = *level;
      return;
    }
  } catch (const AmbiguousProgressError&) {
    // Falls through to the restart below.
  }
  if (const auto digest = record->digest()) {
    for (const auto& level : spec_.levels) {
      if (!level.is_leaf()) continue;
      const auto marker = std::string(finished_prefix) + level.name;
      if (compute_progress_hash(options_.salts, spec_.challenge_name, marker, home) == *digest) {
        current_ = level.name;
        finished_ = true;
        return;
      }
    }
  }
  warning_ = "Your saved progress could not be read; starting again from the first level.";
  save_progress();
}

Event Engine::make_event(EventType type, std::string_view command) const {
  Event event;
  event.event_id = generate_event_id();
  event.type = type;
  event.user = session_.user;
  event.host = session_.host;
  event.ip = session_.ip;
  event.lab_id = session_.lab_id;
  event.level_id = current_;
  event.command_text = std::string(command);
  event.timestamp = now_utc();
  return event;
}

void Engine::save_progress() const {
  const ProgressStore store(session_.home);
  const std::string level = finished_ ? std::string(finished_prefix) + current_ : current_;
  store.save(spec_.challenge_name,
             compute_progress_hash(options_.salts, spec_.challenge_name, level, session_.home.string()));
}

void Engine::show_level(bool animate) const {
  TypewriterOptions typewriter = options_.typewriter;
  if (!animate) typewriter.delays = false;
  out_ << '\n';
  typewriter_print(render_level(spec_.at(current_).body), out_, typewriter, options_.skip);
  out_ << "\n\n";
  out_.flush();
}

void Engine::start() {
  if (warning_) out_ << *warning_ << '\n';
  save_progress();
  events_.emit(make_event(EventType::start, ""));
  if (finished_) {
    out_ << "\nYou have already finished " << spec_.challenge_name << ".\n";
  }
  show_level(!finished_);
  write_current_level_file();
}

TickResult Engine::tick(std::string_view last_command, bool test_passed) {
  TickResult result;
  result.level = current_;
  if (finished_) {
    result.action = TickAction::done;
    result.prompt = prompt();
    return result;
  }
  if (!test_passed) {
    events_.emit(make_event(EventType::command, last_command));
    result.action = TickAction::stay;
    result.prompt = prompt();
    return result;
  }

  const Level& level = spec_.at(current_);
  auto rng = level_rng(session_.seed, level.name);
  Event passed = make_event(EventType::passed, last_command);
  if (const auto next = select_next_level(level, rng)) {
    passed.extra["next_level"] = *next;
    events_.emit(passed);
    current_ = *next;
    save_progress();
    result.action = TickAction::advance;
    show_level(true);
  } else {
    events_.emit(passed);
    finished_ = true;
    save_progress();
    // The monitor orders by timestamp, so exit must not tie with passed.
    Event exit = make_event(EventType::exit, "");
    exit.timestamp = std::max(exit.timestamp, passed.timestamp + std::chrono::microseconds(1));
    events_.emit(exit);
    result.action = TickAction::finish;
    out_ << "\nCongratulations, you have finished " << spec_.challenge_name << ".\n"
         << "Type ta_print_again to read the last level again.\n\n";
    out_.flush();
  }
  write_current_level_file();
  result.prompt = prompt();
  return result;
}

TickResult Engine::step(std::string_view last_command, const std::optional<std::filesystem::path>& cwd) {
  if (finished_) return tick(last_command, false);
  return tick(last_command, evaluate_test(spec_.at(current_).test, cwd));
}

void Engine::print_again(std::ostream& out) const {
  TypewriterOptions typewriter = options_.typewriter;
  typewriter.delays = false;
  typewriter_print(render_level(spec_.at(current_).body), out, typewriter);
  out << '\n';
  out.flush();
}

void Engine::request_help(std::ostream& out) {
  events_.emit(make_event(EventType::help, ""));
  out << "Your instructor has been notified and will be with you shortly.\n";
  out.flush();
}

std::string Engine::prompt() const {
  return format_prompt(spec_.challenge_name, finished_ ? finished_label : std::string_view(current_));
}

void Engine::write_current_level_file() const {
  write_atomically(session_.home / current_level_filename, render_level(spec_.at(current_).body).plain_text() + "\n");
}

void Engine::jump_to(std::string_view level) {
  if (!spec_.contains(level)) throw std::invalid_argument("no level named " + std::string(level));
  current_ = std::string(level);
  finished_ = false;
  save_progress();
}

}  // namespace ta
