#include "termadventure/subprocess.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <stdexcept>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace ta {

namespace {

// Everything the child needs, prepared before fork() so the child only makes
// async-signal-safe calls.
struct ExecPlan {
  std::vector<std::string> argv_storage;
  std::vector<std::string> env_storage;
  std::vector<char*> argv;
  std::vector<char*> envp;
  std::string cwd;

  explicit ExecPlan(const ProcessOptions& options) : argv_storage(options.argv) {
    if (argv_storage.empty()) throw std::invalid_argument("empty argv");
    std::map<std::string, std::string> env;
    for (char** e = environ; e && *e; ++e) {
      std::string_view entry(*e);
      const auto eq = entry.find('=');
      if (eq == std::string_view::npos) continue;
      env[std::string(entry.substr(0, eq))] = std::string(entry.substr(eq + 1));
    }
    for (const auto& name : options.unset_env) env.erase(name);
    for (const auto& [key, value] : options.env) env[key] = value;
    for (const auto& [key, value] : env) env_storage.push_back(key + "=" + value);

    for (auto& arg : argv_storage) argv.push_back(arg.data());
    argv.push_back(nullptr);
    for (auto& entry : env_storage) envp.push_back(entry.data());
    envp.push_back(nullptr);
    if (options.cwd) cwd = options.cwd->string();
  }
};

[[noreturn]] void exec_child(const ExecPlan& plan) {
  if (!plan.cwd.empty() && ::chdir(plan.cwd.c_str()) != 0) ::_exit(127);
  ::execve(plan.argv[0], plan.argv.data(), plan.envp.data());
  // argv[0] without a slash: search PATH like execvp, with our environment.
  if (std::strchr(plan.argv[0], '/') == nullptr) {
    const char* path = nullptr;
    for (char* const* e = plan.envp.data(); *e; ++e) {
      if (std::strncmp(*e, "PATH=", 5) == 0) path = *e + 5;
    }
    if (!path) path = "/usr/local/bin:/usr/bin:/bin";
    char candidate[4096];
    const std::size_t name_len = std::strlen(plan.argv[0]);
    while (*path) {
      const char* end = std::strchr(path, ':');
      const std::size_t dir_len = end ? static_cast<std::size_t>(end - path) : std::strlen(path);
      if (dir_len + name_len + 2 < sizeof candidate) {
        std::memcpy(candidate, path, dir_len);
        candidate[dir_len] = '/';
        std::memcpy(candidate + dir_len + 1, plan.argv[0], name_len + 1);
        ::execve(candidate, plan.argv.data(), plan.envp.data());
      }
      if (!end) break;
      path = end + 1;
    }
  }
  ::_exit(127);
}

int decode_status(int raw) {
  if (WIFEXITED(raw)) return WEXITSTATUS(raw);
  if (WIFSIGNALED(raw)) return 128 + WTERMSIG(raw);
  return 1;
}

}  // namespace

Subprocess::Subprocess(const ProcessOptions& options) {
  const ExecPlan plan(options);
  int in_pipe[2] = {-1, -1};
  int out_pipe[2] = {-1, -1};
  if (options.pipe_stdin && ::pipe2(in_pipe, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");
  if (options.capture_output && ::pipe2(out_pipe, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");
  const int devnull = ::open("/dev/null", O_RDWR | O_CLOEXEC);

  pid_ = ::fork();
  if (pid_ < 0) throw std::runtime_error(std::string("fork failed: ") + std::strerror(errno));
  if (pid_ == 0) {
    ::dup2(options.pipe_stdin ? in_pipe[0] : devnull, STDIN_FILENO);
    ::dup2(options.capture_output ? out_pipe[1] : devnull, STDOUT_FILENO);
    ::dup2(options.capture_output ? out_pipe[1] : devnull, STDERR_FILENO);
    ::signal(SIGPIPE, SIG_DFL);
    exec_child(plan);
  }

  ::close(devnull);
  if (options.pipe_stdin) {
    ::close(in_pipe[0]);
    stdin_fd_ = in_pipe[1];
  }
  if (options.capture_output) {
    ::close(out_pipe[1]);
    output_fd_ = out_pipe[0];
  }
}

Subprocess::Subprocess(Subprocess&& other) noexcept
    : pid_(other.pid_),
      stdin_fd_(other.stdin_fd_),
      output_fd_(other.output_fd_),
      status_(other.status_),
      output_(std::move(other.output_)) {
  other.pid_ = -1;
  other.stdin_fd_ = -1;
  other.output_fd_ = -1;
}

Subprocess::~Subprocess() {
  if (pid_ > 0 && !status_) {
    kill();
    wait();
  }
  if (stdin_fd_ >= 0) ::close(stdin_fd_);
  if (output_fd_ >= 0) ::close(output_fd_);
}

void Subprocess::write(std::string_view data) {
  if (stdin_fd_ < 0) throw std::runtime_error("stdin is not a pipe");
  // Writing to a child that already exited must not kill us with SIGPIPE.
  struct sigaction ignore{}, previous{};
  ignore.sa_handler = SIG_IGN;
  ::sigaction(SIGPIPE, &ignore, &previous);
  while (!data.empty()) {
    const auto n = ::write(stdin_fd_, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  ::sigaction(SIGPIPE, &previous, nullptr);
}

void Subprocess::close_stdin() {
  if (stdin_fd_ >= 0) ::close(stdin_fd_);
  stdin_fd_ = -1;
}

bool Subprocess::read_until(const std::function<bool(std::string_view)>& done, std::chrono::milliseconds timeout) {
  using namespace std::chrono;
  const auto deadline = steady_clock::now() + timeout;
  if (done(output_)) return true;
  while (output_fd_ >= 0) {
    const auto remaining = duration_cast<milliseconds>(deadline - steady_clock::now()).count();
    if (remaining <= 0) return false;
    pollfd p{output_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(remaining));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) return false;
    char buffer[4096];
    const auto n = ::read(output_fd_, buffer, sizeof buffer);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      ::close(output_fd_);
      output_fd_ = -1;
      return done(output_);
    }
    output_.append(buffer, static_cast<std::size_t>(n));
    if (done(output_)) return true;
  }
  return false;
}

void Subprocess::drain(std::chrono::milliseconds timeout) {
  read_until([](std::string_view) { return false; }, timeout);
}

int Subprocess::wait() {
  if (status_) return *status_;
  if (pid_ <= 0) return -1;
  int raw = 0;
  while (::waitpid(pid_, &raw, 0) < 0) {
    if (errno != EINTR) return -1;
  }
  status_ = decode_status(raw);
  return *status_;
}

std::optional<int> Subprocess::wait_for(std::chrono::milliseconds timeout) {
  using namespace std::chrono;
  if (status_) return status_;
  const auto deadline = steady_clock::now() + timeout;
  while (true) {
    int raw = 0;
    const auto r = ::waitpid(pid_, &raw, WNOHANG);
    if (r == pid_) {
      status_ = decode_status(raw);
      return status_;
    }
    if (r < 0 && errno != EINTR) return std::nullopt;
    if (steady_clock::now() >= deadline) return std::nullopt;
    ::usleep(2000);
  }
}

void Subprocess::kill() {
  if (pid_ > 0 && !status_) ::kill(pid_, SIGKILL);
}

int run_silently(const std::vector<std::string>& argv, const std::optional<std::filesystem::path>& cwd) {
  try {
    ProcessOptions options;
    options.argv = argv;
    options.cwd = cwd;
    Subprocess process(options);
    return process.wait();
  } catch (const std::exception&) {
    return 127;
  }
}

void spawn_detached(const std::vector<std::string>& argv) {
  ProcessOptions options;
  options.argv = argv;
  const ExecPlan plan(options);
  const pid_t child = ::fork();
  if (child < 0) return;
  if (child == 0) {
    ::setsid();
    if (::fork() != 0) ::_exit(0);
    const int devnull = ::open("/dev/null", O_RDWR);
    ::dup2(devnull, STDIN_FILENO);
    ::dup2(devnull, STDOUT_FILENO);
    ::dup2(devnull, STDERR_FILENO);
    // Do not hold the caller's pipes open (the tester waits for EOF on them).
    for (int fd = 3; fd < 1024; ++fd) ::close(fd);
    exec_child(plan);
  }
  int raw = 0;
  while (::waitpid(child, &raw, 0) < 0 && errno == EINTR) {
  }
}

std::filesystem::path current_executable() {
  std::error_code ec;
  auto path = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) return {};
  return path;
}

}  // namespace ta
