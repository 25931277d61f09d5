#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <sys/types.h>

namespace ta {

struct ProcessOptions {
  std::vector<std::string> argv;
  std::optional<std::filesystem::path> cwd;
  /// Applied on top of the parent's environment.
  std::map<std::string, std::string> env;
  std::vector<std::string> unset_env;
  bool pipe_stdin = false;       ///< otherwise /dev/null
  bool capture_output = false;   ///< stdout+stderr into one pipe; otherwise /dev/null
};

/// A child process with optional pipes. Kills the child on destruction if it
/// is still running.
class Subprocess {
 public:
  /// Throws std::runtime_error if the process cannot be started.
  explicit Subprocess(const ProcessOptions& options);
  ~Subprocess();
  Subprocess(Subprocess&& other) noexcept;
  Subprocess& operator=(Subprocess&&) = delete;
  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  void write(std::string_view data);
  void close_stdin();

  /// Collects output until `done(output())` holds, EOF, or the timeout.
  /// Returns true only if `done` held.
  bool read_until(const std::function<bool(std::string_view)>& done, std::chrono::milliseconds timeout);
  /// Reads until EOF or timeout.
  void drain(std::chrono::milliseconds timeout);
  const std::string& output() const { return output_; }

  /// Exit status, or 128 + signal number.
  int wait();
  std::optional<int> wait_for(std::chrono::milliseconds timeout);
  void kill();
  pid_t pid() const { return pid_; }

 private:
  pid_t pid_ = -1;
  int stdin_fd_ = -1;
  int output_fd_ = -1;
  std::optional<int> status_;
  std::string output_;
};

/// Runs to completion with stdin/stdout/stderr on /dev/null. Returns the
/// exit status, 127 if the program could not be executed.
int run_silently(const std::vector<std::string>& argv, const std::optional<std::filesystem::path>& cwd = {});

/// Starts `argv` fully detached (new session, reparented to init) and returns
/// immediately. Errors are ignored.
void spawn_detached(const std::vector<std::string>& argv);

/// Absolute path of the running executable.
std::filesystem::path current_executable();

}  // namespace ta
