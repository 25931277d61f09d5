#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "termadventure/challenge.hpp"

namespace ta {

/// A scripted path through an adventure: one shell command per level.
struct WalkthroughSpec {
  std::string start_level;
  std::string finish_level;
  std::map<std::string, std::string> tests;
};

/// YAML with keys start_level, finish_level and tests (level -> command).
WalkthroughSpec parse_walkthrough(std::string_view yaml);
WalkthroughSpec load_walkthrough(const std::filesystem::path& path);

/// Problems that make the walkthrough unusable for `spec`: unknown start or
/// finish level, finish unreachable from start, or no start-to-finish path
/// whose levels all have a command. Empty when usable.
std::vector<std::string> check_walkthrough(const WalkthroughSpec& walkthrough, const ChallengeSpec& spec);

class SandboxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// What a sandbox needs to start one engine session.
struct SessionRequest {
  std::filesystem::path ta_binary;
  std::filesystem::path challenge_file;  ///< host path
  std::string challenge_name;
  std::uint64_t seed = 0;
  std::string start_level;  ///< empty: the entry level
};

struct LaunchCommand {
  std::vector<std::string> argv;
  std::map<std::string, std::string> env;
  std::vector<std::string> unset_env;
  std::optional<std::filesystem::path> cwd;
};

/// An isolated place to run one walkthrough.
class Sandbox {
 public:
  virtual ~Sandbox() = default;
  virtual std::string name() const = 0;
  /// Throws SandboxError when the environment cannot be set up.
  virtual void prepare() = 0;
  /// Host directory for scratch files such as the challenge file.
  virtual std::filesystem::path workdir() const = 0;
  virtual LaunchCommand launch(const SessionRequest& request) const = 0;
  /// Host path of the learner's home, if the host can see it.
  virtual std::optional<std::filesystem::path> home() const = 0;
};

/// A temporary directory on the host serves as HOME.
class LocalSandbox : public Sandbox {
 public:
  LocalSandbox() = default;
  ~LocalSandbox() override;
  LocalSandbox(const LocalSandbox&) = delete;
  LocalSandbox& operator=(const LocalSandbox&) = delete;

  std::string name() const override { return "local"; }
  void prepare() override;
  std::filesystem::path workdir() const override { return root_; }
  LaunchCommand launch(const SessionRequest& request) const override;
  std::optional<std::filesystem::path> home() const override { return root_ / "home"; }

 private:
  std::filesystem::path root_;
};

/// Runs the session with `docker run` in `image`, which must provide bash.
/// The engine binary and challenge are bind-mounted read-only.
class ContainerSandbox : public Sandbox {
 public:
  explicit ContainerSandbox(std::string image, std::string runtime = "docker");
  ~ContainerSandbox() override;
  ContainerSandbox(const ContainerSandbox&) = delete;
  ContainerSandbox& operator=(const ContainerSandbox&) = delete;

  std::string name() const override { return "container"; }
  /// Throws SandboxError if the container runtime is not usable.
  void prepare() override;
  std::filesystem::path workdir() const override { return root_; }
  LaunchCommand launch(const SessionRequest& request) const override;
  std::optional<std::filesystem::path> home() const override { return std::nullopt; }

 private:
  std::string image_;
  std::string runtime_;
  std::filesystem::path root_;
};

using SandboxFactory = std::function<std::unique_ptr<Sandbox>()>;

struct WalkthroughOptions {
  std::filesystem::path ta_binary;
  std::uint64_t seed = 1;
  std::chrono::milliseconds step_timeout{10000};
};

struct WalkthroughReport {
  bool passed = false;
  std::uint64_t seed = 0;
  std::string failed_level;  ///< empty on success
  std::string command;       ///< the command that failed to advance, if any
  std::string reason;
  std::vector<std::string> visited;  ///< levels in the order they were reached
  std::string transcript;
};

/// Parses a prompt of the form `[<challenge>|<level>] ... $ ` at the end of
/// `output` and returns the level (or "*done*").
std::optional<std::string> level_from_prompt(std::string_view output);

/// Drives a real engine session through `walkthrough`. Passes when the
/// prompt reaches finish_level (and, if the walkthrough has a command for
/// it, when that command finishes the adventure).
WalkthroughReport run_walkthrough(const ChallengeSpec& spec, const WalkthroughSpec& walkthrough, Sandbox& sandbox,
                                  const WalkthroughOptions& options);

struct SweepReport {
  std::vector<WalkthroughReport> runs;  ///< in seed order
  std::set<std::string> visited;
  bool all_passed() const;
};

/// One walkthrough per seed, each in a fresh sandbox from `factory`, up to
/// `jobs` at a time.
SweepReport seed_sweep(const ChallengeSpec& spec, const WalkthroughSpec& walkthrough, const SandboxFactory& factory,
                       const std::vector<std::uint64_t>& seeds, const WalkthroughOptions& options, unsigned jobs = 1);

/// "1..50" or "3,7,9" or "5".
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace ta
