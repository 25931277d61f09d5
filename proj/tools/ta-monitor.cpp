// ta-monitor: the classroom monitor service.

#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "termadventure/monitor_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"TermAdventure classroom monitor"};
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "monitor-data";
  std::string token;
  long idle_seconds = 600;
  std::size_t attempts = 10;
  app.add_option("--host", host, "address to listen on")->capture_default_str();
  app.add_option("--port", port, "port to listen on (0: any free port)")->capture_default_str();
  app.add_option("--data-dir", data_dir, "where the per-lab event logs live")->capture_default_str();
  app.add_option("--token", token, "instructor token required by the lab endpoints")->envname("TA_MONITOR_TOKEN");
  app.add_option("--idle-seconds", idle_seconds, "inactivity before a student counts as stuck")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app.add_option("--attempts", attempts, "failed attempts on one level before a student counts as stuck")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  // SIGINT and SIGTERM are taken by a waiting thread instead of a handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    ta::MonitorStore store(std::filesystem::path(data_dir), {std::chrono::seconds(idle_seconds), attempts});
    ta::MonitorServer server(store, {token});
    const int bound = server.bind(host, port);
    std::thread([&server, signals] {
      int received = 0;
      sigwait(&signals, &received);
      server.stop();
    }).detach();
    std::cout << "ta-monitor listening on http://" << host << ":" << bound << std::endl;
    server.listen();
  } catch (const std::exception& e) {
    std::cerr << "ta-monitor: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
