#pragma once

// HTTP front end of the monitor. Routes (all JSON unless noted):
//
//   POST /api/v1/events                               engine events, no token
//   GET  /api/v1/labs
//   GET  /api/v1/labs/{lab}/snapshot
//   GET  /api/v1/labs/{lab}/students/{user}/history
//   GET  /api/v1/labs/{lab}/stats
//   GET  /api/v1/labs/{lab}/stuck?idle=<s>&attempts=<n>
//   POST /api/v1/labs/{lab}/ack                       body {"user": ...} or the bare name
//   PUT  /api/v1/labs/{lab}/levels                    body ["lvl1", ...]
//   GET  /api/v1/labs/{lab}/grades.csv?scheme=lvl1:1,lvl2:2   text/csv
//   GET  /api/v1/labs/{lab}/levels/{level}/clusters?k=&distance=&seed=&include_failures=
//   GET  /api/v1/labs/{lab}/stream                    text/event-stream of snapshots
//
// With a token configured, everything except the events route needs
// `Authorization: Bearer <token>` or `?token=<token>` (for EventSource).

#include <memory>
#include <string>
#include <thread>

#include "termadventure/monitor.hpp"

namespace ta {

struct ServerConfig {
  std::string token;  ///< empty: no instructor authentication
  std::chrono::milliseconds stream_heartbeat{15000};
};

class MonitorServer {
 public:
  MonitorServer(MonitorStore& store, ServerConfig config = {});
  ~MonitorServer();
  MonitorServer(const MonitorServer&) = delete;
  MonitorServer& operator=(const MonitorServer&) = delete;

  /// Binds to host:port (port 0 picks a free one) and returns the port.
  /// Throws std::runtime_error if binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void listen();
  /// bind() plus listen() on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace ta
