#pragma once

// Fire-and-forget event delivery from the engine to the monitor.
//
// The prompt hook never talks to the network. It appends events to an
// on-disk spool and hands off to a detached flusher process, which posts
// them in order with bounded retries. Events that still fail are dropped
// and written to a local log.

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "termadventure/event.hpp"

namespace ta {

class EventSink {
 public:
  virtual ~EventSink() = default;
  /// Must not block on the network and must not throw.
  virtual void emit(const Event& event) = 0;
};

/// Collects events in memory; used by tests and dry runs.
class MemoryEventSink : public EventSink {
 public:
  void emit(const Event& event) override;
  std::vector<Event> events() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Event> events_;
};

class NullEventSink : public EventSink {
 public:
  void emit(const Event&) override {}
};

/// Append-only newline-delimited JSON spool guarded by flock(2).
class EventSpool {
 public:
  /// Oldest events are discarded once the spool holds more than `capacity`.
  explicit EventSpool(std::filesystem::path dir, std::size_t capacity = 10000);

  void append(const Event& event);
  /// Removes and returns every spooled event, oldest first.
  std::vector<Event> take_all();
  std::size_t size() const;

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path dropped_log() const { return dir_ / "dropped.log"; }

 private:
  std::filesystem::path dir_;
  std::size_t capacity_;
};

/// Spools every event, then calls `on_spooled` (normally: start a flusher).
class SpoolEventSink : public EventSink {
 public:
  SpoolEventSink(EventSpool& spool, std::function<void()> on_spooled);
  void emit(const Event& event) override;

 private:
  EventSpool& spool_;
  std::function<void()> on_spooled_;
};

class EventTransport {
 public:
  virtual ~EventTransport() = default;
  /// True once the receiver acknowledged the event.
  virtual bool send(const Event& event) = 0;
};

/// POSTs events as JSON to `<base_url>/api/v1/events`.
class HttpEventTransport : public EventTransport {
 public:
  explicit HttpEventTransport(std::string base_url,
                              std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));
  bool send(const Event& event) override;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
};

/// Tries up to `policy.attempts` times, doubling the pause between tries.
bool deliver_with_retry(EventTransport& transport, const Event& event, const RetryPolicy& policy);

struct FlushStats {
  std::size_t delivered = 0;
  std::size_t dropped = 0;
};

/// Drains the spool through `transport` in order. Only one flusher works on
/// a spool at a time (blocking flock on `<spool>/flush.lock`).
FlushStats flush_spool(EventSpool& spool, EventTransport& transport, const RetryPolicy& policy = {});

}  // namespace ta
