#include "termadventure/delivery.hpp"

#include <deque>
#include <fstream>
#include <thread>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <httplib.h>

namespace ta {

namespace {

// Holds an flock(2) for its lifetime.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0600);
    if (fd_ < 0) throw std::runtime_error("cannot open lock file " + path.string());
    while (::flock(fd_, LOCK_EX) != 0) {
      if (errno != EINTR) {
        ::close(fd_);
        throw std::runtime_error("cannot lock " + path.string());
      }
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::vector<Event> read_events(const std::filesystem::path& path) {
  std::vector<Event> events;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      events.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception&) {
      // A torn or foreign line is skipped; the rest of the spool is still valid.
    }
  }
  return events;
}

void write_events(const std::filesystem::path& path, const std::vector<Event>& events, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  for (const auto& event : events) out << to_json(event).dump() << '\n';
}

}  // namespace

void MemoryEventSink::emit(const Event& event) {
  std::lock_guard lock(mutex_);
  events_.push_back(event);
}

std::vector<Event> MemoryEventSink::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

EventSpool::EventSpool(std::filesystem::path dir, std::size_t capacity) : dir_(std::move(dir)), capacity_(capacity) {
  std::filesystem::create_directories(dir_);
}

void EventSpool::append(const Event& event) {
  FileLock lock(dir_ / "spool.lock");
  const auto path = dir_ / "events.jsonl";
  write_events(path, {event}, std::ios::app);
  // Enforce the bound lazily: rewrite only when the file has clearly grown past it.
  if (std::filesystem::file_size(path) > capacity_ * 256) {
    auto events = read_events(path);
    if (events.size() > capacity_) {
      std::vector<Event> overflow(events.begin(), events.end() - static_cast<std::ptrdiff_t>(capacity_));
      write_events(dropped_log(), overflow, std::ios::app);
      events.erase(events.begin(), events.end() - static_cast<std::ptrdiff_t>(capacity_));
      write_events(path, events, std::ios::trunc);
    }
  }
}

std::vector<Event> EventSpool::take_all() {
  FileLock lock(dir_ / "spool.lock");
  const auto path = dir_ / "events.jsonl";
  auto events = read_events(path);
  std::error_code ec;
  std::filesystem::remove(path, ec);
  return events;
}

std::size_t EventSpool::size() const {
  FileLock lock(dir_ / "spool.lock");
  return read_events(dir_ / "events.jsonl").size();
}

SpoolEventSink::SpoolEventSink(EventSpool& spool, std::function<void()> on_spooled)
    : spool_(spool), on_spooled_(std::move(on_spooled)) {}

void SpoolEventSink::emit(const Event& event) {
  try {
    spool_.append(event);
    if (on_spooled_) on_spooled_();
  } catch (const std::exception&) {
    // Monitoring must never get in the learner's way.
  }
}

HttpEventTransport::HttpEventTransport(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

bool HttpEventTransport::send(const Event& event) {
  // Split "http://host:port/prefix" into the origin and a path prefix.
  std::string origin = base_url_;
  std::string prefix;
  if (const auto scheme = base_url_.find("://"); scheme != std::string::npos) {
    if (const auto slash = base_url_.find('/', scheme + 3); slash != std::string::npos) {
      origin = base_url_.substr(0, slash);
      prefix = base_url_.substr(slash);
    }
  }
  try {
    httplib::Client client(origin);
    const auto seconds = timeout_.count() / 1000;
    const auto micros = (timeout_.count() % 1000) * 1000;
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);
    const auto result = client.Post(prefix + "/api/v1/events", to_json(event).dump(), "application/json");
    return result && result->status == 200;
  } catch (const std::exception&) {
    return false;
  }
}

bool deliver_with_retry(EventTransport& transport, const Event& event, const RetryPolicy& policy) {
  auto backoff = policy.initial_backoff;
  for (int attempt = 0; attempt < policy.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    if (transport.send(event)) return true;
  }
  return false;
}

FlushStats flush_spool(EventSpool& spool, EventTransport& transport, const RetryPolicy& policy) {
  FileLock lock(spool.dir() / "flush.lock");
  FlushStats stats;
  // Keep draining: events appended while we were sending belong to us too.
  for (auto batch = spool.take_all(); !batch.empty(); batch = spool.take_all()) {
    std::vector<Event> dropped;
    for (const auto& event : batch) {
      if (deliver_with_retry(transport, event, policy)) {
        ++stats.delivered;
      } else {
        ++stats.dropped;
        dropped.push_back(event);
      }
    }
    if (!dropped.empty()) write_events(spool.dropped_log(), dropped, std::ios::app);
  }
  return stats;
}

}  // namespace ta
