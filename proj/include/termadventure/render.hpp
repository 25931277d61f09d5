#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace ta {

struct StyleSet {
  bool bold = false;
  bool italic = false;
  bool underline = false;
  bool code = false;

  bool plain() const { return !bold && !italic && !underline && !code; }
  friend bool operator==(const StyleSet&, const StyleSet&) = default;
};

namespace ansi {
inline constexpr std::string_view bold = "\x1b[1m";
inline constexpr std::string_view italic = "\x1b[3m";
inline constexpr std::string_view underline = "\x1b[4m";
inline constexpr std::string_view code = "\x1b[36m";
inline constexpr std::string_view reset = "\x1b[0m";
}  // namespace ansi

inline constexpr std::chrono::milliseconds character_delay{50};
inline constexpr std::chrono::milliseconds sentence_end_delay{500};

/// One printed character (a UTF-8 code point) with its style and the pause after it.
struct Segment {
  std::string text;
  StyleSet style;
  std::chrono::milliseconds post_delay{0};
};

struct RenderedText {
  std::vector<Segment> segments;

  /// The text without markup.
  std::string plain_text() const;
  std::chrono::milliseconds total_delay() const;
  /// The text with ANSI escapes, no delays.
  std::string to_ansi() const;
};

/// Parses the markdown subset used in level bodies:
///   **bold**   *italic*   _underline_   `code`   \x (literal x)
/// Markers that are not closed are printed literally. Underscores and stars
/// inside words (ta_print_again) do not open emphasis. Every character gets a
/// 50 ms post-delay, except `.`, `!` and `?`, which get 500 ms.
RenderedText render_level(std::string_view body);

/// Source of the "skip the animation" signal.
class SkipSource {
 public:
  virtual ~SkipSource() = default;
  /// Blocks until `deadline`; returns true early if the user asked to skip.
  virtual bool wait_until(std::chrono::steady_clock::time_point deadline) = 0;
};

/// Reads Enter or Space from a terminal. Puts the terminal into non-canonical,
/// no-echo mode for its lifetime and restores it afterwards.
class TerminalSkipSource : public SkipSource {
 public:
  explicit TerminalSkipSource(int fd);
  ~TerminalSkipSource() override;
  TerminalSkipSource(const TerminalSkipSource&) = delete;
  TerminalSkipSource& operator=(const TerminalSkipSource&) = delete;

  bool wait_until(std::chrono::steady_clock::time_point deadline) override;

 private:
  int fd_;
  bool restore_ = false;
  struct Saved;
  std::unique_ptr<Saved> saved_;
};

struct TypewriterOptions {
  bool delays = true;  ///< false prints everything at once
  bool colors = true;  ///< emit ANSI styling
};

/// Prints `text` honouring per-character delays. When `skip` reports a
/// skip, the rest is printed immediately. Returns true if skipped.
bool typewriter_print(const RenderedText& text, std::ostream& out, const TypewriterOptions& options,
                      SkipSource* skip = nullptr);

}  // namespace ta
