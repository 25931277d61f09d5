#include "termadventure/render.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <thread>

#include <poll.h>
#include <termios.h>
#include <unistd.h>

namespace ta {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

class MarkupParser {
 public:
  explicit MarkupParser(std::vector<Segment>& out) : out_(out) {}

  void parse(std::string_view text, StyleSet style) {
    std::size_t i = 0;
    while (i < text.size()) {
      const char c = text[i];
      if (c == '\\' && i + 1 < text.size() && is_markup(text[i + 1])) {
        emit(text.substr(i + 1, 1), style);
        i += 2;
        continue;
      }
      if (c == '`') {
        const auto close = text.find('`', i + 1);
        if (close != std::string_view::npos && close > i + 1) {
          StyleSet inner = style;
          inner.code = true;
          emit(text.substr(i + 1, close - i - 1), inner);
          i = close + 1;
          continue;
        }
      }
      if (c == '*' || c == '_') {
        const std::size_t width = (c == '*' && i + 1 < text.size() && text[i + 1] == '*') ? 2 : 1;
        const std::string_view marker = text.substr(i, width);
        if (const auto close = find_closer(text, i, marker); close != std::string_view::npos) {
          StyleSet inner = style;
          if (width == 2) inner.bold = true;
          else if (c == '*') inner.italic = true;
          else inner.underline = true;
          parse(text.substr(i + width, close - i - width), inner);
          i = close + width;
          continue;
        }
        emit(marker, style);
        i += width;
        continue;
      }
      const auto length = std::min(utf8_length(static_cast<unsigned char>(c)), text.size() - i);
      emit(text.substr(i, length), style);
      i += length;
    }
  }

 private:
  static bool is_markup(char c) { return c == '*' || c == '_' || c == '`' || c == '\\'; }

  // Opening marker at `open`; returns the position of its closer or npos.
  static std::size_t find_closer(std::string_view text, std::size_t open, std::string_view marker) {
    const std::size_t width = marker.size();
    const std::size_t after = open + width;
    if (after >= text.size() || is_space(text[after])) return std::string_view::npos;
    if (marker[0] == '_' && open > 0 && is_word_char(text[open - 1])) return std::string_view::npos;
    if (marker == "*" && text[after] == '*') return std::string_view::npos;

    for (std::size_t j = after + 1; j + width <= text.size(); ++j) {
      if (text[j - 1] == '\\') continue;
      if (text.compare(j, width, marker) != 0) continue;
      if (is_space(text[j - 1])) continue;
      const std::size_t next = j + width;
      if (marker == "*") {
        // Skip over `**` pairs while looking for a single star.
        if (next < text.size() && text[next] == '*') {
          ++j;
          continue;
        }
        if (text[j - 1] == '*') continue;
      }
      if (marker[0] == '_' && next < text.size() && is_word_char(text[next])) continue;
      return j;
    }
    return std::string_view::npos;
  }

  void emit(std::string_view chars, StyleSet style) {
    std::size_t i = 0;
    while (i < chars.size()) {
      const auto length = std::min(utf8_length(static_cast<unsigned char>(chars[i])), chars.size() - i);
      Segment segment{std::string(chars.substr(i, length)), style, character_delay};
      if (length == 1 && (chars[i] == '.' || chars[i] == '!' || chars[i] == '?')) {
        segment.post_delay = sentence_end_delay;
      }
      out_.push_back(std::move(segment));
      i += length;
    }
  }

  std::vector<Segment>& out_;
};

std::string style_codes(const StyleSet& style) {
  std::string codes;
  if (style.bold) codes += ansi::bold;
  if (style.italic) codes += ansi::italic;
  if (style.underline) codes += ansi::underline;
  if (style.code) codes += ansi::code;
  return codes;
}

void switch_style(std::ostream& out, StyleSet& current, const StyleSet& next) {
  if (current == next) return;
  if (!current.plain()) out << ansi::reset;
  out << style_codes(next);
  current = next;
}

}  // namespace

std::string RenderedText::plain_text() const {
  std::string text;
  for (const auto& segment : segments) text += segment.text;
  return text;
}

std::chrono::milliseconds RenderedText::total_delay() const {
  std::chrono::milliseconds total{0};
  for (const auto& segment : segments) total += segment.post_delay;
  return total;
}

std::string RenderedText::to_ansi() const {
  std::ostringstream out;
  typewriter_print(*this, out, TypewriterOptions{.delays = false, .colors = true});
  return out.str();
}

RenderedText render_level(std::string_view body) {
  RenderedText rendered;
  MarkupParser(rendered.segments).parse(body, StyleSet{});
  return rendered;
}

struct TerminalSkipSource::Saved {
  termios attributes;
};

TerminalSkipSource::TerminalSkipSource(int fd) : fd_(fd) {
  termios attributes{};
  if (fd_ < 0 || !::isatty(fd_) || ::tcgetattr(fd_, &attributes) != 0) return;
  saved_ = std::make_unique<Saved>(Saved{attributes});
  attributes.c_lflag &= static_cast<tcflag_t>(~(ICANON | ECHO));
  attributes.c_cc[VMIN] = 0;
  attributes.c_cc[VTIME] = 0;
  restore_ = ::tcsetattr(fd_, TCSANOW, &attributes) == 0;
}

TerminalSkipSource::~TerminalSkipSource() {
  if (restore_) ::tcsetattr(fd_, TCSANOW, &saved_->attributes);
}

bool TerminalSkipSource::wait_until(std::chrono::steady_clock::time_point deadline) {
  using namespace std::chrono;
  if (!restore_) {
    std::this_thread::sleep_until(deadline);
    return false;
  }
  while (true) {
    const auto remaining = duration_cast<milliseconds>(deadline - steady_clock::now());
    if (remaining.count() <= 0) return false;
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(remaining.count()));
    if (ready <= 0) continue;
    char key = 0;
    if (::read(fd_, &key, 1) == 1 && (key == '\n' || key == '\r' || key == ' ')) return true;
  }
}

bool typewriter_print(const RenderedText& text, std::ostream& out, const TypewriterOptions& options, SkipSource* skip) {
  using clock = std::chrono::steady_clock;
  auto deadline = clock::now();
  bool skipped = false;
  StyleSet current;
  for (const auto& segment : text.segments) {
    if (options.colors) switch_style(out, current, segment.style);
    out << segment.text;
    if (!options.delays || skipped) continue;
    out.flush();
    deadline += segment.post_delay;
    if (skip) {
      skipped = skip->wait_until(deadline);
    } else {
      std::this_thread::sleep_until(deadline);
    }
  }
  if (options.colors) switch_style(out, current, StyleSet{});
  out.flush();
  return skipped;
}

}  // namespace ta
