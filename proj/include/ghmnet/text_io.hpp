#pragma once

#include <charconv>
#include <cmath>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ghmnet/error.hpp"

namespace ghmnet {

/// Shortest decimal representation that parses back to the same double.
inline std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error(ErrorCode::io, "failed to format double");
  return std::string(buf, ptr);
}

/// Locale-independent strict parse; the whole token must be consumed.
inline double parse_double(std::string_view token) {
  if (token == "inf") return INFINITY;
  if (token == "-inf") return -INFINITY;
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw Error(ErrorCode::parse, "not a number: '" + std::string(token) + "'");
  return value;
}

inline long long parse_int(std::string_view token) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw Error(ErrorCode::parse, "not an integer: '" + std::string(token) + "'");
  return value;
}

/// Reads whitespace-separated tokens line by line, skipping blank lines and
/// '#' comments.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  /// Next non-empty line split into tokens; empty when the stream is exhausted.
  std::vector<std::string> next_line() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_number_;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      std::vector<std::string> tokens;
      for (std::string tok; ss >> tok;) tokens.push_back(tok);
      if (!tokens.empty()) return tokens;
    }
    return {};
  }

  std::vector<std::string> expect_line(const std::string& context) {
    auto tokens = next_line();
    if (tokens.empty()) fail("unexpected end of input while reading " + context);
    return tokens;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::parse, "line " + std::to_string(line_number_) + ": " + what);
  }

  int line_number() const { return line_number_; }

 private:
  std::istream& in_;
  int line_number_ = 0;
};

}  // namespace ghmnet
