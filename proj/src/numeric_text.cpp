#include "memesearch/numeric_text.hpp"

#include <array>
#include <charconv>
#include <cmath>

namespace memesearch {

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

std::string format_decimal(double value) {
  if (!std::isfinite(value)) return format_double(value);
  std::array<char, 400> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value,
                                 std::chars_format::fixed);
  std::string s(buf.data(), end);
  if (s.find('.') == std::string::npos) s += ".0";
  return s;
}

std::optional<double> parse_double(std::string_view token) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() ||
      token.empty()) {
    return std::nullopt;
  }
  return value;
}

std::optional<long long> parse_integer(std::string_view token) {
  long long value = 0;
  auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() ||
      token.empty()) {
    return std::nullopt;
  }
  return value;
}

}  // namespace memesearch
