#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace memesearch {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

// Shortest round-trip text in fixed notation; integral values keep a
// trailing ".0" ("1.0", "0.0001").
std::string format_decimal(double value);

// Parses a full token as a double; accepts "nan"/"inf" spellings so callers
// can reject them with a precise error. Returns nullopt on malformed text.
std::optional<double> parse_double(std::string_view token);

std::optional<long long> parse_integer(std::string_view token);

}  // namespace memesearch
