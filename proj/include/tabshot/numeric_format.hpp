#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace tabshot {

/// Rounds a decimal string (optionally signed, optionally with an exponent) to at
/// most `fractional_digits` digits after the point, half away from zero, working on
/// the digits directly so no binary floating-point rounding is involved. Trailing
/// zeros are trimmed. When `keep_point` is set at least one fractional digit is
/// kept ("1201.0"); otherwise integral results are bare ("1201").
/// Returns nullopt when `text` is not a finite decimal literal.
std::optional<std::string> format_decimal(std::string_view text, int fractional_digits,
                                          bool keep_point);

/// Shortest round-trip decimal text for a finite double.
std::string shortest_decimal(double value);

}  // namespace tabshot
