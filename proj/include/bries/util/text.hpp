#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace bries::util {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Lowercases, maps every non-alphanumeric byte to a space, collapses runs of
/// whitespace and trims. "Exaggeration/Minimisation" -> "exaggeration minimisation".
std::string canonicalize(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Lowercase alphanumeric word tokens (apostrophes inside a word are dropped,
/// so "don't" -> "dont").
std::vector<std::string> word_tokens(std::string_view s);

std::size_t levenshtein(std::string_view a, std::string_view b);

/// Levenshtein distance divided by the longer length; 0 for two empty strings.
double normalized_levenshtein(std::string_view a, std::string_view b);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

/// Fixed-point representation with `digits` decimals; "-0.000000" is
/// normalized to "0.000000".
std::string format_fixed(double v, int digits);

bool starts_with_ci(std::string_view s, std::string_view prefix);

}  // namespace bries::util
