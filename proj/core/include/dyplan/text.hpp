#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dyplan {

// Unicode-aware text helpers shared by scoring and indexing. All inputs are UTF-8;
// invalid sequences are replaced with U+FFFD.

std::string to_lower(std::string_view text);

// Drops every code point in the Unicode punctuation categories (Pc Pd Ps Pe Pi Pf Po).
std::string strip_punctuation(std::string_view text);

// Splits on Unicode white space. Never returns empty tokens.
std::vector<std::string> split_whitespace(std::string_view text);

std::size_t whitespace_token_count(std::string_view text);

// ASCII-whitespace trim; enough for model outputs and config values.
std::string_view trim(std::string_view text);

bool iequals_ascii(std::string_view a, std::string_view b);

// Position of `needle` in `haystack` ignoring ASCII case, or npos.
std::size_t ifind_ascii(std::string_view haystack, std::string_view needle, std::size_t from = 0);

std::vector<std::string> split(std::string_view text, char sep);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace dyplan
