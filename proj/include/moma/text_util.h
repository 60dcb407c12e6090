#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace moma::text {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool starts_with_ci(std::string_view s, std::string_view prefix);
// Case-insensitive (ASCII) substring search; npos when absent.
std::size_t ifind(std::string_view haystack, std::string_view needle,
                  std::size_t from = 0);
bool icontains(std::string_view haystack, std::string_view needle);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string replace_all(std::string s, std::string_view from, std::string_view to);
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);
// Lowercase, ASCII punctuation dropped, whitespace runs collapsed to one
// space. Bytes >= 0x80 are kept as-is.
std::string normalize(std::string_view s);
// ASCII letter/digit/underscore or any non-ASCII byte.
bool is_word_byte(unsigned char c);
std::string read_file(const std::string& path);

}  // namespace moma::text
