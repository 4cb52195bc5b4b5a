#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fairlens::text {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

bool contains_word(std::string_view haystack, std::string_view needle);

// "an accountant" -> "accountant"; strings without an article pass through.
std::string strip_article(std::string_view phrase);
// "accountant" -> "an accountant"
std::string with_article(std::string_view noun);
std::string indefinite_article(std::string_view next_word);

std::string capitalize_first(std::string_view s);
std::string title_case(std::string_view s);
std::string slug(std::string_view s);

}  // namespace fairlens::text
