#include "fairlens/text.hpp"

#include <cctype>

namespace fairlens::text {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '-' || c == '_';
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    std::string_view line = s.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  if (from.empty()) return s;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

bool contains_word(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  const std::string h = to_lower(haystack);
  const std::string n = to_lower(needle);
  std::size_t pos = 0;
  while ((pos = h.find(n, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(h[pos - 1]);
    const std::size_t end = pos + n.size();
    const bool right_ok = end == h.size() || !is_word_char(h[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

std::string strip_article(std::string_view phrase) {
  std::string p = trim(phrase);
  const std::string lower = to_lower(p);
  if (lower.rfind("an ", 0) == 0) return trim(std::string_view(p).substr(3));
  if (lower.rfind("a ", 0) == 0) return trim(std::string_view(p).substr(2));
  return p;
}

std::string indefinite_article(std::string_view next_word) {
  if (next_word.empty()) return "a";
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(next_word.front())));
  return (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
}

std::string with_article(std::string_view noun) {
  return indefinite_article(noun) + " " + std::string(noun);
}

std::string capitalize_first(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::string title_case(std::string_view s) {
  std::string out(s);
  bool start = true;
  for (char& c : out) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      if (start) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      start = false;
    } else {
      start = c == ' ' || c == '-';
    }
  }
  return out;
}

std::string slug(std::string_view s) {
  std::string out;
  bool dash = false;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      if (dash && !out.empty()) out += '-';
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      dash = false;
    } else {
      dash = true;
    }
  }
  return out;
}

}  // namespace fairlens::text
