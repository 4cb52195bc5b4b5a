#include "fairlens/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "fairlens/assets.hpp"
#include "fairlens/error.hpp"
#include "fairlens/text.hpp"

namespace fairlens {

namespace {

struct Token {
  std::size_t begin;
  std::size_t end;
  std::string text;
};

bool is_token_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
}

std::vector<Token> tokenize(const std::string& lower) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < lower.size()) {
    if (!is_token_char(lower[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < lower.size() && is_token_char(lower[j])) ++j;
    tokens.push_back({i, j, lower.substr(i, j - i)});
    i = j;
  }
  return tokens;
}

std::vector<std::string> split_words(const std::string& entry) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < entry.size()) {
    while (i < entry.size() && entry[i] == ' ') ++i;
    std::size_t j = i;
    while (j < entry.size() && entry[j] != ' ') ++j;
    if (j > i) words.push_back(entry.substr(i, j - i));
    i = j;
  }
  return words;
}

bool whitespace_only(const std::string& s, std::size_t begin, std::size_t end) {
  for (std::size_t k = begin; k < end; ++k) {
    if (!std::isspace(static_cast<unsigned char>(s[k]))) return false;
  }
  return true;
}

// Length in tokens of `words` matched at tokens[i], or 0.
std::size_t match_at(const std::string& lower, const std::vector<Token>& tokens, std::size_t i,
                     const std::vector<std::string>& words) {
  if (i + words.size() > tokens.size()) return 0;
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (tokens[i + k].text != words[k]) return 0;
    if (k > 0 && !whitespace_only(lower, tokens[i + k - 1].end, tokens[i + k].begin)) return 0;
  }
  return words.size();
}

struct Scan {
  std::vector<std::string> entries;  // matched entries in order
};

Scan scan(std::string_view text, const std::vector<WordGroup>& groups) {
  std::set<std::string> unique;
  for (const auto& g : groups) unique.insert(g.words.begin(), g.words.end());
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;
  for (const auto& e : unique) entries.emplace_back(e, split_words(e));
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second.size() > b.second.size();
  });

  const std::string lower = text::to_lower(text);
  const auto tokens = tokenize(lower);
  Scan result;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t advance = 0;
    for (const auto& [entry, words] : entries) {
      if (match_at(lower, tokens, i, words) > 0) {
        result.entries.push_back(entry);
        advance = words.size();
        break;
      }
    }
    i += advance > 0 ? advance : 1;
  }
  return result;
}

}  // namespace

std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::Gender: return "gender";
    case Dimension::Age: return "age";
    case Dimension::Ethnicity: return "ethnicity";
  }
  return "gender";
}

Dimension parse_dimension(std::string_view name) {
  const std::string n = text::to_lower(name);
  if (n == "gender") return Dimension::Gender;
  if (n == "age") return Dimension::Age;
  if (n == "ethnicity") return Dimension::Ethnicity;
  throw Error(ErrorCode::InvalidDimension, "unknown dimension '" + std::string(name) + "'");
}

const WordCategoryLexicon& WordCategoryLexicon::default_lexicon() {
  static const WordCategoryLexicon lexicon =
      from_json(nlohmann::json::parse(assets::raw("lexicon.json")));
  return lexicon;
}

WordCategoryLexicon WordCategoryLexicon::from_json(const nlohmann::json& doc) {
  WordCategoryLexicon lex;
  for (const auto& [dim_name, groups] : doc.at("dimensions").items()) {
    auto& out = lex.groups_[parse_dimension(dim_name)];
    for (const auto& g : groups) {
      WordGroup group{g.at("group").get<std::string>(), {}};
      for (const auto& w : g.at("words")) group.words.push_back(text::to_lower(text::trim(w.get<std::string>())));
      out.push_back(std::move(group));
    }
  }
  if (doc.contains("concepts")) {
    lex.male_concepts_ = doc["concepts"].at("male").get<std::vector<std::string>>();
    lex.female_concepts_ = doc["concepts"].at("female").get<std::vector<std::string>>();
  }
  lex.validate();
  return lex;
}

nlohmann::json WordCategoryLexicon::to_json() const {
  nlohmann::json doc;
  for (const auto& [dim, groups] : groups_) {
    auto& arr = doc["dimensions"][std::string(to_string(dim))];
    arr = nlohmann::json::array();
    for (const auto& g : groups) arr.push_back({{"group", g.name}, {"words", g.words}});
  }
  doc["concepts"] = {{"male", male_concepts_}, {"female", female_concepts_}};
  return doc;
}

void WordCategoryLexicon::validate() const {
  for (const auto& [dim, groups] : groups_) {
    for (const auto& g : groups) {
      std::set<std::string> seen;
      for (const auto& w : g.words) {
        if (w.empty()) throw Error(ErrorCode::InvalidInput, "empty word in group " + g.name);
        if (!seen.insert(w).second) {
          throw Error(ErrorCode::InvalidInput, "duplicate word '" + w + "' in group " + g.name);
        }
      }
    }
  }
}

const std::vector<WordGroup>& WordCategoryLexicon::groups(Dimension d) const {
  auto it = groups_.find(d);
  if (it == groups_.end()) {
    throw Error(ErrorCode::InvalidDimension,
                "lexicon has no groups for '" + std::string(to_string(d)) + "'");
  }
  return it->second;
}

std::map<std::string, std::size_t> WordCategoryLexicon::count(std::string_view text, Dimension d) const {
  const auto& gs = groups(d);
  std::map<std::string, std::size_t> counts;
  for (const auto& g : gs) counts[g.name] = 0;
  for (const auto& entry : scan(text, gs).entries) {
    for (const auto& g : gs) {
      if (std::find(g.words.begin(), g.words.end(), entry) != g.words.end()) ++counts[g.name];
    }
  }
  return counts;
}

std::vector<std::string> WordCategoryLexicon::matches(std::string_view text, Dimension d) const {
  return scan(text, groups(d)).entries;
}

}  // namespace fairlens
