#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fairlens {

enum class Dimension { Gender, Age, Ethnicity };

std::string_view to_string(Dimension d);
Dimension parse_dimension(std::string_view name);  // throws InvalidDimension

struct WordGroup {
  std::string name;
  std::vector<std::string> words;  // lowercase; may contain multi-word phrases
};

// Demographic word lists used to scan decoded and rewritten text, plus the
// male/female concept word sets used for embedding association.
class WordCategoryLexicon {
 public:
  WordCategoryLexicon() = default;

  static const WordCategoryLexicon& default_lexicon();
  static WordCategoryLexicon from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  const std::vector<WordGroup>& groups(Dimension d) const;
  const std::vector<std::string>& male_concepts() const { return male_concepts_; }
  const std::vector<std::string>& female_concepts() const { return female_concepts_; }

  // Match counts per group of `d` in one text. Matching is case-insensitive
  // over whole words, scanning left to right and preferring the longest entry
  // at each position, so "old man" is consumed before "man" can match. An
  // entry listed in several groups counts once for each of them.
  std::map<std::string, std::size_t> count(std::string_view text, Dimension d) const;

  // Entries of `d` found in `text`, in order of appearance.
  std::vector<std::string> matches(std::string_view text, Dimension d) const;

 private:
  void validate() const;

  std::map<Dimension, std::vector<WordGroup>> groups_;
  std::vector<std::string> male_concepts_;
  std::vector<std::string> female_concepts_;
};

}  // namespace fairlens
